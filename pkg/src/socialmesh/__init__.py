"""socialmesh: a friend-to-friend social network over structured P2P overlays.

A public directory overlay handles discovery, friendship mailboxes and
bootstrap lists.  Each user owns a private profile overlay whose members are
the user's friends, admitted with owner-signed certificates.
"""

from . import crypto, dht, directory, encoding, errors, identity, network, overlay, profile
from .crypto import TEST_PROVIDER, RealCryptoProvider, TestCryptoProvider, get_provider
from .dht import Clock, Dht
from .errors import *  # noqa: F401,F403
from .identity import Certificate, Identity, PublicInfo
from .network import SocialNetwork, User
from .overlay import Overlay, OverlayId

__version__ = "0.1.0"
