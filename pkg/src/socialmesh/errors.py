"""Exception hierarchy shared by every layer of the package."""


class SocialMeshError(Exception):
    """Base class for all errors raised by socialmesh."""


# overlay
class OverlayError(SocialMeshError):
    pass


class EmptyOverlay(OverlayError):
    pass


class RoutingStuck(OverlayError):
    """No neighbor strictly reduces the distance to the key.

    This means the ring invariant is broken; it is never papered over.
    """


class IdCollision(OverlayError):
    pass


class BootstrapUnreachable(OverlayError):
    pass


class UnknownNode(OverlayError):
    pass


# dht
class ValueTooLarge(SocialMeshError):
    pass


# identity / encoding
class InvalidPublicInfo(SocialMeshError):
    pass


class StringTooLong(SocialMeshError):
    pass


class DecodeError(SocialMeshError):
    pass


class DecryptionError(SocialMeshError):
    pass


# access control
class NotAuthorized(SocialMeshError):
    pass


class Revoked(NotAuthorized):
    """A credential was presented whose hash appears in a valid revocation."""


class NoActivePeers(SocialMeshError):
    pass


class NotOwner(SocialMeshError):
    pass


class InvalidRequest(SocialMeshError):
    pass


# simulation / config
class InvalidConfig(SocialMeshError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.violations))
