"""Pluggable crypto providers.

``TestCryptoProvider`` is byte-reproducible and deliberately NOT secure:
anyone holding a public key can forge signatures and read ciphertexts made
for it.  It exists so protocol logic can be tested against exact bytes.
``RealCryptoProvider`` uses Ed25519 signatures and X25519 + HKDF + AES-GCM.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import random
from typing import Optional, Protocol

from .errors import DecryptionError

HASH_LEN = 32
SYM_KEY_LEN = 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _rand_bytes(rng: Optional[random.Random], n: int) -> bytes:
    if rng is None:
        return os.urandom(n)
    return rng.getrandbits(8 * n).to_bytes(n, "big")


class CryptoProvider(Protocol):
    name: str

    def hash(self, data: bytes) -> bytes: ...

    def generate_keypair(self, rng: Optional[random.Random] = None) -> tuple[bytes, bytes]: ...

    def public_key(self, private_key: bytes) -> bytes: ...

    def sign(self, private_key: bytes, data: bytes) -> bytes: ...

    def verify(self, public_key: bytes, data: bytes, signature: bytes) -> bool: ...

    def pk_encrypt(self, public_key: bytes, plaintext: bytes, rng: Optional[random.Random] = None) -> bytes: ...

    def pk_decrypt(self, private_key: bytes, ciphertext: bytes) -> bytes: ...

    def generate_symmetric_key(self, rng: Optional[random.Random] = None) -> bytes: ...

    def sym_encrypt(self, key: bytes, plaintext: bytes, rng: Optional[random.Random] = None) -> bytes: ...

    def sym_decrypt(self, key: bytes, ciphertext: bytes) -> bytes: ...


def _keystream(seed: bytes, n: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < n:
        out += sha256(seed + counter.to_bytes(8, "big"))
        counter += 1
    return bytes(out[:n])


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


class TestCryptoProvider:
    """Deterministic hash-based stand-ins for signatures and encryption."""

    name = "test"
    __test__ = False  # not a pytest class

    def hash(self, data: bytes) -> bytes:
        return sha256(data)

    def generate_keypair(self, rng: Optional[random.Random] = None) -> tuple[bytes, bytes]:
        private = _rand_bytes(rng, 32)
        return private, self.public_key(private)

    def public_key(self, private_key: bytes) -> bytes:
        return sha256(b"test-pub" + private_key)

    def sign(self, private_key: bytes, data: bytes) -> bytes:
        return sha256(b"test-sig" + self.public_key(private_key) + data)

    def verify(self, public_key: bytes, data: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(sha256(b"test-sig" + public_key + data), signature)

    def pk_encrypt(self, public_key: bytes, plaintext: bytes, rng: Optional[random.Random] = None) -> bytes:
        tag = sha256(b"test-pke-tag" + public_key)[:8]
        return tag + _xor(plaintext, _keystream(b"test-pke" + public_key, len(plaintext)))

    def pk_decrypt(self, private_key: bytes, ciphertext: bytes) -> bytes:
        public = self.public_key(private_key)
        if len(ciphertext) < 8 or ciphertext[:8] != sha256(b"test-pke-tag" + public)[:8]:
            raise DecryptionError("ciphertext not addressed to this key")
        body = ciphertext[8:]
        return _xor(body, _keystream(b"test-pke" + public, len(body)))

    def generate_symmetric_key(self, rng: Optional[random.Random] = None) -> bytes:
        return _rand_bytes(rng, SYM_KEY_LEN)

    # unauthenticated stream cipher: integrity is the envelope's job
    def sym_encrypt(self, key: bytes, plaintext: bytes, rng: Optional[random.Random] = None) -> bytes:
        return _xor(plaintext, _keystream(b"test-sym" + key, len(plaintext)))

    def sym_decrypt(self, key: bytes, ciphertext: bytes) -> bytes:
        return _xor(ciphertext, _keystream(b"test-sym" + key, len(ciphertext)))


class RealCryptoProvider:
    """Ed25519 signatures; hybrid X25519/HKDF/AES-256-GCM public-key encryption.

    Public keys are 64 bytes: the Ed25519 verify key followed by the X25519
    key.  Private keys are the two 32-byte seeds in the same order.  Passing
    an ``rng`` makes key and nonce generation reproducible, which is only
    appropriate in simulation.
    """

    name = "real"

    def __init__(self):
        from cryptography.hazmat.primitives.asymmetric import ed25519, x25519
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM

        self._ed = ed25519
        self._x = x25519
        self._aesgcm = AESGCM

    def hash(self, data: bytes) -> bytes:
        return sha256(data)

    def generate_keypair(self, rng: Optional[random.Random] = None) -> tuple[bytes, bytes]:
        private = _rand_bytes(rng, 64)
        return private, self.public_key(private)

    def public_key(self, private_key: bytes) -> bytes:
        from cryptography.hazmat.primitives import serialization

        raw = serialization.Encoding.Raw, serialization.PublicFormat.Raw
        ed = self._ed.Ed25519PrivateKey.from_private_bytes(private_key[:32]).public_key()
        xk = self._x.X25519PrivateKey.from_private_bytes(private_key[32:64]).public_key()
        return ed.public_bytes(*raw) + xk.public_bytes(*raw)

    def sign(self, private_key: bytes, data: bytes) -> bytes:
        return self._ed.Ed25519PrivateKey.from_private_bytes(private_key[:32]).sign(data)

    def verify(self, public_key: bytes, data: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature

        try:
            self._ed.Ed25519PublicKey.from_public_bytes(public_key[:32]).verify(signature, data)
        except (InvalidSignature, ValueError):
            return False
        return True

    def _kdf(self, shared: bytes, eph_pub: bytes, recipient: bytes) -> bytes:
        from cryptography.hazmat.primitives import hashes
        from cryptography.hazmat.primitives.kdf.hkdf import HKDF

        return HKDF(hashes.SHA256(), 32, salt=None, info=b"socialmesh-pke" + eph_pub + recipient).derive(shared)

    def pk_encrypt(self, public_key: bytes, plaintext: bytes, rng: Optional[random.Random] = None) -> bytes:
        from cryptography.hazmat.primitives import serialization

        recipient = self._x.X25519PublicKey.from_public_bytes(public_key[32:64])
        eph = self._x.X25519PrivateKey.from_private_bytes(_rand_bytes(rng, 32))
        eph_pub = eph.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        key = self._kdf(eph.exchange(recipient), eph_pub, public_key[32:64])
        nonce = _rand_bytes(rng, 12)
        return eph_pub + nonce + self._aesgcm(key).encrypt(nonce, plaintext, None)

    def pk_decrypt(self, private_key: bytes, ciphertext: bytes) -> bytes:
        from cryptography.exceptions import InvalidTag

        if len(ciphertext) < 32 + 12 + 16:
            raise DecryptionError("ciphertext too short")
        eph_pub, nonce, body = ciphertext[:32], ciphertext[32:44], ciphertext[44:]
        priv = self._x.X25519PrivateKey.from_private_bytes(private_key[32:64])
        own_pub = self.public_key(private_key)[32:64]
        key = self._kdf(priv.exchange(self._x.X25519PublicKey.from_public_bytes(eph_pub)), eph_pub, own_pub)
        try:
            return self._aesgcm(key).decrypt(nonce, body, None)
        except InvalidTag as exc:
            raise DecryptionError("authentication failed") from exc

    def generate_symmetric_key(self, rng: Optional[random.Random] = None) -> bytes:
        return _rand_bytes(rng, SYM_KEY_LEN)

    def sym_encrypt(self, key: bytes, plaintext: bytes, rng: Optional[random.Random] = None) -> bytes:
        nonce = _rand_bytes(rng, 12)
        return nonce + self._aesgcm(key).encrypt(nonce, plaintext, None)

    def sym_decrypt(self, key: bytes, ciphertext: bytes) -> bytes:
        from cryptography.exceptions import InvalidTag

        if len(ciphertext) < 12 + 16:
            raise DecryptionError("ciphertext too short")
        try:
            return self._aesgcm(key).decrypt(ciphertext[:12], ciphertext[12:], None)
        except InvalidTag as exc:
            raise DecryptionError("authentication failed") from exc


TEST_PROVIDER = TestCryptoProvider()


def get_provider(name: str) -> CryptoProvider:
    if name == "test":
        return TEST_PROVIDER
    if name == "real":
        return RealCryptoProvider()
    raise ValueError(f"unknown crypto provider {name!r}")
