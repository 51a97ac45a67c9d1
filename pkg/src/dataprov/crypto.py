"""Pluggable hashing, signatures and public-key encryption.

Two profiles share one interface:

``TestCrypto``
    Deterministic and fast. Keys derive from a 32-byte seed, encryption
    uses a SHAKE-256 keystream with an authentication tag, and signatures
    are keyed digests. It is *not* unforgeable and exists so that
    simulations at scale are reproducible bit for bit.

``RealCrypto``
    Ed25519 signatures and X25519/HKDF/AES-GCM sealed boxes from the
    ``cryptography`` package.

Both profiles hash with SHA-256 and derive addresses as the first 20
bytes of the hash of the public key.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import DecryptError, MalformedKeyError

DIGEST_SIZE = 32
ADDRESS_SIZE = 20
SEED_SIZE = 32


@dataclass(frozen=True)
class Digest:
    bytes: bytes

    def __post_init__(self):
        if len(self.bytes) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(self.bytes)}")

    def hex(self) -> str:
        return self.bytes.hex()

    @classmethod
    def zero(cls) -> "Digest":
        return cls(b"\x00" * DIGEST_SIZE)


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)
    address: bytes

    def to_hex(self) -> dict:
        return {"public_key": self.public_key.hex(), "private_key": self.private_key.hex()}


@dataclass(frozen=True)
class Signature:
    bytes: bytes
    signer_address: bytes


@dataclass(frozen=True)
class Ciphertext:
    bytes: bytes
    recipient_hint: Optional[bytes] = None


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def address_of(public_key: bytes) -> bytes:
    return sha256(public_key)[:ADDRESS_SIZE]


def _xor(a: bytes, b: bytes) -> bytes:
    if not a:
        return b""
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


class CryptoProfile:
    name = "abstract"
    public_key_size = 0

    def hash(self, data: bytes) -> Digest:
        return Digest(sha256(bytes(data)))

    def address(self, public_key: bytes) -> bytes:
        return address_of(public_key)

    def keypair_from_seed(self, seed: bytes) -> KeyPair:
        raise NotImplementedError

    def generate_keypair(self, rng=None) -> KeyPair:
        """New key pair; ``rng`` (``random.Random``-like) makes it reproducible."""
        seed = rng.randbytes(SEED_SIZE) if rng is not None else os.urandom(SEED_SIZE)
        return self.keypair_from_seed(seed)

    def keypair_from_hex(self, private_hex: str) -> KeyPair:
        try:
            seed = bytes.fromhex(private_hex)
        except (ValueError, TypeError) as exc:
            raise MalformedKeyError(f"private key is not hex: {exc}") from None
        return self.keypair_from_seed(seed)

    def sign(self, key: KeyPair, message: bytes) -> Signature:
        raise NotImplementedError

    def verify(self, public_key: bytes, message: bytes, sig: Signature) -> bool:
        raise NotImplementedError

    def encrypt(self, recipient_public_key: bytes, payload: bytes) -> Ciphertext:
        raise NotImplementedError

    def decrypt(self, private_key: bytes, c: Ciphertext) -> bytes:
        raise NotImplementedError

    def _check_seed(self, seed):
        if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_SIZE:
            raise MalformedKeyError("private key must be 32 bytes")

    def _check_keypair(self, key):
        if not isinstance(key, KeyPair):
            raise MalformedKeyError("expected a KeyPair")
        self._check_seed(key.private_key)
        if key.public_key != self.keypair_from_seed(key.private_key).public_key:
            raise MalformedKeyError("public key does not match private key")


class TestCrypto(CryptoProfile):
    name = "test"
    public_key_size = 32
    __test__ = False  # keep pytest from collecting this class

    _TAG = 16
    _NONCE = 16

    def _public_from_seed(self, seed: bytes) -> bytes:
        return sha256(b"dataprov/test/pub" + seed)

    def keypair_from_seed(self, seed: bytes) -> KeyPair:
        self._check_seed(seed)
        pub = self._public_from_seed(bytes(seed))
        return KeyPair(public_key=pub, private_key=bytes(seed), address=address_of(pub))

    def sign(self, key: KeyPair, message: bytes) -> Signature:
        self._check_keypair(key)
        mac = sha256(b"dataprov/test/sig" + key.public_key + bytes(message))
        return Signature(mac, key.address)

    def verify(self, public_key: bytes, message: bytes, sig: Signature) -> bool:
        try:
            if len(public_key) != self.public_key_size:
                return False
            if sig.signer_address != address_of(public_key):
                return False
            return sha256(b"dataprov/test/sig" + bytes(public_key) + bytes(message)) == sig.bytes
        except (TypeError, AttributeError):
            return False

    def _keystream(self, public_key: bytes, nonce: bytes, n: int) -> bytes:
        return hashlib.shake_256(b"dataprov/test/ks" + public_key + nonce).digest(n) if n else b""

    def _tag(self, public_key, nonce, body):
        return sha256(b"dataprov/test/tag" + public_key + nonce + body)[: self._TAG]

    def encrypt(self, recipient_public_key: bytes, payload: bytes) -> Ciphertext:
        if len(recipient_public_key) != self.public_key_size:
            raise MalformedKeyError("recipient public key must be 32 bytes")
        payload = bytes(payload)
        # deterministic nonce keeps simulations bit-identical
        nonce = sha256(b"dataprov/test/nonce" + recipient_public_key + payload)[: self._NONCE]
        body = _xor(payload, self._keystream(recipient_public_key, nonce, len(payload)))
        return Ciphertext(nonce + body + self._tag(recipient_public_key, nonce, body))

    def decrypt(self, private_key: bytes, c: Ciphertext) -> bytes:
        self._check_seed(private_key)
        raw = c.bytes
        if len(raw) < self._NONCE + self._TAG:
            raise DecryptError("ciphertext too short")
        pub = self._public_from_seed(bytes(private_key))
        nonce, body, tag = raw[: self._NONCE], raw[self._NONCE : -self._TAG], raw[-self._TAG :]
        if self._tag(pub, nonce, body) != tag:
            raise DecryptError("authentication tag mismatch")
        return _xor(body, self._keystream(pub, nonce, len(body)))


class RealCrypto(CryptoProfile):
    """Ed25519 + X25519 sealed boxes. Public key = ed25519 (32B) || x25519 (32B)."""

    name = "real"
    public_key_size = 64

    def __init__(self):
        from cryptography.hazmat.primitives.asymmetric import ed25519, x25519
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM

        self._ed = ed25519
        self._x = x25519
        self._aead = AESGCM

    def _raw_public(self, key) -> bytes:
        from cryptography.hazmat.primitives import serialization

        return key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def _x_private(self, seed):
        return self._x.X25519PrivateKey.from_private_bytes(sha256(b"dataprov/x25519" + seed))

    def keypair_from_seed(self, seed: bytes) -> KeyPair:
        self._check_seed(seed)
        seed = bytes(seed)
        ed_pub = self._raw_public(self._ed.Ed25519PrivateKey.from_private_bytes(seed))
        x_pub = self._raw_public(self._x_private(seed))
        pub = ed_pub + x_pub
        return KeyPair(public_key=pub, private_key=seed, address=address_of(pub))

    def sign(self, key: KeyPair, message: bytes) -> Signature:
        self._check_keypair(key)
        sk = self._ed.Ed25519PrivateKey.from_private_bytes(key.private_key)
        return Signature(sk.sign(bytes(message)), key.address)

    def verify(self, public_key: bytes, message: bytes, sig: Signature) -> bool:
        from cryptography.exceptions import InvalidSignature

        try:
            if len(public_key) != self.public_key_size:
                return False
            if sig.signer_address != address_of(public_key):
                return False
            pk = self._ed.Ed25519PublicKey.from_public_bytes(bytes(public_key[:32]))
            pk.verify(sig.bytes, bytes(message))
            return True
        except (InvalidSignature, ValueError, TypeError, AttributeError):
            return False

    def _box_key(self, shared, eph_pub, recipient_pub):
        from cryptography.hazmat.primitives import hashes
        from cryptography.hazmat.primitives.kdf.hkdf import HKDF

        return HKDF(
            algorithm=hashes.SHA256(), length=32, salt=None,
            info=b"dataprov/box" + eph_pub + recipient_pub,
        ).derive(shared)

    def encrypt(self, recipient_public_key: bytes, payload: bytes) -> Ciphertext:
        if len(recipient_public_key) != self.public_key_size:
            raise MalformedKeyError("recipient public key must be 64 bytes")
        x_pub = bytes(recipient_public_key[32:])
        eph = self._x.X25519PrivateKey.generate()
        eph_pub = self._raw_public(eph)
        shared = eph.exchange(self._x.X25519PublicKey.from_public_bytes(x_pub))
        nonce = os.urandom(12)
        body = self._aead(self._box_key(shared, eph_pub, x_pub)).encrypt(nonce, bytes(payload), None)
        return Ciphertext(eph_pub + nonce + body)

    def decrypt(self, private_key: bytes, c: Ciphertext) -> bytes:
        from cryptography.exceptions import InvalidTag

        self._check_seed(private_key)
        raw = c.bytes
        if len(raw) < 32 + 12 + 16:
            raise DecryptError("ciphertext too short")
        xk = self._x_private(bytes(private_key))
        x_pub = self._raw_public(xk)
        eph_pub, nonce, body = raw[:32], raw[32:44], raw[44:]
        try:
            shared = xk.exchange(self._x.X25519PublicKey.from_public_bytes(eph_pub))
            return self._aead(self._box_key(shared, eph_pub, x_pub)).decrypt(nonce, body, None)
        except (InvalidTag, ValueError) as exc:
            raise DecryptError(str(exc) or "authentication failed") from exc


_PROFILES = {"test": TestCrypto, "real": RealCrypto}


def get_profile(name: str = "test") -> CryptoProfile:
    try:
        return _PROFILES[name]()
    except KeyError:
        raise ValueError(f"unknown crypto profile {name!r}; expected one of {sorted(_PROFILES)}")
