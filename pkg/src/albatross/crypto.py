"""Per-edge secrets: shared keys, counter-mode keystreams and key agreement.

A keystream is the AES-128 image of six 16-byte blocks under the edge key::

    byte 0      direction bit
    bytes 1-8   counter, big-endian
    bytes 9-14  zero
    byte 15     block index j

Block 0 gives the rotation parameter, blocks 1-2 the masking vector, block 3
the 64-bit location mask, block 4 the second mask and block 5 the two pads
that hide the protocol bits.
"""

from __future__ import annotations

import secrets
import threading
from typing import NamedTuple, Union

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import KeyAgreementFailure
from .field import P, Vector2

KEY_BYTES = 16
MASK64 = (1 << 64) - 1
CTR_MAX = (1 << 64) - 1
_BLOCKS = 6
_ECB = modes.ECB()
_BLOCK_INDEX = [bytes([j]) for j in range(_BLOCKS)]
_KDF_INFO = b"albatross edge key v1"


class SharedKey:
    """16-byte symmetric key shared by the two ends of one contact edge."""

    __slots__ = ("raw", "_encryptor", "_lock")

    def __init__(self, raw: bytes):
        raw = bytes(raw)
        if len(raw) != KEY_BYTES:
            raise ValueError(f"shared key must be {KEY_BYTES} bytes, got {len(raw)}")
        self.raw = raw
        self._encryptor = None
        self._lock = threading.Lock()

    @classmethod
    def generate(cls) -> SharedKey:
        return cls(secrets.token_bytes(KEY_BYTES))

    @classmethod
    def from_hex(cls, text: str) -> SharedKey:
        if len(text) != 2 * KEY_BYTES or text != text.lower():
            raise ValueError("shared key must be 32 lowercase hex digits")
        return cls(bytes.fromhex(text))

    def hex(self) -> str:
        return self.raw.hex()

    def encrypt_blocks(self, data: bytes) -> bytes:
        # ECB over independent blocks is stateless, so one encryptor is reused.
        with self._lock:
            if self._encryptor is None:
                self._encryptor = Cipher(algorithms.AES(self.raw), _ECB).encryptor()
            return self._encryptor.update(data)

    def __eq__(self, other):
        return isinstance(other, SharedKey) and secrets.compare_digest(self.raw, other.raw)

    def __hash__(self):
        return hash(self.raw)

    def __repr__(self):
        return "SharedKey(<redacted>)"


class Keystream(NamedTuple):
    t: int
    s: Vector2
    k1: int
    k2: int
    padbits: tuple[int, int]


def derive_keystream(key: SharedKey, direction: int, ctr: int) -> Keystream:
    if direction not in (0, 1):
        raise ValueError("direction must be 0 or 1")
    if not 0 <= ctr <= CTR_MAX:
        raise ValueError("counter must fit in 64 bits")
    prefix = bytes([direction]) + ctr.to_bytes(8, "big") + bytes(6)
    stream = key.encrypt_blocks(b"".join([prefix + j for j in _BLOCK_INDEX]))
    block = int.from_bytes
    return Keystream(
        t=block(stream[0:16], "big") % P,
        s=Vector2(block(stream[16:32], "big") % P, block(stream[32:48], "big") % P),
        k1=block(stream[48:56], "big"),
        k2=block(stream[64:80], "big") % P,
        padbits=(stream[95] & 1, (stream[95] >> 1) & 1),
    )


def mask64(x: int, k1: int) -> int:
    return (x ^ k1) & MASK64


def initial_counter() -> int:
    """Random 32-bit starting counter with its top bit set.

    Keeping the top bit set makes every counter print with the same number
    of decimal digits, so counters do not vary in length on the wire.
    """
    return (1 << 31) | secrets.randbits(31)


class IdentityKey:
    """Long-term X25519 key pair of one user."""

    def __init__(self, private: X25519PrivateKey | None = None):
        self.private = private or X25519PrivateKey.generate()

    @classmethod
    def from_hex(cls, text: str) -> IdentityKey:
        return cls(X25519PrivateKey.from_private_bytes(bytes.fromhex(text)))

    def private_hex(self) -> str:
        return self.private.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        ).hex()

    def public_bytes(self) -> bytes:
        return self.private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def public_hex(self) -> str:
        return self.public_bytes().hex()


def key_agree(
    own_private: Union[IdentityKey, X25519PrivateKey],
    peer_public: Union[bytes, str, None] = None,
    *,
    preshared: Union[bytes, str, None] = None,
) -> SharedKey:
    """Derive the edge key from a Diffie-Hellman exchange.

    When ``preshared`` is given the DH step is skipped and the injected key
    is returned as-is; test harnesses use this to provision edges directly.
    """
    if preshared is not None:
        raw = bytes.fromhex(preshared) if isinstance(preshared, str) else preshared
        return SharedKey(raw)
    if isinstance(own_private, IdentityKey):
        own_private = own_private.private
    try:
        if isinstance(peer_public, str):
            peer_public = bytes.fromhex(peer_public)
        if not isinstance(peer_public, (bytes, bytearray)) or len(peer_public) != 32:
            raise ValueError("peer public key must be 32 bytes")
        secret = own_private.exchange(X25519PublicKey.from_public_bytes(bytes(peer_public)))
    except ValueError as exc:
        raise KeyAgreementFailure(str(exc)) from exc
    raw = HKDF(algorithm=hashes.SHA256(), length=KEY_BYTES, salt=None, info=_KDF_INFO).derive(secret)
    return SharedKey(raw)
