"""Sealed user registration for the relay.

The registration record is six ``|``-separated fields sealed to the relay's
long-term X25519 public key: an ephemeral key agreement feeds HKDF, whose
output keys AES-GCM over the record.  Wire form::

    ephemeral public key (32) | nonce (12) | ciphertext + tag
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import DecryptFailure, MalformedRecord

SEPARATOR = "|"
_INFO = b"registration seal v1"
_PUB_LEN = 32
_NONCE_LEN = 12


@dataclass(frozen=True)
class RegistrationRecord:
    caller_sip_id: str
    master_key: bytes
    callee_sip_id: str
    callee_sip_password: str
    upstream_id: str
    upstream_password: str

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not value:
                raise MalformedRecord(f"{f.name} is empty")
            if f.name != "master_key" and SEPARATOR in value:
                raise MalformedRecord(f"{f.name} contains the field separator")

    def to_text(self) -> str:
        return SEPARATOR.join((self.caller_sip_id, self.master_key.hex(), self.callee_sip_id,
                               self.callee_sip_password, self.upstream_id, self.upstream_password))

    @classmethod
    def from_text(cls, text: str) -> "RegistrationRecord":
        parts = text.split(SEPARATOR)
        if len(parts) != 6:
            raise MalformedRecord(f"expected 6 fields, got {len(parts)}")
        try:
            key = bytes.fromhex(parts[1])
        except ValueError:
            raise MalformedRecord("master key is not hex") from None
        return cls(parts[0], key, *parts[2:])


def generate_keypair() -> tuple[X25519PrivateKey, bytes]:
    priv = X25519PrivateKey.generate()
    return priv, public_bytes(priv)


def public_bytes(priv: X25519PrivateKey) -> bytes:
    return priv.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def load_private_key(raw: bytes) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes(raw)


def _kdf(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(hashes.SHA256(), 32, salt=eph_pub + recipient_pub, info=_INFO).derive(shared)


def seal(public_key: bytes, plaintext: bytes) -> bytes:
    eph = X25519PrivateKey.generate()
    eph_pub = public_bytes(eph)
    key = _kdf(eph.exchange(X25519PublicKey.from_public_bytes(public_key)), eph_pub, public_key)
    nonce = os.urandom(_NONCE_LEN)
    return eph_pub + nonce + AESGCM(key).encrypt(nonce, plaintext, eph_pub)


def unseal(private_key: X25519PrivateKey, blob: bytes) -> bytes:
    if len(blob) < _PUB_LEN + _NONCE_LEN + 16:
        raise DecryptFailure("sealed blob too short")
    eph_pub, nonce, ct = blob[:_PUB_LEN], blob[_PUB_LEN:_PUB_LEN + _NONCE_LEN], blob[_PUB_LEN + _NONCE_LEN:]
    try:
        shared = private_key.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _kdf(shared, eph_pub, public_bytes(private_key))
        return AESGCM(key).decrypt(nonce, ct, eph_pub)
    except (InvalidTag, ValueError):
        raise DecryptFailure("registration was not sealed to this relay's key") from None


def seal_registration(public_key: bytes, record: RegistrationRecord) -> bytes:
    return seal(public_key, record.to_text().encode())


def open_registration(private_key: X25519PrivateKey, blob: bytes) -> RegistrationRecord:
    text = unseal(private_key, blob)
    try:
        return RegistrationRecord.from_text(text.decode())
    except UnicodeDecodeError:
        raise MalformedRecord("record is not UTF-8") from None
