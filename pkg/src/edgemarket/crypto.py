"""Pluggable asymmetric crypto plus the symmetric chunk cipher.

Protocol logic only touches the four-operation scheme interface
(encrypt-to-public / decrypt-with-private / sign-with-private /
verify-with-public), so schemes can be swapped without touching the
vault or escrow. Two schemes ship:

* SeededRsaScheme: compact RSA with fully deterministic keygen from a
  seed. Every simulation run and test is reproducible byte for byte.
  Not hardened (textbook padding, small moduli); simulation only.
* SecureRsaScheme: 2048-bit RSA-OAEP / RSA-PSS from the cryptography
  library, with real randomness. The keygen seed is ignored.

Chunk payloads use AES-256-CTR under a fresh per-task key; only the key
is wrapped to recipients through the asymmetric scheme.
"""

from __future__ import annotations

import hashlib
import math
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass

import sympy
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

RSA_EXPONENT = 65537
_CHECK_LEN = 4


@dataclass(frozen=True)
class KeyPair:
    """Opaque public/private byte strings; layout is scheme-defined."""

    public: bytes
    private: bytes


class CryptoScheme(ABC):
    name: str

    @abstractmethod
    def keygen(self, seed: int) -> KeyPair: ...

    @abstractmethod
    def encrypt(self, public: bytes, message: bytes) -> bytes: ...

    @abstractmethod
    def decrypt(self, private: bytes, ciphertext: bytes) -> bytes: ...

    @abstractmethod
    def sign(self, private: bytes, message: bytes) -> bytes: ...

    @abstractmethod
    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool: ...


def _pack_ints(*values: int) -> bytes:
    out = []
    for v in values:
        b = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
        out.append(len(b).to_bytes(4, "big"))
        out.append(b)
    return b"".join(out)


def _unpack_ints(blob: bytes, count: int) -> tuple[int, ...]:
    values = []
    pos = 0
    for _ in range(count):
        n = int.from_bytes(blob[pos : pos + 4], "big")
        pos += 4
        values.append(int.from_bytes(blob[pos : pos + n], "big"))
        pos += n
    if pos != len(blob):
        raise ValueError("malformed key material")
    return tuple(values)


class SeededRsaScheme(CryptoScheme):
    """Deterministic small-modulus RSA for reproducible simulations.

    Plaintexts are framed as 0x01 || message || sha256(message)[:4], so a
    decryption under the wrong private key fails loudly instead of
    returning garbage.
    """

    name = "seeded-rsa"

    def __init__(self, bits: int = 512):
        if bits < 128 or bits % 2:
            raise ValueError("modulus bits must be an even number >= 128")
        self.bits = bits

    def _prime(self, rng: random.Random) -> int:
        half = self.bits // 2
        # Force the top bit so n lands at the requested width.
        candidate = rng.getrandbits(half) | (1 << (half - 1)) | 1
        while not sympy.isprime(candidate):
            candidate += 2
        return candidate

    def keygen(self, seed: int) -> KeyPair:
        rng = random.Random(seed)
        while True:
            p = self._prime(rng)
            q = self._prime(rng)
            if p == q:
                continue
            phi = (p - 1) * (q - 1)
            if math.gcd(RSA_EXPONENT, phi) != 1:
                continue
            n = p * q
            d = pow(RSA_EXPONENT, -1, phi)
            return KeyPair(
                public=_pack_ints(n, RSA_EXPONENT),
                private=_pack_ints(n, d),
            )

    def _modulus_len(self, n: int) -> int:
        return (n.bit_length() + 7) // 8

    def encrypt(self, public: bytes, message: bytes) -> bytes:
        n, e = _unpack_ints(public, 2)
        k = self._modulus_len(n)
        framed = b"\x01" + message + hashlib.sha256(message).digest()[:_CHECK_LEN]
        if len(framed) > k - 1:
            raise ValueError(f"message too long for {self.bits}-bit modulus")
        c = pow(int.from_bytes(framed, "big"), e, n)
        return c.to_bytes(k, "big")

    def decrypt(self, private: bytes, ciphertext: bytes) -> bytes:
        n, d = _unpack_ints(private, 2)
        k = self._modulus_len(n)
        m = pow(int.from_bytes(ciphertext, "big"), d, n)
        try:
            framed = m.to_bytes(k - 1, "big").lstrip(b"\x00")
        except OverflowError as exc:
            raise ValueError("decryption failed") from exc
        if not framed.startswith(b"\x01"):
            raise ValueError("decryption failed")
        body = framed[1:]
        message, check = body[:-_CHECK_LEN], body[-_CHECK_LEN:]
        if hashlib.sha256(message).digest()[:_CHECK_LEN] != check:
            raise ValueError("decryption failed")
        return message

    def sign(self, private: bytes, message: bytes) -> bytes:
        n, d = _unpack_ints(private, 2)
        h = int.from_bytes(hashlib.sha256(message).digest(), "big")
        return pow(h, d, n).to_bytes(self._modulus_len(n), "big")

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        n, e = _unpack_ints(public, 2)
        sig = int.from_bytes(signature, "big")
        if sig >= n:
            return False
        expected = int.from_bytes(hashlib.sha256(message).digest(), "big")
        return pow(sig, e, n) == expected


class SecureRsaScheme(CryptoScheme):
    """RSA-OAEP encryption and RSA-PSS signatures via the cryptography library.

    Keygen uses the OS entropy source; the seed argument is ignored.
    """

    name = "secure-rsa"

    def __init__(self, bits: int = 2048):
        self.bits = bits

    def keygen(self, seed: int = 0) -> KeyPair:
        key = rsa.generate_private_key(public_exponent=RSA_EXPONENT, key_size=self.bits)
        private = key.private_bytes(
            serialization.Encoding.DER,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
        public = key.public_key().public_bytes(
            serialization.Encoding.DER,
            serialization.PublicFormat.SubjectPublicKeyInfo,
        )
        return KeyPair(public=public, private=private)

    def encrypt(self, public: bytes, message: bytes) -> bytes:
        key = serialization.load_der_public_key(public)
        return key.encrypt(
            message,
            padding.OAEP(
                mgf=padding.MGF1(algorithm=hashes.SHA256()),
                algorithm=hashes.SHA256(),
                label=None,
            ),
        )

    def decrypt(self, private: bytes, ciphertext: bytes) -> bytes:
        key = serialization.load_der_private_key(private, password=None)
        return key.decrypt(
            ciphertext,
            padding.OAEP(
                mgf=padding.MGF1(algorithm=hashes.SHA256()),
                algorithm=hashes.SHA256(),
                label=None,
            ),
        )

    def sign(self, private: bytes, message: bytes) -> bytes:
        key = serialization.load_der_private_key(private, password=None)
        return key.sign(
            message,
            padding.PSS(
                mgf=padding.MGF1(hashes.SHA256()),
                salt_length=padding.PSS.MAX_LENGTH,
            ),
            hashes.SHA256(),
        )

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        key = serialization.load_der_public_key(public)
        try:
            key.verify(
                signature,
                message,
                padding.PSS(
                    mgf=padding.MGF1(hashes.SHA256()),
                    salt_length=padding.PSS.MAX_LENGTH,
                ),
                hashes.SHA256(),
            )
            return True
        except InvalidSignature:
            return False


DEFAULT_SCHEME = SeededRsaScheme()


def symmetric_cipher(key: bytes, data: bytes) -> bytes:
    """AES-256-CTR; applying it twice with the same key is the identity.

    The nonce is derived from the key, which is safe here because every
    task gets a fresh key.
    """
    if len(key) != 32:
        raise ValueError("symmetric key must be 32 bytes")
    nonce = hashlib.sha256(b"ctr-nonce" + key).digest()[:16]
    encryptor = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return encryptor.update(data) + encryptor.finalize()
