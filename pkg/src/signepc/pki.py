"""RSA key material, public-key bundles and challenge-response key checks.

The discovery service is the trust root: its public key travels as a
``(key_id, modulus, exponent, valid_until)`` bundle, and a verifier can
confirm possession of the matching private key with a signed nonce.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import math
import random
import secrets
from dataclasses import dataclass, field
from typing import Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import Prehashed

from .errors import BadSignature, ChallengeConsumed, ChallengeExpired, UnknownKeyId, WeakKeyRequested
from .tokens import SignatureTag

PUBLIC_EXPONENT = 65537
MIN_MODULUS_BITS = 2048
MIN_TEST_MODULUS_BITS = 1024
DEFAULT_CHALLENGE_TTL = 300
NONCE_BYTES = 32

_PREHASHED = Prehashed(hashes.SHA256())


def _int_bytes(x: int) -> bytes:
    return x.to_bytes(max(1, (x.bit_length() + 7) // 8), "big")


def _key_id(numbers: rsa.RSAPublicNumbers) -> str:
    return hashlib.sha256(_int_bytes(numbers.n) + _int_bytes(numbers.e)).hexdigest()[:16]


@dataclass(frozen=True)
class VerifyKey:
    key_id: str
    public: rsa.RSAPublicKey = field(repr=False, compare=False)
    valid_until: int

    @property
    def modulus_bytes(self) -> int:
        return (self.public.key_size + 7) // 8

    def recover_digest(self, signature: bytes) -> bytes:
        """Return the SHA-256 digest the signer committed to, or raise BadSignature."""
        if len(signature) != self.modulus_bytes:
            raise BadSignature(f"signature is {len(signature)} bytes, modulus is {self.modulus_bytes}")
        try:
            return self.public.recover_data_from_signature(signature, padding.PKCS1v15(), hashes.SHA256())
        except (InvalidSignature, ValueError) as exc:
            raise BadSignature(str(exc) or "signature does not verify") from exc

    def to_bundle(self) -> dict:
        nums = self.public.public_numbers()
        return {
            "key_id": self.key_id,
            "modulus": base64.b64encode(_int_bytes(nums.n)).decode(),
            "exponent": base64.b64encode(_int_bytes(nums.e)).decode(),
            "valid_until": self.valid_until,
        }

    @classmethod
    def from_bundle(cls, bundle: dict) -> VerifyKey:
        n = int.from_bytes(base64.b64decode(bundle["modulus"]), "big")
        e = int.from_bytes(base64.b64decode(bundle["exponent"]), "big")
        nums = rsa.RSAPublicNumbers(e, n)
        key_id = _key_id(nums)
        if bundle.get("key_id", key_id) != key_id:
            raise ValueError(f"bundle key_id {bundle['key_id']!r} does not match its key material")
        return cls(key_id, nums.public_key(), int(bundle["valid_until"]))

    def __eq__(self, other):
        if not isinstance(other, VerifyKey):
            return NotImplemented
        return self.to_bundle() == other.to_bundle()

    def __hash__(self):
        return hash(self.key_id)


@dataclass(frozen=True)
class SigningKey:
    key_id: str
    private: rsa.RSAPrivateKey = field(repr=False)

    @property
    def modulus_bytes(self) -> int:
        return (self.private.key_size + 7) // 8

    def sign_digest(self, digest: bytes) -> bytes:
        # PKCS#1 v1.5 is deterministic: same key + digest gives the same bytes.
        return self.private.sign(digest, padding.PKCS1v15(), _PREHASHED)


@dataclass(frozen=True)
class KeyPair:
    private: SigningKey
    public: VerifyKey
    created_at: int = 0

    @property
    def key_id(self) -> str:
        return self.public.key_id

    @property
    def valid_until(self) -> int:
        return self.public.valid_until

    def private_pem(self) -> bytes:
        return self.private.private.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    def to_private_record(self) -> dict:
        return {"key_id": self.key_id, "valid_until": self.valid_until, "private_pem": self.private_pem().decode()}

    @classmethod
    def from_private_record(cls, record: dict) -> KeyPair:
        priv = serialization.load_pem_private_key(record["private_pem"].encode(), password=None)
        if not isinstance(priv, rsa.RSAPrivateKey):
            raise ValueError("not an RSA private key")
        return _assemble(priv, int(record["valid_until"]))


def _assemble(priv: rsa.RSAPrivateKey, valid_until: int, created_at: int = 0) -> KeyPair:
    pub = priv.public_key()
    key_id = _key_id(pub.public_numbers())
    return KeyPair(SigningKey(key_id, priv), VerifyKey(key_id, pub, valid_until), created_at)


# --- seeded generation -------------------------------------------------------

_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % d for d in range(2, math.isqrt(p) + 1))]


def _probably_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _seeded_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so p*q has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if math.gcd(cand - 1, PUBLIC_EXPONENT) == 1 and _probably_prime(cand, rng):
            return cand


def _seeded_private_key(bits: int, seed: int) -> rsa.RSAPrivateKey:
    rng = random.Random(seed)
    half = bits // 2
    while True:
        p = _seeded_prime(bits - half, rng)
        q = _seeded_prime(half, rng)
        if p != q:
            break
    if p < q:
        p, q = q, p
    e = PUBLIC_EXPONENT
    d = pow(e, -1, (p - 1) * (q - 1))
    nums = rsa.RSAPrivateNumbers(
        p=p,
        q=q,
        d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p),
        dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q),
        public_numbers=rsa.RSAPublicNumbers(e, p * q),
    )
    return nums.private_key()


def generate_keypair(
    modulus_bits: int = MIN_MODULUS_BITS,
    valid_until: int = 2**62,
    rng_seed: int | None = None,
    *,
    allow_weak: bool = False,
    created_at: int = 0,
) -> KeyPair:
    """Generate an RSA signing pair.

    With ``rng_seed`` the primes come from a seeded PRNG, so the same seed
    always yields the same key. Moduli below 2048 bits need ``allow_weak``
    and are never accepted below 1024.
    """
    floor = MIN_TEST_MODULUS_BITS if allow_weak else MIN_MODULUS_BITS
    if modulus_bits < floor:
        raise WeakKeyRequested(f"{modulus_bits}-bit modulus is below the {floor}-bit floor")
    if valid_until <= created_at:
        raise ValueError("valid_until must be after the creation time")
    if rng_seed is None:
        priv = rsa.generate_private_key(public_exponent=PUBLIC_EXPONENT, key_size=modulus_bits)
    else:
        priv = _seeded_private_key(modulus_bits, rng_seed)
    return _assemble(priv, valid_until, created_at)


class KeyStatus(enum.Enum):
    VALID = "Valid"
    EXPIRED = "Expired"


def check_key_expiry(kp: KeyPair | VerifyKey, now: int) -> KeyStatus:
    # inclusive: a key is still valid at the instant valid_until
    return KeyStatus.EXPIRED if now > kp.valid_until else KeyStatus.VALID


class KeyRing:
    """Verifier-side set of trusted discovery-service public keys."""

    def __init__(self, keys: Iterable[VerifyKey] = ()):
        self._keys: dict[str, VerifyKey] = {}
        for k in keys:
            self.add(k)

    def add(self, key: VerifyKey) -> None:
        self._keys[key.key_id] = key

    def remove(self, key_id: str) -> None:
        self._keys.pop(key_id, None)

    def get(self, key_id: str) -> VerifyKey:
        try:
            return self._keys[key_id]
        except KeyError:
            raise UnknownKeyId(key_id) from None

    def __contains__(self, key_id) -> bool:
        return key_id in self._keys

    def __len__(self) -> int:
        return len(self._keys)


# --- challenge / response ----------------------------------------------------


@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    issued_at: int

    def __post_init__(self):
        if len(self.nonce) != NONCE_BYTES:
            raise ValueError(f"nonce must be {NONCE_BYTES} bytes")


def _nonce_digest(nonce: bytes) -> bytes:
    return hashlib.sha256(nonce).digest()


def respond_challenge(private: SigningKey, ch: Challenge) -> SignatureTag:
    return SignatureTag(private.sign_digest(_nonce_digest(ch.nonce)), private.key_id)


class ChallengeIssuer:
    """Outstanding-challenge bookkeeping for one verifier.

    Each challenge verifies at most once; it is consumed whether or not the
    response checks out.
    """

    def __init__(self, ttl: int = DEFAULT_CHALLENGE_TTL, rng: random.Random | None = None):
        self.ttl = ttl
        self._rng = rng
        self._outstanding: set[bytes] = set()

    def issue(self, now: int = 0) -> Challenge:
        nonce = self._rng.randbytes(NONCE_BYTES) if self._rng is not None else secrets.token_bytes(NONCE_BYTES)
        self._outstanding.add(nonce)
        return Challenge(nonce, now)

    @property
    def outstanding(self) -> int:
        return len(self._outstanding)

    def verify(self, claimed_public: VerifyKey, ch: Challenge, resp: SignatureTag, now: int = 0) -> bool:
        if ch.nonce not in self._outstanding:
            raise ChallengeConsumed("challenge already used or never issued here")
        self._outstanding.discard(ch.nonce)
        if now - ch.issued_at > self.ttl:
            raise ChallengeExpired(f"challenge issued at {ch.issued_at} expired (ttl {self.ttl}s)")
        try:
            recovered = claimed_public.recover_digest(resp.signature)
        except BadSignature:
            return False
        return secrets.compare_digest(recovered, _nonce_digest(ch.nonce))


def issue_challenge(issuer: ChallengeIssuer, now: int = 0) -> Challenge:
    return issuer.issue(now)


def verify_challenge_response(issuer: ChallengeIssuer, claimed_public: VerifyKey, ch: Challenge, resp: SignatureTag, now: int = 0) -> bool:
    return issuer.verify(claimed_public, ch, resp, now)
