"""CKKS parameter sets and their generation."""

from __future__ import annotations

import functools
import hashlib
import struct
from dataclasses import dataclass, field

from sympy import isprime

from ..errors import ParameterError

# Largest prime width the float-quotient modular multiply handles exactly.
MAX_PRIME_BITS = 51
MIN_RING_DEGREE = 16

# Max log2(Q*P) for 128-bit classical security with a ternary secret
# (HomomorphicEncryption.org standard table).
SECURE_LOGQ = {
    1024: 27,
    2048: 54,
    4096: 109,
    8192: 218,
    16384: 438,
    32768: 881,
}


def _secure_bound(ring_degree: int) -> int:
    if ring_degree in SECURE_LOGQ:
        return SECURE_LOGQ[ring_degree]
    if ring_degree < 1024:
        return 0
    # beyond the table the bound roughly doubles with the ring degree
    return SECURE_LOGQ[32768] * (ring_degree // 32768)


@dataclass(frozen=True)
class HeParams:
    ring_degree: int
    modulus_chain: tuple[int, ...]
    scale: float
    special_prime: int
    error_stddev: float = 3.2
    secret_hamming_weight: int = field(default=0)

    def __post_init__(self):
        n = self.ring_degree
        if n < MIN_RING_DEGREE or n & (n - 1):
            raise ParameterError(f"ring_degree must be a power of two >= {MIN_RING_DEGREE}, got {n}")
        primes = self.all_primes
        if len(set(primes)) != len(primes):
            raise ParameterError("moduli must be distinct")
        for p in primes:
            if p.bit_length() > MAX_PRIME_BITS:
                raise ParameterError(f"prime {p} wider than {MAX_PRIME_BITS} bits")
            if (p - 1) % (2 * n) or not isprime(p):
                raise ParameterError(f"{p} is not an NTT-friendly prime for ring degree {n}")
        if not self.scale > 0:
            raise ParameterError("scale must be positive")
        if self.scale >= min(self.modulus_chain):
            raise ParameterError("scale must be smaller than every prime in the chain")
        if self.secret_hamming_weight == 0:
            object.__setattr__(self, "secret_hamming_weight", n // 2)
        if not 0 < self.secret_hamming_weight <= n // 2:
            raise ParameterError("secret Hamming weight must lie in (0, ring_degree/2]")

    @property
    def slot_count(self) -> int:
        return self.ring_degree // 2

    @property
    def max_level(self) -> int:
        return len(self.modulus_chain) - 1

    @property
    def all_primes(self) -> tuple[int, ...]:
        return tuple(self.modulus_chain) + (self.special_prime,)

    @property
    def total_bits(self) -> int:
        return sum(p.bit_length() for p in self.all_primes)

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(struct.pack("<Q", self.ring_degree))
        for p in self.all_primes:
            h.update(struct.pack("<Q", p))
        h.update(struct.pack("<dd", float(self.scale), float(self.error_stddev)))
        h.update(struct.pack("<Q", self.secret_hamming_weight))
        return h.digest()

    def is_secure(self) -> bool:
        return self.total_bits <= _secure_bound(self.ring_degree)


def ntt_primes(ring_degree: int, bits: int, count: int, exclude=()) -> list[int]:
    """Largest ``count`` primes below 2**bits that are 1 mod 2*ring_degree.

    The search never leaves the ``bits``-bit range.
    """
    m = 2 * ring_degree
    lo = 1 << (bits - 1)
    p = ((1 << bits) - 1) // m * m + 1
    found: list[int] = []
    while p > lo and len(found) < count:
        if p not in exclude and isprime(p):
            found.append(p)
        p -= m
    if len(found) < count:
        raise ParameterError(
            f"only {len(found)} of {count} NTT-friendly {bits}-bit primes exist for ring degree {ring_degree}"
        )
    return found


@functools.lru_cache(maxsize=32)
def gen_params(
    slot_budget: int,
    precision_bits: int,
    *,
    secure: bool = True,
    max_ring_degree: int = 1 << 17,
) -> HeParams:
    """Smallest parameter set with ``slot_count >= slot_budget`` and scale ``2**precision_bits``.

    With ``secure=True`` the ring degree is also raised until the total modulus
    width is within the 128-bit security table; for small budgets this yields
    the default profile (ring degree 8192, two 50-bit primes, scale 2^40).
    ``secure=False`` permits toy ring degrees for fast tests.
    """
    if slot_budget < 1:
        raise ParameterError("slot_budget must be positive")
    if not 20 <= precision_bits <= 50:
        raise ParameterError("precision_bits must lie in [20, 50]")
    prime_bits = min(MAX_PRIME_BITS, precision_bits + 10)
    n = MIN_RING_DEGREE
    while n <= max_ring_degree:
        if n // 2 >= slot_budget:
            chain = ntt_primes(n, prime_bits, 2)
            special = ntt_primes(n, MAX_PRIME_BITS, 1, exclude=set(chain))[0]
            params = HeParams(
                ring_degree=n,
                modulus_chain=tuple(chain),
                scale=float(2**precision_bits),
                special_prime=special,
            )
            if not secure or params.is_secure():
                return params
        n *= 2
    raise ParameterError(f"no parameter set with ring degree <= {max_ring_degree} fits the request")


def default_params() -> HeParams:
    return gen_params(4, 40)


def toy_params(slot_budget: int = 8, precision_bits: int = 40) -> HeParams:
    """Insecure small-ring parameters for tests."""
    return gen_params(slot_budget, precision_bits, secure=False)
