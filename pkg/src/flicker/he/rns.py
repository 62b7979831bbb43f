"""Residue-number-system polynomial arithmetic in Z_q[X]/(X^N + 1).

A polynomial is an ``(k, N)`` uint64 array whose row ``i`` holds the residues
modulo the ``i``-th prime of some basis. Every prime is below 2**51, which
lets the modular multiply estimate the quotient in float64 and recover the
exact remainder with wrapping 64-bit arithmetic.
"""

from __future__ import annotations

import numba
import numpy as np

U64 = np.uint64


@numba.njit(inline="always")
def _mulmod(a, b, p, pinv):
    q = np.uint64(np.float64(a) * np.float64(b) * pinv)
    r = np.int64(a * b - q * p)
    ip = np.int64(p)
    if r < 0:
        r += ip
    if r < 0:
        r += ip
    if r >= ip:
        r -= ip
    if r >= ip:
        r -= ip
    return np.uint64(r)


@numba.njit(cache=True)
def _ntt_rows(a, tw, primes):
    # Cooley-Tukey with psi powers in bit-reversed order; output bit-reversed.
    rows, n = a.shape
    k = primes.shape[0]
    for r in range(rows):
        p = primes[r % k]
        pinv = 1.0 / np.float64(p)
        x = a[r]
        w = tw[r % k]
        m = 1
        t = n // 2
        while m < n:
            for i in range(m):
                wi = w[m + i]
                j1 = 2 * i * t
                for j in range(j1, j1 + t):
                    u = x[j]
                    v = _mulmod(x[j + t], wi, p, pinv)
                    s = u + v
                    if s >= p:
                        s -= p
                    d = u + p - v
                    if d >= p:
                        d -= p
                    x[j] = s
                    x[j + t] = d
            m *= 2
            t //= 2


@numba.njit(cache=True)
def _intt_rows(a, itw, primes, ninv):
    # Gentleman-Sande inverse of _ntt_rows; input bit-reversed, output natural.
    rows, n = a.shape
    k = primes.shape[0]
    for r in range(rows):
        p = primes[r % k]
        pinv = 1.0 / np.float64(p)
        x = a[r]
        w = itw[r % k]
        t = 1
        m = n // 2
        while m >= 1:
            for i in range(m):
                wi = w[m + i]
                j1 = 2 * i * t
                for j in range(j1, j1 + t):
                    u = x[j]
                    v = x[j + t]
                    s = u + v
                    if s >= p:
                        s -= p
                    d = u + p - v
                    if d >= p:
                        d -= p
                    x[j] = s
                    x[j + t] = _mulmod(d, wi, p, pinv)
            m //= 2
            t *= 2
        ni = ninv[r % k]
        for j in range(n):
            x[j] = _mulmod(x[j], ni, p, pinv)


@numba.njit(cache=True)
def _mul_rows(a, b, primes):
    rows, n = a.shape
    k = primes.shape[0]
    out = np.empty_like(a)
    for r in range(rows):
        p = primes[r % k]
        pinv = 1.0 / np.float64(p)
        for j in range(n):
            out[r, j] = _mulmod(a[r, j], b[r, j], p, pinv)
    return out


@numba.njit(cache=True)
def _scalar_mul_rows(a, c, primes):
    rows, n = a.shape
    k = primes.shape[0]
    out = np.empty_like(a)
    for r in range(rows):
        p = primes[r % k]
        pinv = 1.0 / np.float64(p)
        cr = c[r]
        for j in range(n):
            out[r, j] = _mulmod(a[r, j], cr, p, pinv)
    return out


@numba.njit(cache=True)
def _addsub_rows(a, b, primes, sign):
    rows, n = a.shape
    k = primes.shape[0]
    out = np.empty_like(a)
    for r in range(rows):
        p = primes[r % k]
        for j in range(n):
            if sign > 0:
                s = a[r, j] + b[r, j]
            else:
                s = a[r, j] + (p - b[r, j])
            if s >= p:
                s -= p
            out[r, j] = s
    return out


@numba.njit(cache=True)
def _reduce_signed(x, primes):
    k = primes.shape[0]
    n = x.shape[0]
    out = np.empty((k, n), dtype=np.uint64)
    for r in range(k):
        ip = np.int64(primes[r])
        for j in range(n):
            v = x[j] % ip
            if v < 0:
                v += ip
            out[r, j] = np.uint64(v)
    return out


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _root_of_unity(p: int, order: int) -> int:
    """A primitive ``order``-th root of unity mod p (order a power of two)."""
    for x in range(2, p):
        g = pow(x, (p - 1) // order, p)
        if pow(g, order // 2, p) == p - 1:
            return g
    raise ValueError(f"no primitive {order}-th root of unity mod {p}")


class RnsBasis:
    """NTT tables for an ordered list of primes sharing one ring degree."""

    def __init__(self, primes, ring_degree: int):
        self.primes = tuple(int(p) for p in primes)
        self.n = ring_degree
        n = ring_degree
        rev = _bit_reverse(n)
        k = len(self.primes)
        self.tw = np.empty((k, n), dtype=U64)
        self.itw = np.empty((k, n), dtype=U64)
        self.ninv = np.empty(k, dtype=U64)
        for i, p in enumerate(self.primes):
            psi = _root_of_unity(p, 2 * n)
            ipsi = pow(psi, -1, p)
            pw = _powers(psi, n, p)
            ipw = _powers(ipsi, n, p)
            self.tw[i] = pw[rev]
            self.itw[i] = ipw[rev]
            self.ninv[i] = pow(n, -1, p)
        self.p_arr = np.array(self.primes, dtype=U64)

    def __len__(self):
        return len(self.primes)

    def rows(self, idx) -> "_View":
        return _View(self, list(idx))


def _powers(g: int, n: int, p: int) -> np.ndarray:
    out = np.empty(n, dtype=U64)
    x = 1
    for i in range(n):
        out[i] = x
        x = x * g % p
    return out


class _View:
    """Operations restricted to a subset (in order) of an RNS basis."""

    def __init__(self, basis: RnsBasis, idx: list[int]):
        self.basis = basis
        self.idx = idx
        self.primes = basis.p_arr[idx]
        self._tw = basis.tw[idx]
        self._itw = basis.itw[idx]
        self._ninv = basis.ninv[idx]

    def ntt(self, a: np.ndarray) -> np.ndarray:
        """Forward NTT; ``a`` is (k, N) or (m, k, N) for a stack of polynomials."""
        out = np.array(a, dtype=U64, order="C", copy=True)
        _ntt_rows(out.reshape(-1, out.shape[-1]), self._tw, self.primes)
        return out

    def intt(self, a: np.ndarray) -> np.ndarray:
        out = np.array(a, dtype=U64, order="C", copy=True)
        _intt_rows(out.reshape(-1, out.shape[-1]), self._itw, self.primes, self._ninv)
        return out

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = np.broadcast_arrays(a, b)
        shape = a.shape
        fa = np.ascontiguousarray(a).reshape(-1, shape[-1])
        fb = np.ascontiguousarray(b).reshape(-1, shape[-1])
        return _mul_rows(fa, fb, self.primes).reshape(shape)

    def scalar_mul(self, a: np.ndarray, consts) -> np.ndarray:
        """Multiply row ``i`` by ``consts[i]`` (already reduced mod its prime)."""
        c = np.asarray(consts, dtype=U64)
        return _scalar_mul_rows(np.ascontiguousarray(a), c, self.primes)

    def _addsub(self, a, b, sign):
        a, b = np.broadcast_arrays(a, b)
        shape = a.shape
        fa = np.ascontiguousarray(a, dtype=U64).reshape(-1, shape[-1])
        fb = np.ascontiguousarray(b, dtype=U64).reshape(-1, shape[-1])
        return _addsub_rows(fa, fb, self.primes, sign).reshape(shape)

    def add(self, a, b):
        return self._addsub(a, b, 1)

    def sub(self, a, b):
        return self._addsub(a, b, -1)

    def neg(self, a):
        p = self.primes[:, None]
        return np.where(a == 0, a, p - a)

    def from_signed(self, x: np.ndarray) -> np.ndarray:
        """Reduce an int64 coefficient vector into every prime of the view."""
        return _reduce_signed(np.ascontiguousarray(x, dtype=np.int64), self.primes)


def centered(row: np.ndarray, p: int) -> np.ndarray:
    """Residues mod p as signed integers in (-p/2, p/2]."""
    r = row.astype(np.int64)
    return np.where(r > p // 2, r - np.int64(p), r)


def crt_to_float(a: np.ndarray, primes) -> np.ndarray:
    """Centered CRT reconstruction into float64 via Garner's mixed radix.

    Digits are formed exactly in integer arithmetic; only the final Horner
    evaluation is in floating point, so there is no cancellation.
    """
    primes = [int(p) for p in primes]
    k = len(primes)
    if k == 1:
        return centered(a[0], primes[0]).astype(np.float64)
    # Garner digits v_i with x = v_0 + p_0 (v_1 + p_1 (v_2 + ...))
    digits = [a[0].astype(U64)]
    for i in range(1, k):
        pi = primes[i]
        basis = RnsScalar(pi)
        v = a[i].astype(U64)
        for j in range(i):
            # v = (v - d_j) * inv(p_j) mod p_i
            d = np.mod(digits[j].astype(np.int64), np.int64(pi)).astype(U64)
            v = basis.sub(v, d)
            v = basis.mul_const(v, pow(primes[j], -1, pi))
        digits.append(v)
    top = centered(digits[-1], primes[-1]).astype(np.float64)
    val = top
    for i in range(k - 2, -1, -1):
        val = val * float(primes[i]) + digits[i].astype(np.float64)
    return val


class RnsScalar:
    """Elementwise arithmetic modulo a single prime on uint64 vectors."""

    def __init__(self, p: int):
        self.p = int(p)
        self.pu = U64(p)
        self._arr = np.array([self.p], dtype=U64)

    def sub(self, a, b):
        d = a + (self.pu - b)
        return np.where(d >= self.pu, d - self.pu, d)

    def mul_const(self, a, c: int):
        row = np.ascontiguousarray(a, dtype=U64).reshape(1, -1)
        return _scalar_mul_rows(row, np.array([c % self.p], dtype=U64), self._arr)[0]
