"""Depth-1 RNS-CKKS over packed real slot vectors.

Polynomials are kept in coefficient form as ``(level + 1, N)`` residue arrays;
NTTs are applied only inside multiplications. Galois rotations use hybrid key
switching with one special prime that never appears in ciphertexts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LevelMismatch
from .backend import HeBackend, KeyMaterial, default_rotation_steps
from .encoding import Embedding
from .params import HeParams
from .rns import U64, RnsBasis, centered, crt_to_float


@dataclass
class Plaintext:
    coeffs: np.ndarray  # (level + 1, N) uint64
    scale: float
    level: int


@dataclass
class Ciphertext:
    c0: np.ndarray
    c1: np.ndarray
    scale: float
    level: int

    def __post_init__(self):
        if self.c0.shape != self.c1.shape:
            raise LevelMismatch("ciphertext components live at different levels")
        if not self.scale > 0:
            raise ValueError("ciphertext scale must be positive")


@dataclass
class SecretKey:
    coeffs: np.ndarray  # ternary int8, length N
    ntt: np.ndarray  # (all primes, N) uint64


@dataclass
class PublicKey:
    # NTT domain over the modulus chain; b = -a*s + e
    b: np.ndarray
    a: np.ndarray


@dataclass
class GaloisKey:
    step: int
    galois_elt: int
    # NTT domain over chain + special prime, one (b, a) pair per chain digit
    b: np.ndarray  # (digits, all primes, N)
    a: np.ndarray


class CkksBackend(HeBackend):
    kind = "ckks"

    def __init__(self, params: HeParams, seed: int = 0):
        super().__init__(params)
        n = params.ring_degree
        self.basis = RnsBasis(params.all_primes, n)
        self.embedding = Embedding(n)
        self.special_index = len(params.modulus_chain)
        self.rng = np.random.default_rng(seed)
        self._autos: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._views = {}

    # -- bases ------------------------------------------------------------------

    def _view(self, level: int):
        key = ("q", level)
        if key not in self._views:
            self._views[key] = self.basis.rows(range(level + 1))
        return self._views[key]

    def _ext_view(self, level: int):
        key = ("qp", level)
        if key not in self._views:
            self._views[key] = self.basis.rows(list(range(level + 1)) + [self.special_index])
        return self._views[key]

    def _full_view(self):
        return self._ext_view(self.params.max_level)

    # -- sampling ---------------------------------------------------------------

    def _gaussian(self, rng) -> np.ndarray:
        sigma = self.params.error_stddev
        e = np.rint(rng.normal(0.0, sigma, self.params.ring_degree))
        return np.clip(e, -6 * sigma, 6 * sigma).astype(np.int64)

    def _ternary(self, rng) -> np.ndarray:
        return rng.integers(-1, 2, self.params.ring_degree).astype(np.int64)

    def _uniform(self, rng, view) -> np.ndarray:
        return np.stack([rng.integers(0, int(p), self.params.ring_degree, dtype=U64) for p in view.primes])

    # -- automorphisms ------------------------------------------------------------

    def _galois_elt(self, step: int) -> int:
        return pow(5, step % self.params.slot_count, 2 * self.params.ring_degree)

    def _auto_map(self, g: int):
        if g not in self._autos:
            n = self.params.ring_degree
            j = (np.arange(n, dtype=np.int64) * g) % (2 * n)
            self._autos[g] = (j % n, j >= n)
        return self._autos[g]

    def _apply_auto(self, poly: np.ndarray, g: int, view) -> np.ndarray:
        dest, flip = self._auto_map(g)
        src = np.where(flip[None, :], view.neg(poly), poly)
        out = np.empty_like(poly)
        out[:, dest] = src
        return out

    def _auto_signed(self, x: np.ndarray, g: int) -> np.ndarray:
        dest, flip = self._auto_map(g)
        out = np.empty_like(x)
        out[dest] = np.where(flip, -x, x)
        return out

    # -- keys ---------------------------------------------------------------------

    def keygen(self, seed: int, rotation_steps=None) -> KeyMaterial:
        p = self.params
        n = p.ring_degree
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x6B65]))
        full = self._full_view()

        s = np.zeros(n, dtype=np.int64)
        pos = rng.choice(n, size=p.secret_hamming_weight, replace=False)
        s[pos] = rng.choice(np.array([-1, 1]), size=len(pos))
        s_ntt = full.ntt(full.from_signed(s))
        sk = SecretKey(s.astype(np.int8), s_ntt)

        chain = self._view(p.max_level)
        top = p.max_level + 1
        a = self._uniform(rng, chain)
        e = chain.ntt(chain.from_signed(self._gaussian(rng)))
        b = chain.sub(e, chain.mul(a, s_ntt[:top]))
        pk = PublicKey(b, a)

        steps = default_rotation_steps(p.slot_count) if rotation_steps is None else rotation_steps
        gks = {}
        for step in sorted({int(k) % p.slot_count for k in steps} - {0}):
            gks[step] = self._galois_keygen(step, s, s_ntt, rng)
        return KeyMaterial(p.digest(), sk, pk, gks)

    def _galois_keygen(self, step: int, s: np.ndarray, s_ntt: np.ndarray, rng) -> GaloisKey:
        p = self.params
        full = self._full_view()
        g = self._galois_elt(step)
        sg = self._auto_signed(s, g)
        sg_ntt = full.ntt(full.from_signed(sg))
        digits = p.max_level + 1
        P = p.special_prime
        bs, as_ = [], []
        for j in range(digits):
            a = self._uniform(rng, full)
            e = full.ntt(full.from_signed(self._gaussian(rng)))
            b = full.sub(e, full.mul(a, s_ntt))
            qj = p.modulus_chain[j]
            # P * s_g lands only in digit j's own residue row
            row = self.basis.rows([j]).scalar_mul(sg_ntt[j : j + 1], [P % qj])[0]
            b[j] = self.basis.rows([j]).add(b[j : j + 1], row[None, :])[0]
            bs.append(b)
            as_.append(a)
        return GaloisKey(step, g, np.stack(bs), np.stack(as_))

    def public_key_ciphertext(self, keys: KeyMaterial) -> Ciphertext:
        """The public key viewed as a top-level ciphertext (it encrypts ~0)."""
        chain = self._view(self.params.max_level)
        pk = keys.public_key
        return Ciphertext(chain.intt(pk.b), chain.intt(pk.a), self.params.scale, self.params.max_level)

    # -- encode / decode ------------------------------------------------------------

    def _encode(self, values, level, scale):
        coeffs = self.embedding.to_coeffs(values) * scale
        self.check_encodable(coeffs, level)
        ints = np.rint(coeffs).astype(np.int64)
        return Plaintext(self._view(level).from_signed(ints), scale, level)

    def decode(self, pt) -> np.ndarray:
        coeffs = crt_to_float(pt.coeffs, self.params.modulus_chain[: pt.level + 1])
        return self.embedding.to_slots(coeffs / pt.scale).real

    # -- encrypt / decrypt ------------------------------------------------------------

    def _encrypt(self, public_key: PublicKey, pt: Plaintext) -> Ciphertext:
        level = pt.level
        view = self._view(level)
        rows = slice(0, level + 1)
        u = view.ntt(view.from_signed(self._ternary(self.rng)))
        prod = view.intt(np.stack([view.mul(public_key.b[rows], u), view.mul(public_key.a[rows], u)]))
        e0 = view.from_signed(self._gaussian(self.rng))
        e1 = view.from_signed(self._gaussian(self.rng))
        c0 = view.add(view.add(prod[0], e0), pt.coeffs)
        c1 = view.add(prod[1], e1)
        return Ciphertext(c0, c1, pt.scale, level)

    def _decrypt(self, secret_key: SecretKey, ct: Ciphertext) -> Plaintext:
        view = self._view(ct.level)
        c1s = view.intt(view.mul(view.ntt(ct.c1), secret_key.ntt[: ct.level + 1]))
        return Plaintext(view.add(ct.c0, c1s), ct.scale, ct.level)

    # -- arithmetic ---------------------------------------------------------------------

    def _add_plain(self, ct, pt, sign):
        view = self._view(ct.level)
        op = view.add if sign > 0 else view.sub
        return Ciphertext(op(ct.c0, pt.coeffs), ct.c1.copy(), ct.scale, ct.level)

    def _add_cipher(self, a, b):
        view = self._view(a.level)
        return Ciphertext(view.add(a.c0, b.c0), view.add(a.c1, b.c1), a.scale, a.level)

    def _rescale(self, polys: np.ndarray, level: int) -> np.ndarray:
        """Divide a stack of level-``level`` polynomials by its last prime, rounding."""
        q_last = self.params.modulus_chain[level]
        lower = self._view(level - 1)
        last = centered(polys[..., level, :], q_last)
        out = np.empty(polys.shape[:-2] + (level,) + polys.shape[-1:], dtype=U64)
        invs = [pow(q_last, -1, int(q)) for q in lower.primes]
        for idx in np.ndindex(*polys.shape[:-2]):
            lifted = lower.from_signed(last[idx])
            out[idx] = lower.scalar_mul(lower.sub(polys[idx][:level], lifted), invs)
        return out

    def _mul_plain(self, ct, pt):
        level = ct.level
        view = self._view(level)
        m = view.ntt(pt.coeffs)
        c = view.ntt(np.stack([ct.c0, ct.c1]))
        prod = view.intt(view.mul(c, m[None]))
        r = self._rescale(prod, level)
        return Ciphertext(r[0], r[1], ct.scale * pt.scale / self.params.modulus_chain[level], level - 1)

    def _prepare_plains(self, rows, level):
        view = self._view(level)
        return view.ntt(np.stack([self._encode(r, level, self.params.scale).coeffs for r in rows]))

    def _packed_mac(self, cts, chunks):
        level = cts[0].level
        view = self._view(level)
        c = view.ntt(np.stack([np.stack([ct.c0, ct.c1]) for ct in cts]))  # (width, 2, level+1, N)
        scale = cts[0].scale * self.params.scale / self.params.modulus_chain[level]
        out = []
        for m in chunks:
            acc = None
            for k in range(len(cts)):
                term = view.mul(c[k], m[k][None])
                acc = term if acc is None else view.add(acc, term)
            r = self._rescale(view.intt(acc), level)
            out.append(Ciphertext(r[0], r[1], scale, level - 1))
        return out

    def _key_switch(self, d: np.ndarray, key: GaloisKey, level: int) -> np.ndarray:
        """Switch polynomial ``d`` (under s_g) to a pair under s; returns (2, level+1, N)."""
        p = self.params
        ext = self._ext_view(level)
        rows = list(range(level + 1)) + [self.special_index]
        lifted = np.stack([ext.from_signed(centered(d[j], p.modulus_chain[j])) for j in range(level + 1)])
        d_ntt = ext.ntt(lifted)
        kb = key.b[: level + 1][:, rows]
        ka = key.a[: level + 1][:, rows]
        pr = ext.primes[None, :, None]
        acc0 = ext.mul(d_ntt, kb).sum(axis=0) % pr[0]
        acc1 = ext.mul(d_ntt, ka).sum(axis=0) % pr[0]
        acc = ext.intt(np.stack([acc0, acc1]))
        # divide by the special prime with rounding
        P = p.special_prime
        chain = self._view(level)
        invs = [pow(P, -1, int(q)) for q in chain.primes]
        out = np.empty((2, level + 1, p.ring_degree), dtype=U64)
        for i in range(2):
            last = chain.from_signed(centered(acc[i, -1], P))
            out[i] = chain.scalar_mul(chain.sub(acc[i, :-1], last), invs)
        return out

    def _rotate_step(self, ct, step, key: GaloisKey):
        view = self._view(ct.level)
        c0 = self._apply_auto(ct.c0, key.galois_elt, view)
        c1 = self._apply_auto(ct.c1, key.galois_elt, view)
        ks = self._key_switch(c1, key, ct.level)
        return Ciphertext(view.add(c0, ks[0]), ks[1], ct.scale, ct.level)
