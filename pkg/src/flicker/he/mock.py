"""Cleartext stand-in for the CKKS backend.

Carries slot vectors in float64 with the same level/scale bookkeeping, the
same error conditions and the same op counters, so protocol runs can be
compared operation-for-operation against real encryption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import HeBackend, KeyMaterial, default_rotation_steps
from .encoding import Embedding
from .params import HeParams


@dataclass
class MockPlaintext:
    values: np.ndarray
    scale: float
    level: int


@dataclass
class MockCiphertext:
    values: np.ndarray
    scale: float
    level: int


@dataclass(frozen=True)
class MockKey:
    seed: int
    role: str


class CleartextMockBackend(HeBackend):
    kind = "mock"

    def __init__(self, params: HeParams, seed: int = 0):
        super().__init__(params)
        self.embedding = Embedding(params.ring_degree)

    def keygen(self, seed: int, rotation_steps=None) -> KeyMaterial:
        n = self.params.slot_count
        steps = default_rotation_steps(n) if rotation_steps is None else rotation_steps
        gks = {k: MockKey(seed, f"galois:{k}") for k in sorted({int(s) % n for s in steps} - {0})}
        return KeyMaterial(self.params.digest(), MockKey(seed, "secret"), MockKey(seed, "public"), gks)

    def _encode(self, values, level, scale):
        # same overflow rule as CKKS so both backends fail on the same inputs
        self.check_encodable(self.embedding.to_coeffs(values) * scale, level)
        v = np.zeros(self.params.slot_count)
        v[: len(values)] = values
        return MockPlaintext(v, scale, level)

    def decode(self, pt) -> np.ndarray:
        return pt.values.copy()

    def _encrypt(self, public_key, pt):
        return MockCiphertext(pt.values.copy(), pt.scale, pt.level)

    def _decrypt(self, secret_key, ct):
        return MockPlaintext(ct.values.copy(), ct.scale, ct.level)

    def _add_plain(self, ct, pt, sign):
        return MockCiphertext(ct.values + sign * pt.values, ct.scale, ct.level)

    def _add_cipher(self, a, b):
        return MockCiphertext(a.values + b.values, a.scale, a.level)

    def _mul_plain(self, ct, pt):
        scale = ct.scale * pt.scale / self.params.modulus_chain[ct.level]
        return MockCiphertext(ct.values * pt.values, scale, ct.level - 1)

    def _prepare_plains(self, rows, level):
        return np.asarray(rows, dtype=np.float64).copy()

    def _packed_mac(self, cts, chunks):
        level = cts[0].level
        scale = cts[0].scale * self.params.scale / self.params.modulus_chain[level]
        return [
            MockCiphertext(sum(ct.values * m[k] for k, ct in enumerate(cts)), scale, level - 1)
            for m in chunks
        ]

    def _rotate_step(self, ct, step, key):
        return MockCiphertext(np.roll(ct.values, -step), ct.scale, ct.level)
