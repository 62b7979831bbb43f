"""Canonical embedding between slot vectors and real polynomial coefficients.

Slot ``j`` is the evaluation of the plaintext polynomial at ``zeta**(5**j)``
with ``zeta = exp(i*pi/N)``; conjugate roots carry conjugate values, so the
coefficients are real. Both directions are a length-N FFT.
"""

from __future__ import annotations

import numpy as np


class Embedding:
    def __init__(self, ring_degree: int):
        n = ring_degree
        self.ring_degree = n
        self.slots = n // 2
        g = np.empty(self.slots, dtype=np.int64)
        x = 1
        for j in range(self.slots):
            g[j] = x
            x = x * 5 % (2 * n)
        self._pos = (g - 1) // 2
        self._conj_pos = (2 * n - g - 1) // 2
        self._twist = np.exp(1j * np.pi * np.arange(n) / n)

    def to_coeffs(self, slots: np.ndarray) -> np.ndarray:
        """Real coefficient vector whose evaluations are ``slots``."""
        z = np.zeros(self.slots, dtype=np.complex128)
        z[: len(slots)] = slots
        n = self.ring_degree
        e = np.zeros(n, dtype=np.complex128)
        e[self._pos] = z
        e[self._conj_pos] = np.conj(z)
        return (np.fft.fft(e) / n * np.conj(self._twist)).real

    def to_slots(self, coeffs: np.ndarray) -> np.ndarray:
        n = self.ring_degree
        ev = n * np.fft.ifft(np.asarray(coeffs, dtype=np.float64) * self._twist)
        return ev[self._pos]
