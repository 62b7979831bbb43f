"""Backend-independent HE interface: op counters, key containers, composites.

Concrete backends implement the underscore primitives; everything public is
defined here so that counting and composite operations (rotate-and-sum,
blinded inner product, packed similarities) are shared verbatim between the
CKKS backend and the cleartext mock.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import DepthExhausted, EncodingOverflow, LayoutError, LevelMismatch, MissingGaloisKey, ScaleMismatch
from .params import HeParams

OP_KINDS = ("encrypt", "decrypt", "add_plain", "sub_plain", "mul_plain", "rotate", "add_cipher")

# Half-width of the uniform blinding noise placed in non-result slots.
BLIND_MAGNITUDE = 256.0


class OpCounter:
    """Monotone per-operation counters; safe under concurrent increments."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = dict.fromkeys(OP_KINDS, 0)

    def bump(self, kind: str, n: int = 1) -> None:
        with self._lock:
            self._counts[kind] += n

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def __getitem__(self, kind: str) -> int:
        with self._lock:
            return self._counts[kind]


def counter_delta(after: dict[str, int], before: dict[str, int]) -> dict[str, int]:
    return {k: after[k] - before.get(k, 0) for k in after if after[k] != before.get(k, 0)}


@dataclass
class KeyMaterial:
    """Secret key, public key and Galois keys keyed by normalized rotation step.

    ``public()`` strips the secret key; that copy is what clients receive.
    """

    params_digest: bytes
    secret_key: Any
    public_key: Any
    galois_keys: dict[int, Any] = field(default_factory=dict)

    def public(self) -> "KeyMaterial":
        return KeyMaterial(self.params_digest, None, self.public_key, dict(self.galois_keys))


@dataclass
class PackedFeatures:
    chunks: list
    rows: list[int]
    width: int
    level: int

    @property
    def n_rows(self) -> int:
        return sum(self.rows)


def is_power_of_two(x: int) -> bool:
    return x >= 1 and x & (x - 1) == 0


def default_rotation_steps(slot_count: int) -> list[int]:
    """Every power-of-two step up to slot_count/2, in both directions."""
    steps = []
    k = 1
    while k <= slot_count // 2:
        steps.append(k)
        steps.append((-k) % slot_count)
        k *= 2
    return sorted(set(steps))


def blinding_vector(slot_count: int, blind_seed: int) -> np.ndarray:
    """Pseudorandom plaintext that is zero in slot 0 only."""
    rng = np.random.default_rng(np.random.SeedSequence([int(blind_seed) & (2**64 - 1), 0xB11D]))
    v = rng.uniform(-BLIND_MAGNITUDE, BLIND_MAGNITUDE, slot_count)
    v[0] = 0.0
    return v


class HeBackend(ABC):
    kind: str = "abstract"

    def __init__(self, params: HeParams):
        self.params = params
        self.op_counter = OpCounter()

    # -- primitives implemented by each backend ---------------------------------

    @abstractmethod
    def keygen(self, seed: int, rotation_steps=None) -> KeyMaterial: ...

    @abstractmethod
    def _encode(self, values: np.ndarray, level: int, scale: float): ...

    @abstractmethod
    def decode(self, pt) -> np.ndarray: ...

    @abstractmethod
    def _encrypt(self, public_key, pt): ...

    @abstractmethod
    def _decrypt(self, secret_key, ct): ...

    @abstractmethod
    def _add_plain(self, ct, pt, sign: int): ...

    @abstractmethod
    def _mul_plain(self, ct, pt): ...

    @abstractmethod
    def _rotate_step(self, ct, step: int, key): ...

    @abstractmethod
    def _add_cipher(self, a, b): ...

    @abstractmethod
    def _prepare_plains(self, rows: np.ndarray, level: int):
        """Backend-native form of several default-scale plaintexts for ``_packed_mac``."""

    @abstractmethod
    def _packed_mac(self, cts: list, chunks: list) -> list:
        """For each chunk, sum_k cts[k] * chunk[k] followed by a single rescale."""

    def check_encodable(self, coeffs: np.ndarray, level: int) -> None:
        """Raise unless scaled coefficients fit the level modulus with room for one product."""
        bound = min(2.0**62, float(np.prod([float(q) for q in self.params.modulus_chain[: level + 1]])) / 2)
        peak = float(np.max(np.abs(coeffs))) if len(coeffs) else 0.0
        if not np.isfinite(peak) or peak >= bound:
            raise EncodingOverflow(f"scaled coefficient {peak:.3g} exceeds the level-{level} bound {bound:.3g}")

    def rescaled(self, scale: float, level: int) -> float:
        """Scale after a multiply by a plaintext at the default scale and one rescale."""
        return scale * self.params.scale / self.params.modulus_chain[level]

    # -- public operations ------------------------------------------------------

    def encode(self, values, level: int | None = None, scale: float | None = None):
        v = np.asarray(values, dtype=np.float64).ravel()
        if len(v) > self.params.slot_count:
            raise LayoutError(f"{len(v)} values exceed {self.params.slot_count} slots")
        if level is None:
            level = self.params.max_level
        if not 0 <= level <= self.params.max_level:
            raise LevelMismatch(f"level {level} outside [0, {self.params.max_level}]")
        return self._encode(v, level, self.params.scale if scale is None else float(scale))

    def encrypt(self, public_key, pt):
        if not hasattr(pt, "level"):
            pt = self.encode(pt)
        self.op_counter.bump("encrypt")
        return self._encrypt(public_key, pt)

    def decrypt(self, secret_key, ct):
        if secret_key is None:
            raise PermissionError("decryption needs the secret key")
        self.op_counter.bump("decrypt")
        return self._decrypt(secret_key, ct)

    def decrypt_values(self, secret_key, ct) -> np.ndarray:
        return self.decode(self.decrypt(secret_key, ct))

    def _as_plain_like(self, ct, values):
        if hasattr(values, "level"):
            pt = values
            if pt.level != ct.level:
                raise LevelMismatch(f"plaintext level {pt.level} != ciphertext level {ct.level}")
            if not np.isclose(pt.scale, ct.scale, rtol=1e-9, atol=0):
                raise ScaleMismatch(f"plaintext scale {pt.scale} != ciphertext scale {ct.scale}")
            return pt
        return self.encode(values, ct.level, ct.scale)

    def add_plain(self, ct, values):
        pt = self._as_plain_like(ct, values)
        self.op_counter.bump("add_plain")
        return self._add_plain(ct, pt, +1)

    def sub_plain(self, ct, values):
        pt = self._as_plain_like(ct, values)
        self.op_counter.bump("sub_plain")
        return self._add_plain(ct, pt, -1)

    def mul_plain(self, ct, values):
        if ct.level < 1:
            raise DepthExhausted("no level left for a rescale")
        if hasattr(values, "level"):
            pt = values
            if pt.level != ct.level:
                raise LevelMismatch(f"plaintext level {pt.level} != ciphertext level {ct.level}")
        else:
            pt = self.encode(values, ct.level)
        self.op_counter.bump("mul_plain")
        return self._mul_plain(ct, pt)

    def add_cipher(self, a, b):
        if a.level != b.level:
            raise LevelMismatch(f"ciphertext levels differ: {a.level} vs {b.level}")
        if not np.isclose(a.scale, b.scale, rtol=1e-9, atol=0):
            raise ScaleMismatch(f"ciphertext scales differ: {a.scale} vs {b.scale}")
        self.op_counter.bump("add_cipher")
        return self._add_cipher(a, b)

    def rotation_plan(self, k: int, galois_keys: dict) -> list[int]:
        """Key steps whose composition rotates left by ``k``."""
        n = self.params.slot_count
        k %= n
        if k == 0:
            return []
        if k in galois_keys:
            return [k]
        plans = []
        for target, sign in ((k, 1), (n - k, -1)):
            plan, bit = [], 1
            while target:
                if target & 1:
                    plan.append((sign * bit) % n)
                target >>= 1
                bit <<= 1
            plans.append(plan)
        for plan in sorted(plans, key=len):
            if all(s in galois_keys for s in plan):
                return plan
        raise MissingGaloisKey(f"no Galois key composition for rotation by {k}")

    def rotate(self, ct, k: int, galois_keys: dict):
        """Left-rotate slots: result slot i holds input slot (i + k) mod slot_count."""
        plan = self.rotation_plan(k, galois_keys)
        self.op_counter.bump("rotate")
        for step in plan:
            ct = self._rotate_step(ct, step, galois_keys[step])
        return ct

    # -- composites -------------------------------------------------------------

    def rotate_and_sum(self, ct, width: int, galois_keys: dict):
        """Slot ``i*width`` receives the sum of slots ``[i*width, (i+1)*width)``."""
        if not is_power_of_two(width):
            raise LayoutError(f"rotate-and-sum width {width} is not a power of two")
        step = width // 2
        while step >= 1:
            ct = self.add_cipher(ct, self.rotate(ct, step, galois_keys))
            step //= 2
        return ct

    def blinded_inner_product(self, ct, values, L: int, blind_seed: int, galois_keys: dict):
        """Encrypted <ct payload, values> in slot 0, pseudorandom noise elsewhere."""
        if not is_power_of_two(L):
            raise LayoutError(f"class count {L} must be padded to a power of two")
        if L > self.params.slot_count:
            raise LayoutError(f"{L} classes exceed {self.params.slot_count} slots")
        v = np.asarray(values, dtype=np.float64).ravel()
        if len(v) > L:
            raise LayoutError(f"{len(v)} values exceed the declared width {L}")
        prod = self.mul_plain(ct, v)
        acc = self.rotate_and_sum(prod, L, galois_keys)
        return self.add_plain(acc, blinding_vector(self.params.slot_count, blind_seed))

    def encrypt_replicas(self, public_key, vector, width: int) -> list:
        """Encryptions of ``vector`` tiled across all slots, one per cyclic shift.

        Replica ``k`` holds ``vector[(j + k) % width]`` in slot ``j``; together
        they feed ``packed_similarities``.
        """
        if not is_power_of_two(width):
            raise LayoutError(f"replica width {width} is not a power of two")
        n = self.params.slot_count
        c = np.zeros(width)
        v = np.asarray(vector, dtype=np.float64).ravel()
        if len(v) > width:
            raise LayoutError(f"{len(v)} entries exceed width {width}")
        c[: len(v)] = v
        return [self.encrypt(public_key, np.tile(np.roll(c, -k), n // width)) for k in range(width)]

    def pack_features(self, features, width: int, level: int | None = None) -> PackedFeatures:
        """Encode feature rows as the diagonal plaintexts ``packed_similarities`` consumes.

        Diagonal ``k`` of a chunk holds ``row_j[(j + k) % width]`` in slot ``j``.
        Packing depends only on the owner's features, so a peer can reuse it for
        every candidate it is asked about.
        """
        if not is_power_of_two(width):
            raise LayoutError(f"replica width {width} is not a power of two")
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] > width:
            raise LayoutError("features must be a 2-D array no wider than the replica width")
        level = self.params.max_level if level is None else level
        if level < 1:
            raise DepthExhausted("no level left for a rescale")
        n = self.params.slot_count
        padded = np.zeros((len(feats), width))
        padded[:, : feats.shape[1]] = feats
        chunks, rows = [], []
        for start in range(0, len(padded), n):
            block = padded[start : start + n]
            m = len(block)
            j = np.arange(m)
            diagonals = np.zeros((width, n))
            for k in range(width):
                diagonals[k, :m] = block[j, (j + k) % width]
            chunks.append(self._prepare_plains(diagonals, level))
            rows.append(m)
        return PackedFeatures(chunks, rows, width, level)

    def packed_similarities(self, replicas: list, packed) -> list[tuple[Any, int]]:
        """Inner products of the replicated vector with every packed feature row.

        Returns ``(ciphertext, rows_in_chunk)`` pairs; slot ``j`` of chunk ``c``
        is the product with feature row ``c * slot_count + j``. Every slot is an
        intended output, so no blinding is applied.
        """
        width = len(replicas)
        if not isinstance(packed, PackedFeatures):
            packed = self.pack_features(packed, width, replicas[0].level)
        if packed.width != width:
            raise LayoutError(f"features packed for width {packed.width}, got {width} replicas")
        if replicas[0].level != packed.level:
            raise LevelMismatch(f"replica level {replicas[0].level} != packed level {packed.level}")
        if not packed.chunks:
            return []
        self.op_counter.bump("mul_plain", width * len(packed.chunks))
        self.op_counter.bump("add_cipher", (width - 1) * len(packed.chunks))
        cts = self._packed_mac(replicas, packed.chunks)
        return list(zip(cts, packed.rows))
