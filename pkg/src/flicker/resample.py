"""Local imbalance correction: augmentation, redundancy-aware removal and baselines.

A ``SampleStore`` is the sample set held by one client. Over-sampling copies
jittered minority samples; under-sampling removes majority samples that are
redundant both locally (high mean cosine similarity to the rest of the class)
and globally (similar to a large share of peer samples, checked under
encryption).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CannotAugment, ConfigError
from .he.backend import HeBackend, PackedFeatures, is_power_of_two
from .imbalance import LabelDistribution, local_imbalance, round_half_away

log = logging.getLogger(__name__)

FeatureExtractor = Callable[[np.ndarray], np.ndarray]
Augmenter = Callable[[np.ndarray, np.random.Generator], np.ndarray]

# Sort keys are rounded so that float noise cannot reorder exact ties.
_KEY_DECIMALS = 12


def jitter_augmenter(scale: float = 0.05) -> Augmenter:
    """Additive Gaussian jitter of the payload."""

    def augment(payloads: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return payloads + rng.normal(0.0, scale, payloads.shape)

    return augment


def _identity(payloads: np.ndarray) -> np.ndarray:
    return payloads


def unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized copy of ``x`` and the mask of rows with nonzero norm."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    ok = norms > 0
    out = np.zeros_like(x)
    out[ok] = x[ok] / norms[ok, None]
    return out, ok


class SampleStore:
    """Labelled payloads owned by a single client.

    Sample ids are stable and never reused. ``version`` changes on every
    mutation so derived data (packed features) can be cached safely.
    """

    def __init__(
        self,
        labels,
        payloads=None,
        n_classes: int | None = None,
        feature_extractor: Optional[FeatureExtractor] = None,
        augmenter: Optional[Augmenter] = None,
        seed: int = 0,
    ):
        self.labels = np.asarray(labels, dtype=np.int64).copy()
        n = len(self.labels)
        self.payloads = np.zeros((n, 0)) if payloads is None else np.asarray(payloads, dtype=np.float64).copy()
        if self.payloads.ndim != 2 or len(self.payloads) != n:
            raise ValueError("payloads must be a 2-D array with one row per label")
        self.n_classes = int(n_classes if n_classes is not None else (self.labels.max() + 1 if n else 2))
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")
        self.ids = np.arange(n, dtype=np.int64)
        self._next_id = n
        self.feature_extractor = feature_extractor or _identity
        self.augmenter = augmenter or jitter_augmenter()
        self.rng = np.random.default_rng(seed)
        self.version = 0
        self.added = 0
        self.removed = 0
        self._cache: dict = {}

    @classmethod
    def from_counts(cls, counts, payload_dim: int = 0, seed: int = 0, **kw) -> "SampleStore":
        """Store with the given per-class counts and random (or empty) payloads."""
        counts = [int(c) for c in counts]
        labels = np.repeat(np.arange(len(counts)), counts)
        rng = np.random.default_rng(seed)
        payloads = rng.normal(size=(len(labels), payload_dim))
        return cls(labels, payloads, n_classes=len(counts), seed=seed, **kw)

    def __len__(self) -> int:
        return len(self.labels)

    def counts(self) -> LabelDistribution:
        return LabelDistribution(np.bincount(self.labels, minlength=self.n_classes))

    @property
    def li(self) -> float:
        return local_imbalance(self.counts())

    def class_positions(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels == j)

    def minority_class(self) -> int:
        return int(np.argmin(self.counts().as_array()))

    def majority_class(self) -> int:
        return int(np.argmax(self.counts().as_array()))

    def features(self, positions=None) -> tuple[np.ndarray, np.ndarray]:
        """Unit-norm feature vectors and the nonzero mask for the given rows."""
        p = self.payloads if positions is None else self.payloads[positions]
        if len(p) == 0:
            return np.zeros((0, 0)), np.zeros(0, dtype=bool)
        return unit_rows(self.feature_extractor(p))

    def append(self, label: int, payloads: np.ndarray) -> np.ndarray:
        k = len(payloads)
        new_ids = np.arange(self._next_id, self._next_id + k, dtype=np.int64)
        self._next_id += k
        self.labels = np.concatenate([self.labels, np.full(k, label, dtype=np.int64)])
        self.payloads = np.concatenate([self.payloads, np.asarray(payloads, dtype=np.float64)])
        self.ids = np.concatenate([self.ids, new_ids])
        self.added += k
        self._touch()
        return new_ids

    def remove_ids(self, ids) -> int:
        keep = ~np.isin(self.ids, np.asarray(list(ids), dtype=np.int64))
        n = int((~keep).sum())
        if n:
            self.labels, self.payloads, self.ids = self.labels[keep], self.payloads[keep], self.ids[keep]
            self.removed += n
            self._touch()
        return n

    def _touch(self):
        self.version += 1
        self._cache.clear()

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]


# -- over-sampling ---------------------------------------------------------------


def oversample_count(li: float) -> int:
    if not 0 < li < 1:
        raise ValueError(f"local imbalance must lie in (0, 1) to over-sample, got {li}")
    return round_half_away(1.0 / li)


def oversample_step(store: SampleStore, li: float | None = None) -> int:
    """Augment the minority class with nearest-integer(1/li) new samples.

    Sources are drawn uniformly from the minority class, without replacement
    when the class is large enough and with replacement otherwise.
    """
    j = store.minority_class()
    pos = store.class_positions(j)
    if len(pos) == 0:
        raise CannotAugment(f"class {j} has no samples to augment")
    count = oversample_count(store.li if li is None else li)
    src = store.rng.choice(pos, size=count, replace=count > len(pos))
    store.append(j, store.augmenter(store.payloads[src], store.rng))
    return count


# -- under-sampling ----------------------------------------------------------------


@dataclass(frozen=True)
class RedundancyPolicy:
    theta: float = 10.0
    eta: float = 0.98
    chi: float = 50.0

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if not 0 < self.theta <= 100:
            raise ConfigError(f"theta must lie in (0, 100], got {self.theta}")
        if not 0 < self.chi <= 100:
            raise ConfigError(f"chi must lie in (0, 100], got {self.chi}")


@dataclass(frozen=True)
class Candidate:
    sample_id: int
    feature: np.ndarray
    mean_similarity: float
    variance_similarity: float


@dataclass
class RedundancyCandidates:
    majority_class: int
    l_max: int
    entries: list[Candidate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[int]:
        return [c.sample_id for c in self.entries]


def similarity_stats(features: np.ndarray, block: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each row's cosine similarities to the other rows.

    ``features`` must be unit-norm. The matrix is formed block by block so
    memory stays bounded for large classes.
    """
    m = len(features)
    if m < 2:
        raise ValueError("need at least two vectors")
    s1 = np.empty(m)
    s2 = np.empty(m)
    for start in range(0, m, block):
        rows = features[start : start + block]
        sims = rows @ features.T
        idx = np.arange(len(rows))
        sims[idx, start + idx] = 0.0
        s1[start : start + len(rows)] = sims.sum(axis=1)
        s2[start : start + len(rows)] = np.einsum("ij,ij->i", sims, sims)
    mean = s1 / (m - 1)
    var = np.maximum(s2 / (m - 1) - mean**2, 0.0)
    return mean, var


def local_redundancy_candidates(store: SampleStore, theta: float) -> RedundancyCandidates:
    """Top ceil(theta% * l_max) majority samples by mean similarity, highest variance first."""
    if not 0 < theta <= 100:
        raise ConfigError(f"theta must lie in (0, 100], got {theta}")
    j = store.majority_class()
    pos = store.class_positions(j)
    out = RedundancyCandidates(j, len(pos))
    feats, ok = store.features(pos)
    pos, feats = pos[ok], feats[ok]
    if len(pos) < 2:
        return out
    mean, var = similarity_stats(feats)
    ids = store.ids[pos]
    k = min(math.ceil(theta / 100 * out.l_max - 1e-9), len(pos))
    by_mean = np.lexsort((ids, -np.round(mean, _KEY_DECIMALS)))[:k]
    order = by_mean[np.lexsort((ids[by_mean], -np.round(var[by_mean], _KEY_DECIMALS)))]
    out.entries = [Candidate(int(ids[i]), feats[i], float(mean[i]), float(var[i])) for i in order]
    return out


@dataclass
class PeerView:
    """A peer's unit-norm feature vectors, pre-packed for encrypted similarity."""

    client_id: int
    n_features: int
    packed: PackedFeatures | np.ndarray


def feature_width(k: int) -> int:
    w = 1
    while w < k:
        w *= 2
    return w


def peer_view(client_id: int, store: SampleStore, backend: HeBackend, width: int) -> PeerView:
    if not is_power_of_two(width):
        raise ValueError("width must be a power of two")

    def build():
        feats, _ = store.features()
        if len(feats) == 0:
            return PeerView(client_id, 0, np.zeros((0, width)))
        return PeerView(client_id, len(feats), backend.pack_features(feats, width))

    return store.cached(("peer", backend.kind, backend.params.digest(), width), build)


@dataclass(frozen=True)
class GlobalCheck:
    remove: bool
    above: int
    total: int


# notify(kind, sender, receiver, payload_type, payload_size)
Notify = Callable[[str, object, object, str, int], None]


def global_redundancy_check(
    candidate: np.ndarray,
    peers: Sequence[PeerView],
    policy: RedundancyPolicy,
    backend: HeBackend,
    server,
    sender=None,
    notify: Notify | None = None,
) -> GlobalCheck:
    """Decide whether enough peer samples resemble ``candidate`` to drop it.

    The dominant client encrypts the candidate under the server key and the
    server relays the ciphertext to each peer. Each peer evaluates the
    similarities on ciphertext, the server decrypts them and forwards the
    plain similarity values to the dominant. ``server`` must expose ``keys``.
    """
    notify = notify or (lambda *a: None)
    live = [p for p in peers if p.n_features > 0]
    total = sum(p.n_features for p in live)
    if total == 0:
        return GlobalCheck(False, 0, 0)
    width = live[0].packed.width
    replicas = backend.encrypt_replicas(server.keys.public_key, candidate, width)
    notify("redundancy_query", sender, "server", "ciphertext", len(replicas))
    above = seen = 0
    needed = policy.chi * total
    for peer in live:
        # stop querying once the remaining peers cannot change the decision
        if above * 100 >= needed or (above + total - seen) * 100 < needed:
            break
        seen += peer.n_features
        notify("redundancy_query", "server", peer.client_id, "ciphertext", len(replicas))
        results = backend.packed_similarities(replicas, peer.packed)
        notify("redundancy_reply", peer.client_id, "server", "ciphertext", len(results))
        sims = np.concatenate([backend.decrypt_values(server.keys.secret_key, ct)[:m] for ct, m in results])
        notify("redundancy_similarities", "server", sender, "similarities", len(sims))
        above += int(np.count_nonzero(sims > policy.eta))
    return GlobalCheck(above * 100 >= policy.chi * total, above, total)


def undersample_step(
    store: SampleStore,
    peers: Sequence[PeerView],
    policy: RedundancyPolicy,
    backend: HeBackend,
    server,
    sender=None,
    notify: Notify | None = None,
) -> int:
    """Remove majority samples that are both locally and globally redundant."""
    candidates = local_redundancy_candidates(store, policy.theta)
    doomed = [
        c.sample_id
        for c in candidates
        if global_redundancy_check(c.feature, peers, policy, backend, server, sender, notify).remove
    ]
    removed = store.remove_ids(doomed)
    log.debug("under-sampling removed %d of %d candidates", removed, len(candidates))
    return removed


# -- alternation --------------------------------------------------------------------


@dataclass(frozen=True)
class StepReport:
    action: Optional[str]  # "over", "under" or None
    added: int
    removed: int
    li_before: float
    li_after: float
    admissible: bool


class AlternatingResampler:
    """One correction step per call: over-sampling, then under-sampling, and so on.

    ``undersampler`` performs one under-sampling step on the store and returns
    the removal count; without it under-sampling is never admissible.
    """

    def __init__(self, store: SampleStore, undersampler: Callable[[SampleStore], int] | None = None):
        self.store = store
        self.undersampler = undersampler
        self.next_action = "over"
        self.history: list[str] = []

    def _over(self) -> tuple[int, int]:
        try:
            return oversample_step(self.store), 0
        except CannotAugment:
            return 0, 0

    def _under(self) -> tuple[int, int]:
        if self.undersampler is None:
            return 0, 0
        return 0, self.undersampler(self.store)

    def step(self, client_threshold: float) -> StepReport:
        li = self.store.li
        if li >= client_threshold:
            return StepReport(None, 0, 0, li, li, False)
        first = self.next_action
        order = [first, "under" if first == "over" else "over"]
        for action in order:
            added, removed = self._over() if action == "over" else self._under()
            if added or removed:
                self.next_action = "under" if action == "over" else "over"
                self.history.append(action)
                return StepReport(action, added, removed, li, self.store.li, True)
        return StepReport(None, 0, 0, li, li, False)


def alternate_resample(resampler: AlternatingResampler, client_threshold: float) -> StepReport:
    return resampler.step(client_threshold)


# -- non-interactive baselines ----------------------------------------------------------


@dataclass(frozen=True)
class BaselineReport:
    steps: int
    added: int
    removed: int
    li_after: float
    exhausted: bool


def baseline_undersample_all(
    stores: Sequence[SampleStore],
    theta: float = 10.0,
    client_threshold: float = 0.05,
    strict_eta: float | None = None,
) -> list[BaselineReport]:
    """Each client drops its locally redundant majority samples until balanced enough.

    With ``strict_eta`` set, a candidate is only dropped when its mean
    similarity exceeds that value, so clients with distinct samples exhaust.
    """
    reports = []
    for store in stores:
        steps = removed = 0
        exhausted = False
        while store.li < client_threshold:
            cands = local_redundancy_candidates(store, theta)
            ids = [c.sample_id for c in cands if strict_eta is None or c.mean_similarity > strict_eta]
            n = store.remove_ids(ids)
            if n == 0:
                exhausted = True
                break
            steps += 1
            removed += n
        reports.append(BaselineReport(steps, 0, removed, store.li, exhausted))
    return reports


def baseline_oversample_all(stores: Sequence[SampleStore], client_threshold: float = 0.05) -> list[BaselineReport]:
    """Each client augments its minority class until its own threshold is met."""
    reports = []
    for store in stores:
        steps = added = 0
        exhausted = False
        while store.li < client_threshold:
            try:
                added += oversample_step(store)
            except CannotAugment:
                exhausted = True
                break
            steps += 1
        reports.append(BaselineReport(steps, added, 0, store.li, exhausted))
    return reports
