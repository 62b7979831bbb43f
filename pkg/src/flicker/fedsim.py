"""Desk-scale federated training on synthetic Gaussian clusters.

Clients hold samples whose per-class counts follow a scenario table. A
multinomial linear classifier is trained with local SGD and FedAvg; the
harness measures how each imbalance correction changes global accuracy,
normalized accuracy and per-class F1 on a balanced test set.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .imbalance import (
    ImbalanceThresholds,
    classification_report,
    global_distribution,
    global_imbalance,
    normalized_accuracy,
    report_value,
)
from .protocol import ProtocolConfig, run_flicker, verify_op_budget
from .resample import (
    RedundancyPolicy,
    SampleStore,
    baseline_oversample_all,
    baseline_undersample_all,
    jitter_augmenter,
)

log = logging.getLogger(__name__)

CORRECTIONS = ("none", "under", "over", "flicker")


# -- data -------------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    per_client_counts: tuple[tuple[int, ...], ...]
    feature_dim: int = 16
    separation: float = 2.5
    noise_scale: float = 1.0
    test_per_class: int = 500
    aux_per_class: int = 250

    def __post_init__(self):
        rows = tuple(tuple(int(c) for c in r) for r in self.per_client_counts)
        object.__setattr__(self, "per_client_counts", rows)
        if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
            raise ConfigError("count table must be a non-empty N x L table with L >= 2")
        if any(c < 0 for r in rows for c in r):
            raise ConfigError("counts must be non-negative")
        if self.feature_dim < self.n_classes:
            raise ConfigError("feature_dim must be at least the number of classes")
        if self.separation <= 0 or self.noise_scale <= 0:
            raise ConfigError("separation and noise_scale must be positive")
        if self.test_per_class < 1 or self.aux_per_class < 1:
            raise ConfigError("test and auxiliary sets need at least one sample per class")

    @property
    def n_classes(self) -> int:
        return len(self.per_client_counts[0])

    @property
    def n_clients(self) -> int:
        return len(self.per_client_counts)


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class Dataset:
    clients: list[Split]
    test: Split
    aux: Split
    centers: np.ndarray


def class_centers(n_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Centers on scaled orthonormal directions, so every pair is ``separation`` apart."""
    q, _ = np.linalg.qr(rng.normal(size=(dim, n_classes)))
    return q.T * (separation / np.sqrt(2.0))


def _draw(centers, counts, noise, rng) -> Split:
    y = np.repeat(np.arange(len(counts)), counts)
    x = centers[y] + rng.normal(0.0, noise, (len(y), centers.shape[1]))
    return Split(x, y)


def make_dataset(spec: SyntheticDatasetSpec, seed: int) -> Dataset:
    root = np.random.SeedSequence([seed, 0xDA7A])
    c_ss, t_ss, a_ss, *client_ss = root.spawn(3 + spec.n_clients)
    centers = class_centers(spec.n_classes, spec.feature_dim, spec.separation, np.random.default_rng(c_ss))
    clients = [
        _draw(centers, row, spec.noise_scale, np.random.default_rng(ss))
        for row, ss in zip(spec.per_client_counts, client_ss)
    ]
    test = _draw(centers, [spec.test_per_class] * spec.n_classes, spec.noise_scale, np.random.default_rng(t_ss))
    aux = _draw(centers, [spec.aux_per_class] * spec.n_classes, spec.noise_scale, np.random.default_rng(a_ss))
    return Dataset(clients, test, aux, centers)


# -- model ------------------------------------------------------------------------------


@dataclass
class ModelParams:
    """Flat parameters of a multinomial linear classifier: weights (L x d) then biases (L)."""

    vector: np.ndarray
    n_classes: int
    dim: int

    @classmethod
    def zeros(cls, n_classes: int, dim: int) -> "ModelParams":
        return cls(np.zeros(n_classes * dim + n_classes), n_classes, dim)

    @property
    def weights(self) -> np.ndarray:
        return self.vector[: self.n_classes * self.dim].reshape(self.n_classes, self.dim)

    @property
    def biases(self) -> np.ndarray:
        return self.vector[self.n_classes * self.dim :]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.biases

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def copy(self) -> "ModelParams":
        return ModelParams(self.vector.copy(), self.n_classes, self.dim)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(params: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the flat parameters."""
    p = _softmax(params.logits(x))
    n = len(y)
    loss = -float(np.mean(np.log(p[np.arange(n), y] + 1e-300)))
    d = p
    d[np.arange(n), y] -= 1.0
    d /= n
    return loss, np.concatenate([(d.T @ x).ravel(), d.sum(axis=0)])


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 20
    local_epochs: int = 1
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("rounds, local_epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")


def local_train(params: ModelParams, data: Split, config: TrainConfig, rng: np.random.Generator) -> ModelParams:
    """Minibatch SGD on cross-entropy for ``local_epochs`` passes."""
    out = params.copy()
    if len(data) == 0 or config.learning_rate == 0:
        return out
    for _ in range(config.local_epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, g = loss_and_grad(out, data.x[idx], data.y[idx])
            out.vector -= config.learning_rate * g
    return out


def fedavg(param_list: Sequence[ModelParams], sample_counts: Sequence[int]) -> ModelParams:
    counts = np.asarray(sample_counts, dtype=np.float64)
    if len(param_list) != len(counts) or not len(counts):
        raise ValueError("need one sample count per parameter vector")
    if (counts < 0).any() or counts.sum() == 0:
        raise ValueError("sample counts must be non-negative and not all zero")
    dims = {p.vector.shape for p in param_list}
    if len(dims) != 1:
        raise ValueError("parameter vectors differ in shape")
    w = counts / counts.sum()
    vec = np.einsum("i,ij->j", w, np.stack([p.vector for p in param_list]))
    return ModelParams(vec, param_list[0].n_classes, param_list[0].dim)


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray


def evaluate(params: ModelParams, test: Split) -> Evaluation:
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = params.predict(test.x)
    L = params.n_classes
    confusion = np.zeros((L, L), dtype=np.int64)
    np.add.at(confusion, (test.y, pred), 1)
    return Evaluation(100.0 * np.trace(confusion) / len(test), confusion)


def train_feature_extractor(aux: Split, n_classes: int, epochs: int = 50, seed: int = 0) -> ModelParams:
    """Pre-shared K-class model (K = L) trained on the balanced auxiliary split."""
    params = ModelParams.zeros(n_classes, aux.x.shape[1])
    cfg = TrainConfig(rounds=1, local_epochs=epochs, learning_rate=0.05, batch_size=32, seed=seed)
    return local_train(params, aux, cfg, np.random.default_rng([seed, 0xFEA7]))


def run_fedavg(splits: Sequence[Split], test: Split, n_classes: int, config: TrainConfig):
    """``rounds`` of local training plus FedAvg; evaluation after each aggregation."""
    dim = test.x.shape[1]
    global_params = ModelParams.zeros(n_classes, dim)
    client_rngs = [np.random.default_rng([config.seed, 0x7EA1, i]) for i in range(len(splits))]
    accs, last = [], None
    counts = [len(s) for s in splits]
    for _ in range(config.rounds):
        local = [local_train(global_params, s, config, r) for s, r in zip(splits, client_rngs)]
        global_params = fedavg(local, counts)
        last = evaluate(global_params, test)
        accs.append(last.accuracy)
    return global_params, accs, last


# -- experiment ---------------------------------------------------------------------------


@dataclass
class Scenario:
    spec: SyntheticDatasetSpec
    thresholds: ImbalanceThresholds = field(default_factory=ImbalanceThresholds)
    policy: RedundancyPolicy = field(default_factory=RedundancyPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: str = "mock"
    augment_noise: float = 0.05
    he_profile: Optional[object] = None


@dataclass
class ExperimentResult:
    correction: str
    accuracy_curve: list[float]
    normalized_curve: list[float]
    x_total: int
    y_total: int
    final_lds: list[list[int]]
    gi_before: float
    gi_after: float
    per_class: list[dict]
    confusion: list[list[int]]
    samples_added: int
    samples_removed: int
    protocol: Optional[dict] = None
    outcome: object = field(default=None, repr=False)

    @property
    def final_accuracy(self) -> float:
        return self.accuracy_curve[-1]

    @property
    def final_normalized(self) -> float:
        return self.normalized_curve[-1]

    def f1(self, j: int) -> float:
        return self.per_class[j]["f1"]

    def report(self) -> dict:
        d = {
            "correction": self.correction,
            "final_accuracy": report_value(self.final_accuracy),
            "final_normalized_accuracy": report_value(self.final_normalized),
            "x_total": self.x_total,
            "y_total": self.y_total,
            "global_imbalance_before": report_value(self.gi_before),
            "global_imbalance": report_value(self.gi_after),
            "samples_added": self.samples_added,
            "samples_removed": self.samples_removed,
            "distribution": self.final_lds,
            "per_class": [{k: report_value(v) for k, v in m.items()} for m in self.per_class],
            "confusion": self.confusion,
        }
        if self.protocol is not None:
            d["protocol"] = self.protocol
        return d

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "accuracy", "normalized_accuracy"])
        for i, (a, n) in enumerate(zip(self.accuracy_curve, self.normalized_curve), start=1):
            w.writerow([i, f"{a:.4f}", f"{n:.4f}"])
        return buf.getvalue()


def build_stores(data: Dataset, extractor: ModelParams, spec: SyntheticDatasetSpec, seed: int, noise: float):
    return [
        SampleStore(
            split.y,
            split.x,
            n_classes=spec.n_classes,
            feature_extractor=extractor.logits,
            augmenter=jitter_augmenter(noise),
            seed=int(np.random.SeedSequence([seed, 0x5A, i]).generate_state(1)[0]),
        )
        for i, split in enumerate(data.clients)
    ]


def run_experiment(scenario: Scenario, correction: str, seed: int = 0, backend=None) -> ExperimentResult:
    """Generate data, apply one correction, train with FedAvg, and report."""
    if correction not in CORRECTIONS:
        raise ConfigError(f"unknown correction {correction!r}; choose from {CORRECTIONS}")
    spec = scenario.spec
    data = make_dataset(spec, seed)
    extractor = train_feature_extractor(data.aux, spec.n_classes, seed=seed)
    stores = build_stores(data, extractor, spec, seed, scenario.augment_noise)
    x_total = sum(len(s) for s in stores)
    gi_before = global_imbalance(global_distribution([s.counts() for s in stores]))
    th = scenario.thresholds
    protocol = outcome = None

    if correction == "under":
        baseline_undersample_all(stores, scenario.policy.theta, th.client_threshold)
    elif correction == "over":
        baseline_oversample_all(stores, th.client_threshold)
    elif correction == "flicker":
        cfg = ProtocolConfig(
            n_clients=spec.n_clients,
            thresholds=th,
            policy=scenario.policy,
            backend=scenario.backend,
            seed=seed,
            he_params=scenario.he_profile,
        )
        outcome = run_flicker(cfg, stores, backend=backend)
        protocol = {
            "dominant_sequence": outcome.dominant_sequence,
            "correction_rounds": outcome.correction_rounds,
            "saturated": sorted(outcome.saturated),
            "op_totals": outcome.trace.totals,
            "op_budget_total": outcome.trace.budget_total,
            "op_budget_ok": verify_op_budget(outcome.trace, spec.n_clients, th.max_rounds_per_client),
            "raw_op_totals": outcome.trace.raw_totals,
        }

    splits = [Split(s.payloads, s.labels) for s in stores]
    y_total = sum(len(s) for s in splits)
    _, accs, last = run_fedavg(splits, data.test, spec.n_classes, scenario.train)
    gd_after = global_distribution([s.counts() for s in stores])
    return ExperimentResult(
        correction=correction,
        accuracy_curve=accs,
        normalized_curve=[normalized_accuracy(a, x_total, y_total) for a in accs],
        x_total=x_total,
        y_total=y_total,
        final_lds=[s.counts().to_list() for s in stores],
        gi_before=gi_before,
        gi_after=global_imbalance(gd_after),
        per_class=[asdict(m) for m in classification_report(last.confusion)],
        confusion=last.confusion.tolist(),
        samples_added=sum(s.added for s in stores),
        samples_removed=sum(s.removed for s in stores),
        protocol=protocol,
        outcome=outcome,
    )


def report_json(result: ExperimentResult) -> str:
    return json.dumps(result.report(), indent=2, sort_keys=True) + "\n"
