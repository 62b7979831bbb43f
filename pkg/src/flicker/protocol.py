"""The four-step imbalance-correction protocol over a simulated network.

Steps: encrypted ring aggregation of label counts, localization of the
dominant client by encrypted cosine similarity, local correction at the
dominant, and an encrypted update of the global counts. The loop repeats
until the global imbalance reaches the server threshold or every client is
saturated.

Every message goes through ``Network``, which records a trace event with a
logical timestamp, the payload type, and the HE operations it cost. Costs are
kept twice: the raw primitive counters, and a protocol-level ledger in which
each encrypt, decrypt, ring addition, client-side similarity composite, and
encrypted update counts as one operation.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import AggregationIntegrityError, ConfigError, NoCandidateError, ProtocolViolation
from .he import HeBackend, KeyMaterial, make_backend
from .he.backend import counter_delta
from .he.params import HeParams
from .imbalance import (
    ImbalanceThresholds,
    LabelDistribution,
    global_imbalance,
    local_imbalance,
    report_value,
)
from .resample import (
    AlternatingResampler,
    RedundancyPolicy,
    SampleStore,
    feature_width,
    peer_view,
    undersample_step,
)

log = logging.getLogger(__name__)

TRACE_SCHEMA = "flicker-trace/1"
# Decrypted counts farther than this from an integer mean the ciphertext is corrupt.
INTEGRITY_TOLERANCE = 0.25
# Similarities within this margin of the best one count as a tie.
ARGMAX_TIE_TOLERANCE = 1e-4
BUDGET_CATEGORIES = ("ring", "localization", "update")
SERVER = "server"


def op_budget(n_clients: int, max_rounds: int) -> int:
    """Worst-case protocol-level operation count: 2NM + 3N + 2."""
    return 2 * n_clients * max_rounds + 3 * n_clients + 2


def op_budget_with_relocalization(n_clients: int, max_rounds: int) -> int:
    """Worst case once repeated localizations are counted: 2NM + N^2 + 3N + 1.

    A localization over k eligible clients costs 2k + 1 and at most N of them
    can happen with k = N, N-1, ..., 1, which ``op_budget`` does not allow for
    when N > 1.
    """
    n = n_clients
    return 2 * n * max_rounds + n * n + 3 * n + 1


# -- configuration and parties --------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    n_clients: int
    thresholds: ImbalanceThresholds = field(default_factory=ImbalanceThresholds)
    policy: RedundancyPolicy = field(default_factory=RedundancyPolicy)
    ring_order: tuple[int, ...] = ()
    backend: str = "mock"
    seed: int = 0
    he_params: Optional[HeParams] = None

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("need at least one client")
        order = tuple(self.ring_order) or tuple(range(1, self.n_clients + 1))
        if sorted(order) != list(range(1, self.n_clients + 1)):
            raise ConfigError(f"ring_order {order} is not a permutation of 1..{self.n_clients}")
        object.__setattr__(self, "ring_order", order)
        if self.backend not in ("ckks", "mock"):
            raise ConfigError(f"unknown backend {self.backend!r}")


@dataclass
class ClientState:
    id: int
    store: SampleStore
    blind_seed: int
    saturated: bool = False
    rounds_served: int = 0
    resampler: Optional[AlternatingResampler] = None

    @property
    def ld(self) -> LabelDistribution:
        return self.store.counts()

    @property
    def li(self) -> float:
        return local_imbalance(self.ld)


@dataclass
class ServerState:
    backend: HeBackend
    keys: KeyMaterial
    gd: Optional[LabelDistribution] = None
    aggregate_ct: Any = None
    dominant_history: list[tuple[int, int, int]] = field(default_factory=list)
    excluded: set[int] = field(default_factory=set)

    @property
    def gi(self) -> float:
        return global_imbalance(self.gd)

    def decrypt_counts(self, ct, n_classes: int) -> LabelDistribution:
        raw = self.backend.decrypt_values(self.keys.secret_key, ct)[:n_classes]
        rounded = np.rint(raw)
        residue = float(np.max(np.abs(raw - rounded)))
        if residue > INTEGRITY_TOLERANCE:
            raise AggregationIntegrityError(f"decrypted counts are off-integer by {residue:.3g}")
        if (rounded < 0).any():
            raise AggregationIntegrityError(f"decrypted counts are negative: {rounded.tolist()}")
        return LabelDistribution(rounded.astype(np.int64))


# -- trace ------------------------------------------------------------------------------


@dataclass
class TraceEvent:
    seq: int
    round: int
    step: str
    kind: str
    sender: Any
    receiver: Any
    payload_type: str
    payload_owner: Any = None
    booked: dict[str, int] = field(default_factory=dict)
    raw_ops: dict[str, int] = field(default_factory=dict)
    gd: Optional[list[int]] = None
    gi: Optional[float] = None
    dominant: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "round": self.round,
            "step": self.step,
            "kind": self.kind,
            "sender": self.sender,
            "receiver": self.receiver,
            "payload_type": self.payload_type,
            "payload_owner": self.payload_owner,
            "booked": self.booked,
            "raw_ops": self.raw_ops,
            "gd": self.gd,
            "gi": None if self.gi is None else report_value(self.gi),
            "dominant": self.dominant,
        }


@dataclass
class PhaseRecord:
    """Protocol-level cost of one ring pass, localization, or correction round."""

    round: int
    step: str
    participants: int
    booked: int
    dominant: Optional[int]
    gd: list[int]
    gi: float


@dataclass
class ProtocolTrace:
    events: list[TraceEvent] = field(default_factory=list)
    phases: list[PhaseRecord] = field(default_factory=list)
    totals: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BUDGET_CATEGORIES + ("redundancy",), 0))
    raw_totals: dict[str, int] = field(default_factory=dict)

    @property
    def budget_total(self) -> int:
        return sum(self.totals[c] for c in BUDGET_CATEGORIES)

    def add(self, event: TraceEvent) -> None:
        self.events.append(event)
        for cat, n in event.booked.items():
            self.totals[cat] = self.totals.get(cat, 0) + n
        for k, n in event.raw_ops.items():
            self.raw_totals[k] = self.raw_totals.get(k, 0) + n

    def phases_of(self, step: str) -> list[PhaseRecord]:
        return [p for p in self.phases if p.step == step]

    def to_jsonl(self, meta: dict | None = None) -> str:
        header = {"schema": TRACE_SCHEMA, **(meta or {}), "totals": self.totals, "raw_totals": self.raw_totals}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(e.to_json(), sort_keys=True) for e in self.events]
        return "\n".join(lines) + "\n"

    def summary_csv(self, n_classes: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "step", "dominant_id", "gi"] + [f"gd_{j}" for j in range(n_classes)] + ["ckks_ops_cum"])
        cum = 0
        for p in self.phases:
            cum += p.booked
            dom = "" if p.dominant is None else p.dominant
            w.writerow([p.round, p.step, dom, f"{p.gi:.4f}"] + list(p.gd) + [cum])
        return buf.getvalue()


def payload_type(payload) -> str:
    if isinstance(payload, LabelDistribution):
        return "label_distribution"
    if hasattr(payload, "level") and hasattr(payload, "scale"):
        return "ciphertext"
    if isinstance(payload, (list, tuple)) and payload and all(payload_type(p) == "ciphertext" for p in payload):
        return "ciphertext"
    if isinstance(payload, np.ndarray):
        return "vector"
    return "control"


class Network:
    """Deterministic in-process dispatcher that logs every message."""

    def __init__(self, backend: HeBackend, trace: ProtocolTrace):
        self.backend = backend
        self.trace = trace
        self.round = 0
        self.step = "setup"
        self._mark = backend.op_counter.snapshot()

    def _raw_since_mark(self) -> dict[str, int]:
        now = self.backend.op_counter.snapshot()
        delta = counter_delta(now, self._mark)
        self._mark = now
        return delta

    def send(self, sender, receiver, kind: str, payload=None, booked: dict | None = None, server=None, dominant=None):
        """Deliver ``payload`` and record the HE work done since the previous event."""
        ptype = payload_type(payload)
        owner = sender if ptype == "label_distribution" else None
        gd = gi = None
        if server is not None and server.gd is not None:
            gd, gi = server.gd.to_list(), server.gi
        self.trace.add(
            TraceEvent(
                seq=len(self.trace.events),
                round=self.round,
                step=self.step,
                kind=kind,
                sender=sender,
                receiver=receiver,
                payload_type=ptype,
                payload_owner=owner,
                booked=dict(booked or {}),
                raw_ops=self._raw_since_mark(),
                gd=gd,
                gi=gi,
                dominant=dominant,
            )
        )
        return payload

    def note(self, sender, receiver, kind: str, ptype: str, size: int) -> None:
        """Record a message whose payload is summarized rather than passed (redundancy checks)."""
        raw = self._raw_since_mark()
        self.trace.add(
            TraceEvent(
                seq=len(self.trace.events),
                round=self.round,
                step=self.step,
                kind=kind,
                sender=sender,
                receiver=receiver,
                payload_type=ptype,
                booked={"redundancy": sum(raw.values())} if raw else {},
                raw_ops=raw,
            )
        )

    def phase(self, step: str, participants: int, server: ServerState, dominant=None) -> "_Phase":
        return _Phase(self, step, participants, server, dominant)


class _Phase:
    def __init__(self, net: Network, step, participants, server, dominant):
        self.net, self.step, self.participants, self.server, self.dominant = net, step, participants, server, dominant

    def __enter__(self):
        self.net.step = self.step
        self._start = sum(self.net.trace.totals[c] for c in BUDGET_CATEGORIES)
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            booked = self.net.trace.budget_total - self._start
            gd = self.server.gd.to_list() if self.server.gd is not None else []
            gi = self.server.gi if self.server.gd is not None else 0.0
            self.net.trace.phases.append(
                PhaseRecord(self.net.round, self.step, self.participants, booked, self.dominant, gd, gi)
            )
        return False


# -- protocol steps -------------------------------------------------------------------------


def _padded(v, width: int) -> np.ndarray:
    out = np.zeros(width)
    out[: len(v)] = v
    return out


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def ring_aggregate(clients: Sequence[ClientState], server: ServerState, net: Network, ring_order=None):
    """Encrypted running sum of label counts along the ring, decrypted by the server."""
    be = server.backend
    by_id = {c.id: c for c in clients}
    order = list(ring_order or sorted(by_id))
    pk = server.keys.public_key
    n_classes = len(clients[0].ld)
    if any(len(c.ld) != n_classes for c in clients):
        raise ValueError("clients hold distributions of different lengths")
    with net.phase("ring", len(order), server):
        ct = None
        for pos, cid in enumerate(order):
            counts = by_id[cid].ld.as_array().astype(np.float64)
            if ct is None:
                ct = be.encrypt(pk, counts)
                booked = {"ring": 1}
            else:
                ct = be.add_plain(ct, counts)
                booked = {"ring": 1}
            receiver = order[pos + 1] if pos + 1 < len(order) else SERVER
            net.send(cid, receiver, "ring_partial_sum", ct, booked)
        server.aggregate_ct = ct
        server.gd = server.decrypt_counts(ct, n_classes)
        net.send(SERVER, SERVER, "aggregate_decrypted", None, {"ring": 1}, server=server)
    return server.gd


def _blind_seed(base: int, localization: int) -> int:
    return int(np.random.SeedSequence([base, localization]).generate_state(1, np.uint64)[0])


def localize_dominant(
    server: ServerState,
    clients: Sequence[ClientState],
    net: Network,
    excluded: set[int] | None = None,
    localization_index: int = 0,
) -> int:
    """Client whose normalized counts are most aligned with the normalized global counts."""
    excluded = server.excluded if excluded is None else excluded
    active = sorted((c for c in clients if c.id not in excluded), key=lambda c: c.id)
    if not active:
        raise NoCandidateError("every client is excluded")
    be = server.backend
    n_classes = len(server.gd)
    width = feature_width(n_classes)
    public = server.keys.public()
    with net.phase("localization", len(active), server) as ph:
        gd_ct = be.encrypt(public.public_key, _padded(_unit(server.gd.as_array()), width))
        net.send(SERVER, SERVER, "encrypt_global_direction", None, {"localization": 1})
        sims = {}
        for c in active:
            net.send(SERVER, c.id, "global_direction", gd_ct)
            seed = _blind_seed(c.blind_seed, localization_index)
            reply = be.blinded_inner_product(gd_ct, _unit(c.ld.as_array()), width, seed, public.galois_keys)
            net.send(c.id, SERVER, "blinded_similarity", reply, {"localization": 1})
            sims[c.id] = float(be.decrypt_values(server.keys.secret_key, reply)[0])
            net.send(SERVER, SERVER, "similarity_decrypted", None, {"localization": 1})
        best = max(sims.values())
        dominant = min(cid for cid, s in sims.items() if s >= best - ARGMAX_TIE_TOLERANCE)
        ph.dominant = dominant
        log.debug("similarities %s -> dominant %d", sims, dominant)
    return dominant


@dataclass
class CorrectionResult:
    new_ld: LabelDistribution
    saturated: bool
    action: Optional[str]
    added: int
    removed: int
    updated: bool


def _check_direction(action: str, old: LabelDistribution, new: LabelDistribution) -> None:
    d = new.as_array() - old.as_array()
    if action == "over" and not (d.sum() > 0 and (d >= 0).all()):
        raise ProtocolViolation(f"claimed over-sampling but the global counts changed by {d.tolist()}")
    if action == "under" and not (d.sum() < 0 and (d <= 0).all()):
        raise ProtocolViolation(f"claimed under-sampling but the global counts changed by {d.tolist()}")


def correction_round(
    server: ServerState,
    dominant: ClientState,
    net: Network,
    thresholds: ImbalanceThresholds,
    tamper=None,
) -> CorrectionResult:
    """One local correction step at the dominant plus the encrypted global update.

    ``tamper`` (tests only) may rewrite the ciphertext the dominant returns.
    """
    be = server.backend
    with net.phase("correction", 1, server, dominant.id):
        net.send(SERVER, dominant.id, "aggregate_ciphertext", server.aggregate_ct)
        old = dominant.ld
        if dominant.li >= thresholds.client_threshold or dominant.rounds_served >= thresholds.max_rounds_per_client:
            dominant.saturated = True
            net.send(dominant.id, SERVER, "saturation", {"saturated": True}, server=server, dominant=dominant.id)
            return CorrectionResult(old, True, None, 0, 0, False)
        report = dominant.resampler.step(thresholds.client_threshold)
        net.step = "correction"
        new = dominant.ld
        if not report.admissible:
            dominant.saturated = True
            net.send(dominant.id, SERVER, "saturation", {"saturated": True}, server=server, dominant=dominant.id)
            return CorrectionResult(new, True, None, 0, 0, False)
        dominant.rounds_served += 1
        ct = be.add_plain(be.sub_plain(server.aggregate_ct, old.as_array()), new.as_array())
        if tamper is not None:
            ct = tamper(ct)
        saturated = (
            report.li_after >= thresholds.client_threshold
            or dominant.rounds_served >= thresholds.max_rounds_per_client
        )
        dominant.saturated = saturated
        net.send(dominant.id, SERVER, "encrypted_update", ct, {"update": 1}, dominant=dominant.id)
        net.send(dominant.id, SERVER, "update_claim", {"action": report.action, "saturated": saturated})
        old_gd = server.gd
        new_gd = server.decrypt_counts(ct, len(old_gd))
        _check_direction(report.action, old_gd, new_gd)
        server.aggregate_ct, server.gd = ct, new_gd
        net.send(SERVER, SERVER, "update_decrypted", None, {"update": 1}, server=server, dominant=dominant.id)
        return CorrectionResult(new, saturated, report.action, report.added, report.removed, True)


@dataclass
class FlickerOutcome:
    gd: LabelDistribution
    gi: float
    initial_gd: LabelDistribution
    initial_gi: float
    lds: dict[int, LabelDistribution]
    trace: ProtocolTrace
    dominant_sequence: list[int]
    saturated: set[int]
    correction_rounds: int
    samples_added: int
    samples_removed: int
    server_threshold: float

    @property
    def reached_threshold(self) -> bool:
        return self.gi >= self.server_threshold

    @property
    def all_saturated(self) -> bool:
        return len(self.saturated) == len(self.lds)


def build_clients(
    stores: Sequence[SampleStore],
    config: ProtocolConfig,
) -> list[ClientState]:
    seeds = np.random.SeedSequence([config.seed, 0xB1]).spawn(len(stores))
    return [
        ClientState(i + 1, store, int(s.generate_state(1, np.uint64)[0])) for i, (store, s) in enumerate(zip(stores, seeds))
    ]


def make_server(config: ProtocolConfig, n_classes: int, backend: HeBackend | None = None) -> ServerState:
    be = backend or make_backend(config.backend, config.he_params, seed=config.seed)
    width = feature_width(n_classes)
    steps = [1 << i for i in range(width.bit_length() - 1)]
    keys = be.keygen(config.seed, rotation_steps=steps)
    return ServerState(be, keys)


def _feature_dim(store: SampleStore) -> int:
    if len(store) == 0:
        return 0
    return int(np.asarray(store.feature_extractor(store.payloads[:1])).shape[1])


def _attach_resamplers(clients: list[ClientState], server: ServerState, config: ProtocolConfig, net: Network):
    be = server.backend

    for c in clients:
        others = [o for o in clients if o.id != c.id]

        def undersampler(store, me=c, others=others):
            width = feature_width(max(_feature_dim(store), 1))
            peers = [peer_view(o.id, o.store, be, width) for o in others]
            net.step = "redundancy"
            return undersample_step(store, peers, config.policy, be, server, sender=me.id, notify=net.note)

        c.resampler = AlternatingResampler(c.store, undersampler)


def run_flicker(
    config: ProtocolConfig,
    stores: Sequence[SampleStore],
    backend: HeBackend | None = None,
) -> FlickerOutcome:
    """Full protocol run; the stores are corrected in place."""
    if len(stores) != config.n_clients:
        raise ConfigError(f"config declares {config.n_clients} clients but {len(stores)} stores were given")
    n_classes = stores[0].n_classes
    server = make_server(config, n_classes, backend)
    trace = ProtocolTrace()
    net = Network(server.backend, trace)
    clients = build_clients(stores, config)
    _attach_resamplers(clients, server, config, net)
    by_id = {c.id: c for c in clients}
    th = config.thresholds
    added0 = sum(s.added for s in stores)
    removed0 = sum(s.removed for s in stores)

    ring_aggregate(clients, server, net, config.ring_order)
    initial_gd, initial_gi = server.gd, server.gi
    dominant: Optional[ClientState] = None
    sequence: list[int] = []
    rounds = updates = localizations = 0
    while server.gi < th.server_threshold:
        if dominant is None or dominant.saturated:
            if dominant is not None:
                server.excluded.add(dominant.id)
            if len(server.excluded) == len(clients):
                break
            net.round = rounds + 1
            dominant = by_id[localize_dominant(server, clients, net, server.excluded, localizations)]
            localizations += 1
            sequence.append(dominant.id)
        rounds += 1
        net.round = rounds
        result = correction_round(server, dominant, net, th)
        updates += result.updated
        server.dominant_history.append((rounds, dominant.id, dominant.rounds_served))
        if result.saturated:
            dominant.saturated = True
    if dominant is not None and dominant.saturated:
        server.excluded.add(dominant.id)
    trace.raw_totals = {k: v for k, v in server.backend.op_counter.snapshot().items() if v}
    outcome = FlickerOutcome(
        gd=server.gd,
        gi=server.gi,
        initial_gd=initial_gd,
        initial_gi=initial_gi,
        lds={c.id: c.ld for c in clients},
        trace=trace,
        dominant_sequence=sequence,
        saturated=set(server.excluded),
        correction_rounds=updates,
        samples_added=sum(s.added for s in stores) - added0,
        samples_removed=sum(s.removed for s in stores) - removed0,
        server_threshold=th.server_threshold,
    )
    return outcome


def verify_op_budget(trace: ProtocolTrace, n_clients: int, max_rounds: int) -> bool:
    return trace.budget_total <= op_budget(n_clients, max_rounds)


# -- audits ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class PrivacyFinding:
    seq: int
    sender: Any
    receiver: Any
    payload_owner: Any


def privacy_audit(trace: ProtocolTrace) -> list[PrivacyFinding]:
    """Messages that carry a plaintext label distribution to anyone but its owner."""
    return [
        PrivacyFinding(e.seq, e.sender, e.receiver, e.payload_owner)
        for e in trace.events
        if e.payload_type == "label_distribution" and e.receiver != e.payload_owner
    ]


def audit_trace_file(text: str) -> list[dict]:
    """Same audit on an exported JSONL trace."""
    bad = []
    for line in text.splitlines()[1:]:
        e = json.loads(line)
        if e["payload_type"] == "label_distribution" and e["receiver"] != e["payload_owner"]:
            bad.append(e)
    return bad
