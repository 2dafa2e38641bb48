"""The adaptive filter as an explicit connectionist graph with typed local synapses.

Layers (n hidden, p observed): input (p), reconstruction error (p), state
estimate (n), sensitivity (n), lambda sub-layer (p) and a single theta unit.

Every transmission reads only its own weight, its endpoints, and the source
activation of any multiplying synapse that terminates on it. Node updates read
only the node's own accumulator, activation and gain. The learning rate γ is a
broadcast scalar that every plastic synapse may read. ``execute_step`` can
record each access into a ``Trace`` so ``audit_locality`` can check those rules.

Three safety nets are not local: the stability guard on F − K(θ)H, the PD
projection of the collateral weights, and the condition-number check. They run
as a supervisor outside the graph. The audit lists their interventions
separately and does not count them as violations.
"""

from __future__ import annotations

import copy
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.kalman import KalmanState, kf_step
from src.lds import DimensionMismatch, LdsModel
from src.linalg import spectral_radius
from src.rpe import (
    LAMBDA_PROJECTED,
    LAMBDA_SKIPPED,
    MAX_EXPONENT_STEP,
    STEP_CLAMPED,
    THETA_CLAMPED,
    UNSTABLE_REJECTED,
    LambdaIllConditioned,
    LambdaMode,
    RpeConfig,
    RpeState,
    StepOutput,
    ThetaOutOfBounds,
    gain_from_theta,
    guard_lambda_inverse,
)

logger = logging.getLogger(__name__)

GLOBAL_OWNERS = frozenset({"gamma"})
ENVIRONMENT = "environment"
THETA_ID = "theta"

SCHEDULE = (
    "input",
    "reconstruction_error",
    "lambda_feed",
    "collateral",
    "afferent",
    "commit",
    "theta_update",
    "gain_broadcast",
    "plasticity",
)


class GraphError(Exception):
    """Raised for malformed graphs or configurations the graph cannot execute."""


class Layer(str, Enum):
    INPUT = "input"
    RECONSTRUCTION_ERROR = "reconstruction_error"
    STATE_ESTIMATE = "state_estimate"
    SENSITIVITY = "sensitivity"
    LAMBDA_SUBLAYER = "lambda_sublayer"
    THETA_UNIT = "theta_unit"


class SynapseKind(str, Enum):
    EXCITATORY = "excitatory"
    INHIBITORY = "inhibitory"
    MULTIPLYING = "multiplying"


class Plasticity(str, Enum):
    FIXED = "fixed"
    HEBBIAN_DIRECT = "hebbian_direct"
    HEBBIAN_STDP_LIKE = "hebbian_stdp_like"


class Transfer(str, Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


@dataclass
class Node:
    id: str
    layer: Layer
    activation: float = 0.0
    gain: float = 1.0
    accumulator: float = 0.0


@dataclass
class Synapse:
    """A directed connection.

    Additive synapses (excitatory/inhibitory) add ±weight·activation to the
    destination; ``gated`` ones also scale by the source node's gain.
    Multiplying synapses never add: with a ``target`` they multiply that
    synapse's transmission by weight·activation, without one they set the
    destination node's gain to exp(weight·activation).
    """

    id: str
    src: str
    dst: str
    kind: SynapseKind
    weight: float
    plasticity: Plasticity = Plasticity.FIXED
    group: str = ""
    gated: bool = False
    target: str | None = None
    transfer: Transfer = Transfer.LINEAR


@dataclass(frozen=True)
class TraceEvent:
    step: int
    phase: str
    actor: str
    actor_kind: str
    reads: tuple[tuple[str, str], ...] = ()
    writes: tuple[tuple[str, str], ...] = ()


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)

    def record(self, step, phase, actor, actor_kind, reads=(), writes=()) -> None:
        self.events.append(
            TraceEvent(step, phase, actor, actor_kind, tuple(reads), tuple(writes))
        )


@dataclass
class NetGraph:
    nodes: dict[str, Node]
    synapses: dict[str, Synapse]
    schedule: tuple[str, ...]
    n: int
    p: int
    # Known system matrices; only the supervisor reads them.
    F: np.ndarray
    H: np.ndarray
    step: int = 0
    incoming: dict[str, list[str]] = field(default_factory=dict)
    modulators: dict[str, list[str]] = field(default_factory=dict)

    def index(self) -> None:
        """Rebuild the incoming/modulator lookups after editing synapses."""
        incoming: dict[str, list[str]] = defaultdict(list)
        modulators: dict[str, list[str]] = defaultdict(list)
        for syn in self.synapses.values():
            if syn.kind is SynapseKind.MULTIPLYING and syn.target is not None:
                modulators[syn.target].append(syn.id)
            else:
                incoming[syn.dst].append(syn.id)
        self.incoming = dict(incoming)
        self.modulators = dict(modulators)

    def group(self, name: str) -> list[Synapse]:
        return [s for s in self.synapses.values() if s.group == name]

    def layer(self, layer: Layer) -> list[Node]:
        return [node for node in self.nodes.values() if node.layer is layer]


@dataclass(frozen=True)
class Violation:
    step: int
    phase: str
    actor: str
    quantity: str
    reason: str


@dataclass
class AuditReport:
    violations: list[Violation]
    events_checked: int
    collateral_steps: int
    interventions: list[TraceEvent]

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _node_id(prefix: str, i: int) -> str:
    return f"{prefix}[{i}]"


def build_architecture(
    F: np.ndarray,
    H: np.ndarray,
    K0: np.ndarray,
    theta0: float,
    n: int,
    p: int,
    lambda_inv: np.ndarray | None = None,
) -> NetGraph:
    """Wire the loop: error differencing, gain pathway, recurrences, Λ̂⁻¹ collaterals, theta unit."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    lam = np.eye(p) if lambda_inv is None else np.atleast_2d(np.asarray(lambda_inv, dtype=float))
    for name, arr, shape in (("F", F, (n, n)), ("H", H, (p, n)), ("K0", K0, (n, p)), ("lambda_inv", lam, (p, p))):
        if arr.shape != shape:
            raise DimensionMismatch(f"{name} must be {shape[0]}x{shape[1]}, got shape {arr.shape}")

    nodes: dict[str, Node] = {}
    for j in range(p):
        nodes[_node_id("in", j)] = Node(_node_id("in", j), Layer.INPUT)
    for j in range(p):
        nodes[_node_id("err", j)] = Node(_node_id("err", j), Layer.RECONSTRUCTION_ERROR, gain=math.exp(theta0))
    for i in range(n):
        nodes[_node_id("x", i)] = Node(_node_id("x", i), Layer.STATE_ESTIMATE)
    for i in range(n):
        nodes[_node_id("w", i)] = Node(_node_id("w", i), Layer.SENSITIVITY, gain=math.exp(theta0))
    for j in range(p):
        nodes[_node_id("lam", j)] = Node(_node_id("lam", j), Layer.LAMBDA_SUBLAYER)
    nodes[THETA_ID] = Node(THETA_ID, Layer.THETA_UNIT, activation=float(theta0))

    synapses: dict[str, Synapse] = {}

    def add(src, dst, kind, weight, group, **kwargs) -> str:
        sid = f"s{len(synapses)}"
        synapses[sid] = Synapse(sid, src, dst, kind, float(weight), group=group, **kwargs)
        return sid

    exc, inh, mul = SynapseKind.EXCITATORY, SynapseKind.INHIBITORY, SynapseKind.MULTIPLYING
    K0H = K0 @ H

    for j in range(p):
        add(_node_id("in", j), _node_id("err", j), exc, 1.0, "input_copy")
    for j in range(p):
        for i in range(n):
            add(_node_id("x", i), _node_id("err", j), inh, H[j, i], "reconstruction")
    for i in range(n):
        for j in range(p):
            add(_node_id("err", j), _node_id("x", i), exc, K0[i, j], "state_gain", gated=True)
    for i in range(n):
        for k in range(n):
            add(_node_id("x", k), _node_id("x", i), exc, F[i, k], "state_recurrence")
    for i in range(n):
        for k in range(n):
            add(_node_id("w", k), _node_id("w", i), exc, F[i, k], "sensitivity_recurrence")
    for i in range(n):
        for k in range(n):
            add(_node_id("w", k), _node_id("w", i), inh, K0H[i, k], "sensitivity_feedback", gated=True)
    for i in range(n):
        for j in range(p):
            add(_node_id("err", j), _node_id("w", i), exc, K0[i, j], "sensitivity_gain", gated=True)
    for j in range(p):
        add(_node_id("err", j), _node_id("lam", j), exc, 1.0, "lambda_feed")
    for j in range(p):
        for k in range(p):
            add(
                _node_id("lam", k), _node_id("lam", j), exc, lam[j, k], "collateral",
                plasticity=Plasticity.HEBBIAN_STDP_LIKE,
            )
    for j in range(p):
        for i in range(n):
            readout = add(_node_id("w", i), THETA_ID, exc, H[j, i], "sensitivity_readout")
            add(_node_id("lam", j), THETA_ID, mul, 1.0, "product_contact", target=readout)
    for j in range(p):
        add(THETA_ID, _node_id("err", j), mul, 1.0, "theta_gain", transfer=Transfer.EXPONENTIAL)
    for i in range(n):
        add(THETA_ID, _node_id("w", i), mul, 1.0, "theta_gain", transfer=Transfer.EXPONENTIAL)

    graph = NetGraph(nodes=nodes, synapses=synapses, schedule=SCHEDULE, n=n, p=p, F=F, H=H)
    graph.index()
    logger.debug("Built graph: %d nodes, %d synapses", len(nodes), len(synapses))
    return graph


def architecture_table(graph: NetGraph) -> list[tuple[str, str, int]]:
    """(group, kind, count) rows in construction order."""
    counts: Counter[tuple[str, str]] = Counter()
    order: list[tuple[str, str]] = []
    for syn in graph.synapses.values():
        key = (syn.group, syn.kind.value)
        if key not in counts:
            order.append(key)
        counts[key] += 1
    return [(group, kind, counts[(group, kind)]) for group, kind in order]


def expected_synapse_count(n: int, p: int) -> int:
    return 3 * n * n + 5 * n * p + p * p + 3 * p + n


def load_state(graph: NetGraph, state: RpeState) -> NetGraph:
    """Write an RpeState into the graph's activations and weights (in place)."""
    if state.K0.shape != (graph.n, graph.p):
        raise DimensionMismatch(f"K0 must be {graph.n}x{graph.p}, got shape {state.K0.shape}")
    for i in range(graph.n):
        graph.nodes[_node_id("x", i)].activation = float(state.x_hat[i])
        graph.nodes[_node_id("w", i)].activation = float(state.w_hat[i])
    theta = graph.nodes[THETA_ID]
    theta.activation = float(state.theta)
    for syn in graph.group("theta_gain"):
        graph.nodes[syn.dst].gain = math.exp(syn.weight * theta.activation)
    K0H = state.K0 @ graph.H
    for syn in graph.group("state_gain") + graph.group("sensitivity_gain"):
        syn.weight = float(state.K0[_index(syn.dst), _index(syn.src)])
    for syn in graph.group("sensitivity_feedback"):
        syn.weight = float(K0H[_index(syn.dst), _index(syn.src)])
    for syn in graph.group("collateral"):
        syn.weight = float(state.Lambda_inv[_index(syn.dst), _index(syn.src)])
    graph.step = state.t
    return graph


def graph_from_state(state: RpeState, F: np.ndarray, H: np.ndarray) -> NetGraph:
    n, p = state.K0.shape
    graph = build_architecture(F, H, state.K0, state.theta, n, p, state.Lambda_inv)
    return load_state(graph, state)


def _index(node_id: str) -> int:
    return int(node_id[node_id.index("[") + 1 : -1])


def _layer_vector(graph: NetGraph, prefix: str, size: int, attr: str = "activation") -> np.ndarray:
    return np.array([getattr(graph.nodes[_node_id(prefix, i)], attr) for i in range(size)])


def collateral_matrix(graph: NetGraph) -> np.ndarray:
    lam = np.zeros((graph.p, graph.p))
    for syn in graph.group("collateral"):
        lam[_index(syn.dst), _index(syn.src)] = syn.weight
    return lam


def read_state(graph: NetGraph) -> RpeState:
    """Read the dense RpeState back out of the graph."""
    K0 = np.zeros((graph.n, graph.p))
    for syn in graph.group("state_gain"):
        K0[_index(syn.dst), _index(syn.src)] = syn.weight
    lambda_inv = collateral_matrix(graph)
    return RpeState(
        x_hat=_layer_vector(graph, "x", graph.n),
        w_hat=_layer_vector(graph, "w", graph.n),
        theta=graph.nodes[THETA_ID].activation,
        K0=K0,
        Lambda_inv=lambda_inv,
        Lambda=np.linalg.inv(lambda_inv),
        t=graph.step,
    )


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _transmit(graph: NetGraph, syn: Synapse, phase: str, trace: Trace | None) -> None:
    src = graph.nodes[syn.src]
    value = syn.weight * src.activation
    reads = [(syn.id, "weight"), (syn.src, "activation")]
    if syn.gated:
        value *= src.gain
        reads.append((syn.src, "gain"))
    for mod_id in graph.modulators.get(syn.id, ()):
        mod = graph.synapses[mod_id]
        value *= mod.weight * graph.nodes[mod.src].activation
        reads += [(mod.id, "weight"), (mod.src, "activation")]
    if syn.kind is SynapseKind.INHIBITORY:
        value = -value
    graph.nodes[syn.dst].accumulator += value
    if trace is not None:
        trace.record(graph.step, phase, syn.id, "synapse", reads, [(syn.dst, "accumulator")])


def _commit(graph: NetGraph, node: Node, phase: str, trace: Trace | None) -> None:
    node.activation = node.accumulator
    node.accumulator = 0.0
    if trace is not None:
        trace.record(
            graph.step, phase, node.id, "node",
            [(node.id, "accumulator")], [(node.id, "activation"), (node.id, "accumulator")],
        )


def _propagate(graph: NetGraph, layer: Layer, groups: tuple[str, ...], phase: str, trace: Trace | None) -> None:
    for node in graph.layer(layer):
        for sid in graph.incoming.get(node.id, ()):
            syn = graph.synapses[sid]
            if syn.group in groups:
                _transmit(graph, syn, phase, trace)


def _supervise_theta(
    graph: NetGraph,
    theta_old: float,
    theta_new: float,
    K0: np.ndarray,
    flags: list[str],
    trace: Trace | None,
) -> float:
    radius = spectral_radius(graph.F - gain_from_theta(theta_new, K0) @ graph.H)
    rejected = radius >= 1.0
    if trace is not None:
        trace.record(
            graph.step, "theta_update", "stability_guard", "supervisor",
            [("F", "matrix"), ("H", "matrix"), ("K0", "matrix"), (THETA_ID, "activation")],
            [(THETA_ID, "activation")] if rejected else [],
        )
    if rejected:
        logger.debug("Supervisor rejected theta increment: spectral radius %.4f", radius)
        flags.append(UNSTABLE_REJECTED)
        return theta_old
    return theta_new


def _update_theta(
    graph: NetGraph,
    g: float,
    K0: np.ndarray,
    cfg: RpeConfig,
    flags: list[str],
    trace: Trace | None,
) -> float:
    """Theta unit: θ ← θ + γ·(accumulated products), with its own clamps."""
    node = graph.nodes[THETA_ID]
    grad = node.accumulator
    node.accumulator = 0.0
    if g == 0.0:
        return grad
    increment = g * grad
    if abs(increment) > MAX_EXPONENT_STEP:
        increment = math.copysign(MAX_EXPONENT_STEP, increment)
        flags.append(STEP_CLAMPED)
    theta_new = node.activation + increment
    lo, hi = cfg.theta_bounds
    if theta_new < lo or theta_new > hi:
        if not cfg.stability_guard:
            raise ThetaOutOfBounds(f"theta left [{lo}, {hi}]: {theta_new}")
        theta_new = min(max(theta_new, lo), hi)
        flags.append(THETA_CLAMPED)
    if trace is not None:
        trace.record(
            graph.step, "theta_update", node.id, "node",
            [(node.id, "accumulator"), (node.id, "activation"), ("gamma", "value")],
            [(node.id, "activation"), (node.id, "accumulator")],
        )
    if cfg.stability_guard:
        theta_new = _supervise_theta(graph, node.activation, theta_new, K0, flags, trace)
    node.activation = theta_new
    return grad


def _broadcast_gain(graph: NetGraph, trace: Trace | None) -> None:
    for syn in graph.group("theta_gain"):
        dst = graph.nodes[syn.dst]
        dst.gain = math.exp(syn.weight * graph.nodes[syn.src].activation)
        if trace is not None:
            trace.record(
                graph.step, "gain_broadcast", syn.id, "synapse",
                [(syn.id, "weight"), (syn.src, "activation")], [(syn.dst, "gain")],
            )


def _plasticity(graph: NetGraph, g: float, flags: list[str], trace: Trace | None) -> None:
    """Collateral rule w_jk += γ(w_jk − u_j u_k), then the supervisor's PD/condition check."""
    collaterals = graph.group("collateral")
    previous = {syn.id: syn.weight for syn in collaterals}
    for syn in collaterals:
        u_k = graph.nodes[syn.src].activation
        u_j = graph.nodes[syn.dst].activation
        syn.weight = syn.weight + g * (syn.weight - u_j * u_k)
        if trace is not None:
            trace.record(
                graph.step, "plasticity", syn.id, "synapse",
                [(syn.id, "weight"), (syn.src, "activation"), (syn.dst, "activation"), ("gamma", "value")],
                [(syn.id, "weight")],
            )

    candidate = collateral_matrix(graph)
    reads = [(syn.id, "weight") for syn in collaterals]
    try:
        guarded, projected = guard_lambda_inverse(candidate)
    except LambdaIllConditioned as exc:
        logger.debug("Supervisor reverted collateral update: %s", exc)
        flags.append(LAMBDA_SKIPPED)
        for syn in collaterals:
            syn.weight = previous[syn.id]
        if trace is not None:
            trace.record(graph.step, "plasticity", "lambda_guard", "supervisor", reads, reads)
        return
    if projected:
        flags.append(LAMBDA_PROJECTED)
    changed = []
    for syn in collaterals:
        value = float(guarded[_index(syn.dst), _index(syn.src)])
        if value != syn.weight:
            syn.weight = value
            changed.append((syn.id, "weight"))
    if trace is not None:
        trace.record(graph.step, "plasticity", "lambda_guard", "supervisor", reads, changed)


def execute_step(
    graph: NetGraph,
    y: np.ndarray,
    gamma: float,
    cfg: RpeConfig | None = None,
    trace: Trace | None = None,
    in_place: bool = False,
) -> tuple[NetGraph, StepOutput]:
    """Advance every layer and plastic weight by one observation, following SCHEDULE."""
    cfg = cfg or RpeConfig()
    if cfg.lambda_mode is not LambdaMode.INVERSE:
        raise GraphError("the graph stores the inverse error covariance; only the inverse mode runs")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (graph.p,):
        raise DimensionMismatch(f"observation must have length {graph.p}, got {y.shape[0]}")
    if not in_place:
        graph = copy.deepcopy(graph)
    g = float(gamma)
    flags: list[str] = []
    w_old = _layer_vector(graph, "w", graph.n)
    K0 = np.zeros((graph.n, graph.p))
    for syn in graph.group("state_gain"):
        K0[_index(syn.dst), _index(syn.src)] = syn.weight

    # input
    for j, node in enumerate(graph.layer(Layer.INPUT)):
        node.activation = float(y[j])
        if trace is not None:
            trace.record(graph.step, "input", node.id, "node", [(ENVIRONMENT, f"y[{j}]")], [(node.id, "activation")])

    # reconstruction error: ε = y − H x̂
    _propagate(graph, Layer.RECONSTRUCTION_ERROR, ("input_copy", "reconstruction"), "reconstruction_error", trace)
    for node in graph.layer(Layer.RECONSTRUCTION_ERROR):
        _commit(graph, node, "reconstruction_error", trace)

    # lambda sub-layer: feed ε, then each collateral acts once
    _propagate(graph, Layer.LAMBDA_SUBLAYER, ("lambda_feed",), "lambda_feed", trace)
    for node in graph.layer(Layer.LAMBDA_SUBLAYER):
        _commit(graph, node, "lambda_feed", trace)
    _propagate(graph, Layer.LAMBDA_SUBLAYER, ("collateral",), "collateral", trace)
    for node in graph.layer(Layer.LAMBDA_SUBLAYER):
        _commit(graph, node, "collateral", trace)

    # afferents of state, sensitivity and theta all read time-t activations
    _propagate(graph, Layer.STATE_ESTIMATE, ("state_recurrence", "state_gain"), "afferent", trace)
    _propagate(
        graph, Layer.SENSITIVITY,
        ("sensitivity_recurrence", "sensitivity_feedback", "sensitivity_gain"), "afferent", trace,
    )
    _propagate(graph, Layer.THETA_UNIT, ("sensitivity_readout",), "afferent", trace)
    for layer in (Layer.STATE_ESTIMATE, Layer.SENSITIVITY):
        for node in graph.layer(layer):
            _commit(graph, node, "commit", trace)

    grad = _update_theta(graph, g, K0, cfg, flags, trace)
    _broadcast_gain(graph, trace)
    if g != 0.0:
        _plasticity(graph, g, flags, trace)

    eps = _layer_vector(graph, "err", graph.p)
    graph.step += 1
    return graph, StepOutput(
        y_rec=y - eps,
        eps=eps,
        v_hat=graph.H @ w_old,
        grad=grad,
        gamma=g,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Locality audit
# ---------------------------------------------------------------------------

def _allowed_owners(graph: NetGraph, event: TraceEvent) -> set[str] | None:
    if event.actor_kind == "synapse":
        syn = graph.synapses.get(event.actor)
        if syn is None:
            return None
        owners = {syn.id, syn.src, syn.dst}
        for mod_id in graph.modulators.get(syn.id, ()):
            owners.update({mod_id, graph.synapses[mod_id].src})
        return owners | GLOBAL_OWNERS
    if event.actor_kind == "node":
        node = graph.nodes.get(event.actor)
        if node is None:
            return None
        owners = {node.id} | GLOBAL_OWNERS
        if node.layer is Layer.INPUT:
            owners.add(ENVIRONMENT)
        return owners
    return None


def audit_locality(graph: NetGraph, trace: Trace) -> AuditReport:
    """Check every recorded access against the locality rules.

    Also checks that in each step containing a collateral phase, every
    collateral synapse transmitted exactly once.
    """
    violations: list[Violation] = []
    interventions: list[TraceEvent] = []
    checked = 0
    firings: dict[int, Counter] = defaultdict(Counter)

    for event in trace.events:
        if event.actor_kind == "supervisor":
            if event.writes:
                interventions.append(event)
            continue
        checked += 1
        if event.phase == "collateral" and event.actor_kind == "synapse":
            firings[event.step][event.actor] += 1
        allowed = _allowed_owners(graph, event)
        if allowed is None:
            violations.append(Violation(
                event.step, event.phase, event.actor, "-",
                f"unknown {event.actor_kind} actor",
            ))
            continue
        for verb, accesses in (("reads", event.reads), ("writes", event.writes)):
            for owner, attr in accesses:
                if owner not in allowed:
                    violations.append(Violation(
                        event.step, event.phase, event.actor, f"{owner}.{attr}",
                        f"{event.actor} {verb} a quantity it has no connection to",
                    ))

    collaterals = [syn.id for syn in graph.group("collateral")]
    for step in sorted(firings):
        for sid in collaterals:
            count = firings[step][sid]
            if count != 1:
                violations.append(Violation(
                    step, "collateral", sid, f"{sid}.activation",
                    f"recurrent collateral fired {count} times (expected once)",
                ))

    return AuditReport(
        violations=violations,
        events_checked=checked,
        collateral_steps=len(firings),
        interventions=interventions,
    )


def dense_kalman_trace(
    model: LdsModel,
    state: KalmanState,
    y: np.ndarray,
) -> tuple[NetGraph, Trace, KalmanState]:
    """Run the exact Kalman step while recording what each unit would have to read.

    The mean path maps onto synapses; the covariance recursion and the
    innovation inverse only exist as whole matrices, which no unit is connected to.
    """
    n, p = model.n, model.p
    nxt = kf_step(state, y, model)
    graph = build_architecture(model.F, model.H, nxt.Kf, 0.0, n, p)
    trace = Trace()
    step = state.t

    for j in range(p):
        trace.record(step, "input", _node_id("in", j), "node", [(ENVIRONMENT, f"y[{j}]")], [(_node_id("in", j), "activation")])
    for syn in graph.group("state_recurrence"):
        trace.record(step, "prior_mean", syn.id, "synapse", [(syn.id, "weight"), (syn.src, "activation")], [(syn.dst, "accumulator")])
    for i in range(n):
        node = _node_id("x", i)
        trace.record(step, "prior_covariance", node, "node", [("N", "matrix"), ("Pi", "matrix")], [("M", "matrix")])
    for j in range(p):
        node = _node_id("err", j)
        trace.record(step, "innovation_inverse", node, "node", [("M", "matrix"), ("Sigma", "matrix")], [("S^-1", "matrix")])
    for syn in graph.group("state_gain"):
        trace.record(step, "gain", syn.id, "synapse", [("M", "matrix"), ("S^-1", "matrix")], [(syn.id, "weight")])
    for syn in graph.group("reconstruction") + graph.group("input_copy") + graph.group("state_gain"):
        trace.record(step, "correction", syn.id, "synapse", [(syn.id, "weight"), (syn.src, "activation")], [(syn.dst, "accumulator")])
    for i in range(n):
        node = _node_id("x", i)
        trace.record(step, "posterior_covariance", node, "node", [("Kf", "matrix"), ("M", "matrix")], [("N", "matrix")])
    return graph, trace, nxt


def export_edge_list(graph: NetGraph) -> str:
    """Tab-separated edge list: src, dst, kind, weight."""
    lines = ["src\tdst\tkind\tweight"]
    for syn in graph.synapses.values():
        lines.append(f"{syn.src}\t{syn.dst}\t{syn.kind.value}\t{syn.weight!r}")
    return "\n".join(lines) + "\n"
