"""Markov chain of one device's confirmed-uplink cycle and its solvers.

States per transmission attempt ``n`` (1-based) sit at ``8*(n-1) + offset``;
the single ACK state closes the index range, so the matrix is (8N+1)-square.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .airtime import RadioConfig, attempt_timings
from .errors import ConsistencyError, ParameterError, SolverError
from .params import AckPolicy, EnergyProfile, MacParams

STATES_PER_ATTEMPT = 8
PROB_TOL = 1e-12
ROW_SUM_TOL = 1e-12


class StateKind(enum.IntEnum):
    SEND = 0
    RECV1 = 1
    PRE1 = 2
    CHK1 = 3
    RECV2 = 4
    PRE2 = 5
    CHK2 = 6
    WAIT = 7
    ACK = 8

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    StateKind.SEND: "Send",
    StateKind.RECV1: "Recv1",
    StateKind.PRE1: "Pre1",
    StateKind.CHK1: "Chk1",
    StateKind.RECV2: "Recv2",
    StateKind.PRE2: "Pre2",
    StateKind.CHK2: "Chk2",
    StateKind.WAIT: "Wait",
    StateKind.ACK: "Ack",
}


def n_states(max_transmissions: int) -> int:
    return STATES_PER_ATTEMPT * max_transmissions + 1


def state_index(attempt: int, kind: StateKind, max_transmissions: int) -> int:
    if kind == StateKind.ACK:
        return STATES_PER_ATTEMPT * max_transmissions
    if not 1 <= attempt <= max_transmissions:
        raise ParameterError(f"attempt must be in [1, {max_transmissions}], got {attempt}")
    return STATES_PER_ATTEMPT * (attempt - 1) + int(kind)


def state_labels(max_transmissions: int) -> tuple[str, ...]:
    labels = [
        f"{kind.label}_{n}"
        for n in range(1, max_transmissions + 1)
        for kind in StateKind
        if kind != StateKind.ACK
    ]
    return tuple(labels) + ("Ack",)


@dataclass(frozen=True)
class ChainModel:
    """Transition matrix plus per-state sojourn delay (s) and energy (J).

    ``start`` is the distribution of the first state of a frame and
    ``drop_states`` are the states whose exit means the frame was dropped;
    both are needed for the per-frame (absorbing) view.
    """

    matrix: np.ndarray
    delay: np.ndarray
    energy: np.ndarray
    labels: tuple[str, ...]
    kinds: np.ndarray
    attempts: np.ndarray
    ack_index: int
    start: np.ndarray
    drop_states: tuple[int, ...]
    params: MacParams | None = None
    radio: RadioConfig | None = None

    def __post_init__(self):
        for arr in (self.matrix, self.delay, self.energy, self.kinds, self.attempts, self.start):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def send_states(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == StateKind.SEND)


def channel_access_probs(params: MacParams, attempt: int) -> tuple[float, float]:
    """Per-device probability of using (x) and not using (y) a given channel.

    First attempts spread over all channels; retransmissions exclude the
    previously used channel.
    """
    if not 1 <= attempt <= params.max_transmissions:
        raise ParameterError(f"attempt must be in [1, {params.max_transmissions}], got {attempt}")
    channels = params.channel_count if attempt == 1 else params.channel_count - 1
    if channels < 1:
        raise ParameterError("retransmissions need at least two channels")
    x = params.duty_cycle / channels
    if x > 1:
        raise ParameterError(f"duty_cycle / channels = {x} exceeds 1")
    return x, 1.0 - x


def _powers(params: MacParams, attempt: int) -> tuple[float, float, float, float, float]:
    """Channel-occupancy terms for ``attempt``, computed without cancellation.

    Returns (x, y**A, 1 - y**A, P[exactly one of A devices transmits],
    P[two or more transmit]).
    """
    x, _ = channel_access_probs(params, attempt)
    a = params.device_count
    if x >= 1.0:
        # every device is always on the channel (full duty cycle over a single channel)
        return x, 0.0, 1.0, float(a == 1), float(a >= 2)
    log_y = math.log1p(-x)
    y_a = math.exp(a * log_y)
    not_y_a = -math.expm1(a * log_y)
    single = a * x * math.exp((a - 1) * log_y)
    multi = float(binom.sf(1, a, x))
    return x, y_a, not_y_a, single, multi


def _one_minus(k: float, y_pow: float, not_y_pow: float) -> float:
    # 1 - k*y_pow written as (1 - k) + k*(1 - y_pow) to keep tiny complements accurate
    return (1.0 - k) + k * not_y_pow


def ack_history_factor(params: MacParams, attempt: int) -> float:
    """Probability the gateway has not yet sent an ACK before ``attempt`` (ACK-once policy)."""
    if not 1 <= attempt <= params.max_transmissions:
        raise ParameterError(f"attempt must be in [1, {params.max_transmissions}], got {attempt}")
    if attempt == 1:
        return 1.0
    # always uses the retransmission access probability, as do attempts >= 2
    _, y_a, _, _, _ = _powers(params, 2)
    alpha = params.channel_quality
    g = params.slot_choice[attempt - 1]
    return (1.0 - alpha * y_a * (g * y_a + (1.0 - g))) ** (attempt - 1)


def _check_prob(name: str, value: float) -> float:
    if not -PROB_TOL <= value <= 1.0 + PROB_TOL or math.isnan(value):
        raise ConsistencyError(f"{name} = {value!r} is outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def attempt_transitions(params: MacParams, attempt: int, beta: bool) -> dict[tuple[StateKind, StateKind], float]:
    """Non-trivial transition probabilities inside attempt ``attempt``.

    Keys are (from, to) state kinds; wait/ack exits are included, the
    attempt-to-attempt moves are added by :func:`transition_matrix`.
    """
    K = StateKind
    alpha = params.channel_quality
    gamma = params.slot_choice[attempt - 1]
    _, y_a, not_y_a, single, multi = _powers(params, attempt)
    y_2a = y_a * y_a
    not_y_2a = not_y_a * (1.0 + y_a)  # 1 - y**(2A), factored to avoid cancellation

    # gateway ACK factors for RS1 / RS2, without the y**A term
    k1 = alpha * gamma
    k2 = alpha * (1.0 - gamma)
    if params.ack_policy == AckPolicy.CASE1 and attempt >= 2:
        pr = ack_history_factor(params, attempt)
        k1 *= pr
        k2 *= pr
    g1 = k1 * y_a
    g2 = k2 * y_a
    beta_f = 1.0 if beta else 0.0

    r1_r2 = _one_minus(k1, y_a, not_y_a) * y_a
    r1_p1 = not_y_a + g1 * y_a
    if r1_p1 > 0:
        # correct preamble: only the gateway, or only one device, is on air
        p1_c1 = (g1 * y_a + _one_minus(k1, y_a, not_y_a) * single) / r1_p1
        p1_r2 = (multi + g1 * single) / r1_p1
    else:
        p1_c1, p1_r2 = 0.0, 1.0  # Pre1 unreachable
    c1_a = g1 * alpha * y_a
    c1_r2 = beta_f * g1 * (1.0 - alpha) * y_a
    c1_w = _one_minus(k1 * (alpha + beta_f * (1.0 - alpha)), y_2a, not_y_2a)

    probs = {
        (K.SEND, K.RECV1): 1.0,
        (K.RECV1, K.RECV2): r1_r2,
        (K.RECV1, K.PRE1): r1_p1,
        (K.PRE1, K.CHK1): p1_c1,
        (K.PRE1, K.RECV2): p1_r2,
        (K.CHK1, K.ACK): c1_a,
        (K.CHK1, K.RECV2): c1_r2,
        (K.CHK1, K.WAIT): c1_w,
        (K.RECV2, K.PRE2): g2,
        (K.RECV2, K.WAIT): _one_minus(k2, y_a, not_y_a),
        (K.PRE2, K.CHK2): 1.0,
        (K.CHK2, K.ACK): alpha,
        (K.CHK2, K.WAIT): 1.0 - alpha,
    }
    return {k: _check_prob(f"P[{k[0].label}_{attempt} -> {k[1].label}]", v) for k, v in probs.items()}


def transition_matrix(params: MacParams, radio: RadioConfig) -> np.ndarray:
    N = params.max_transmissions
    size = n_states(N)
    P = np.zeros((size, size))
    timings = attempt_timings(radio, N, params.dr_stepping)
    ack = state_index(0, StateKind.ACK, N)
    send_1 = state_index(1, StateKind.SEND, N)
    for n in range(1, N + 1):
        for (src, dst), p in attempt_transitions(params, n, timings[n - 1].ack_fits_before_rs2).items():
            j = ack if dst == StateKind.ACK else state_index(n, dst, N)
            P[state_index(n, src, N), j] += p
        nxt = state_index(n + 1, StateKind.SEND, N) if n < N else send_1
        P[state_index(n, StateKind.WAIT, N), nxt] = 1.0
    # saturated traffic: a new frame is ready as soon as the last one is ACK'd
    P[ack, send_1] = 1.0
    check_stochastic(P)
    return P


def check_stochastic(P: np.ndarray, tol: float = ROW_SUM_TOL):
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ParameterError(f"transition matrix must be square, got shape {P.shape}")
    if np.any(P < -tol) or np.any(P > 1 + tol):
        raise ParameterError("transition matrix has entries outside [0, 1]")
    worst = np.max(np.abs(P.sum(axis=1) - 1.0))
    if worst > tol:
        raise ParameterError(f"transition matrix is not row-stochastic (max |row sum - 1| = {worst:.3e})")


def build_transition_matrix(params: MacParams, radio: RadioConfig | None = None,
                            profile: EnergyProfile | None = None) -> ChainModel:
    from .metrics import delay_vector, energy_vector

    radio = radio or RadioConfig()
    profile = profile or EnergyProfile()
    N = params.max_transmissions
    P = transition_matrix(params, radio)
    kinds = np.array([k for _ in range(N) for k in range(STATES_PER_ATTEMPT)] + [StateKind.ACK], dtype=int)
    attempts = np.array([n for n in range(1, N + 1) for _ in range(STATES_PER_ATTEMPT)] + [0], dtype=int)
    start = np.zeros(n_states(N))
    start[state_index(1, StateKind.SEND, N)] = 1.0
    return ChainModel(
        matrix=P,
        delay=delay_vector(params, radio, P),
        energy=energy_vector(params, radio, profile, P),
        labels=state_labels(N),
        kinds=kinds,
        attempts=attempts,
        ack_index=state_index(0, StateKind.ACK, N),
        start=start,
        drop_states=(state_index(N, StateKind.WAIT, N),),
        params=params,
        radio=radio,
    )


def compose_slot_mixture(rs1_model: ChainModel, rs2_model: ChainModel, slot_probs) -> ChainModel:
    """Chain in which the gateway picks RS1 for attempt n with probability slot_probs[n-1].

    The pure-RS1 and pure-RS2 chains are laid side by side (two copies of
    every attempt block, one shared ACK state) and each attempt entry
    branches between the copies.
    """
    N = rs1_model.params.max_transmissions
    if rs2_model.params.max_transmissions != N:
        raise ParameterError("both pure-slot models need the same max_transmissions")
    p = np.asarray(slot_probs, dtype=float)
    if p.shape != (N,) or np.any(p < 0) or np.any(p > 1):
        raise ParameterError(f"slot_probs must be {N} values in [0, 1]")

    block = STATES_PER_ATTEMPT * N
    size = 2 * block + 1
    ack = 2 * block

    def to_mixed(variant, i):
        # variant 0 = RS1 copy, 1 = RS2 copy
        if i == rs1_model.ack_index:
            return ack
        n, off = divmod(i, STATES_PER_ATTEMPT)
        return 2 * STATES_PER_ATTEMPT * n + STATES_PER_ATTEMPT * variant + off

    def send(n, variant):
        return 2 * STATES_PER_ATTEMPT * (n - 1) + STATES_PER_ATTEMPT * variant

    P = np.zeros((size, size))
    delay = np.zeros(size)
    energy = np.zeros(size)
    kinds = np.zeros(size, dtype=int)
    attempts = np.zeros(size, dtype=int)
    labels = [""] * size
    for variant, model in enumerate((rs1_model, rs2_model)):
        tag = ("RS1", "RS2")[variant]
        for i in range(block):
            m = to_mixed(variant, i)
            delay[m] = model.delay[i]
            energy[m] = model.energy[i]
            kinds[m] = model.kinds[i]
            attempts[m] = model.attempts[i]
            labels[m] = f"{model.labels[i]}@{tag}"
            if model.kinds[i] == StateKind.WAIT:
                n = model.attempts[i]
                nxt = n + 1 if n < N else 1
                P[m, send(nxt, 0)] += p[nxt - 1]
                P[m, send(nxt, 1)] += 1.0 - p[nxt - 1]
            else:
                for j in np.flatnonzero(model.matrix[i]):
                    P[m, to_mixed(variant, j)] += model.matrix[i, j]
    P[ack, send(1, 0)] = p[0]
    P[ack, send(1, 1)] = 1.0 - p[0]
    kinds[ack] = StateKind.ACK
    labels[ack] = "Ack"
    check_stochastic(P)

    start = np.zeros(size)
    start[send(1, 0)] = p[0]
    start[send(1, 1)] = 1.0 - p[0]
    params = rs1_model.params.replace(slot_choice=tuple(float(v) for v in p))
    return ChainModel(
        matrix=P,
        delay=delay,
        energy=energy,
        labels=tuple(labels),
        kinds=kinds,
        attempts=attempts,
        ack_index=ack,
        start=start,
        drop_states=(to_mixed(0, block - 1), to_mixed(1, block - 1)),
        params=params,
        radio=rs1_model.radio,
    )


# -- solvers ---------------------------------------------------------------

def _closed_class(P: np.ndarray, start: np.ndarray) -> np.ndarray:
    """States reachable from the frame-start states (the recurrent class here)."""
    seen = set(np.flatnonzero(start > 0).tolist())
    frontier = list(seen)
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(P[i] > 0).tolist():
            if j not in seen:
                seen.add(j)
                frontier.append(j)
    return np.array(sorted(seen))


def steady_state(model: ChainModel) -> np.ndarray:
    """Stationary distribution by GTH elimination on the closed class.

    Grassmann-Taqqu-Heyman elimination solves pi (P - I) = 0, sum(pi) = 1
    without subtractions, so probabilities of order 1e-13 keep full relative
    accuracy (plain LU does not). States that cannot be reached from a
    frame start get zero.
    """
    P = np.asarray(model.matrix, dtype=float)
    check_stochastic(P)
    live = _closed_class(P, np.asarray(model.start))
    R = P[np.ix_(live, live)].copy()
    if not np.allclose(R.sum(axis=1), 1.0, atol=1e-9):
        raise SolverError("states reachable from a frame start leak probability; chain is not closed")
    n = len(live)
    for k in range(n - 1, 0, -1):
        s = R[k, :k].sum()
        if not s > 0:
            raise SolverError(
                f"state {model.labels[live[k]]} cannot return to the rest of the chain; "
                "the reachable set is not irreducible"
            )
        R[:k, k] /= s
        R[:k, :k] += np.outer(R[:k, k], R[k, :k])
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = x[:k] @ R[:k, k]
    pi = np.zeros(P.shape[0])
    pi[live] = x / x.sum()
    residual = np.max(np.abs(pi @ P - pi))
    if residual > 1e-9:
        raise SolverError(f"stationary solve inaccurate: residual {residual:.3e}")
    return pi


def steady_state_power(model: ChainModel, doublings: int = 48) -> np.ndarray:
    """Cesaro average of J0 P^k over k < 2**doublings, by repeated squaring.

    The plain power sequence can oscillate on periodic chains; its running
    average cannot. Used as an independent check on :func:`steady_state`.
    """
    P = np.asarray(model.matrix, dtype=float)
    check_stochastic(P)
    power = P.copy()  # P^K
    avg = np.eye(P.shape[0])  # (1/K) sum_{k<K} P^k, K = 1
    for _ in range(doublings):
        avg = 0.5 * (avg + avg @ power)
        power = power @ power
        # keep rows stochastic against drift
        power /= power.sum(axis=1, keepdims=True)
    pi = np.asarray(model.start, dtype=float) @ avg
    return pi / pi.sum()


@dataclass(frozen=True)
class AbsorbingStats:
    """Per-frame statistics from the first send until ACK or drop."""

    success_probability: float
    drop_probability: float
    expected_attempts: float
    expected_delay: float
    expected_energy: float
    visits: np.ndarray


def _topological_order(Q: np.ndarray) -> list[int] | None:
    n = Q.shape[0]
    indeg = (Q > 0).sum(axis=0)
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop()
        order.append(i)
        for j in np.flatnonzero(Q[i] > 0):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return order if len(order) == n else None


def absorbing_stats(model: ChainModel) -> AbsorbingStats:
    """Expected visits per frame from the start distribution until ACK or drop.

    Visits are the start row of the fundamental matrix (I - Q)^-1. Within a
    frame the chain only moves forward, so Q is nilpotent and the visits come
    from forward substitution; a dense solve is the fallback for chains with
    loops.
    """
    P = np.asarray(model.matrix, dtype=float)
    size = P.shape[0]
    transient = np.array([i for i in range(size) if i != model.ack_index])
    Q = P[np.ix_(transient, transient)].copy()
    pos = {s: k for k, s in enumerate(transient)}
    for d in model.drop_states:
        Q[pos[d], :] = 0.0  # leaving the last wait state ends the frame
    b = np.asarray(model.start, dtype=float)[transient]

    order = _topological_order(Q)
    if order is not None:
        visits_t = b.copy()
        for i in order:
            visits_t += visits_t[i] * Q[i]  # Q[i, j] > 0 only for j later in the order
    else:
        I_minus_Q = np.eye(len(transient)) - Q
        cond = np.linalg.cond(I_minus_Q)
        if not np.isfinite(cond) or cond > 1e12:
            raise SolverError(f"fundamental matrix system is singular (condition number {cond:.3e})")
        visits_t = np.clip(np.linalg.solve(I_minus_Q.T, b), 0.0, None)
    visits = np.zeros(size)
    visits[transient] = visits_t

    success = float(visits_t @ P[transient, model.ack_index])
    drop = float(sum(visits[d] for d in model.drop_states))
    visits[model.ack_index] = success
    return AbsorbingStats(
        success_probability=min(max(success, 0.0), 1.0),
        drop_probability=min(max(drop, 0.0), 1.0),
        expected_attempts=float(visits[model.kinds == StateKind.SEND].sum()),
        expected_delay=float(visits @ model.delay),
        expected_energy=float(visits @ model.energy),
        visits=visits,
    )


@dataclass(frozen=True)
class ChainSample:
    """Outcome of :func:`simulate_chain`.

    Occupancy standard errors use the regenerative (ratio-estimator) method:
    frames are i.i.d. cycles of the walk.
    """

    frames: int
    steps: int
    visits: np.ndarray
    occupancy: np.ndarray
    occupancy_se: np.ndarray
    success: np.ndarray
    attempts: np.ndarray
    delay: np.ndarray
    energy: np.ndarray

    @property
    def success_rate(self) -> float:
        return float(self.success.mean())

    @property
    def success_rate_se(self) -> float:
        p = self.success_rate
        return math.sqrt(p * (1 - p) / self.frames)

    @property
    def delay_per_ack(self) -> float:
        n = self.success.sum()
        return float(self.delay.sum() / n) if n else math.inf

    @property
    def energy_per_ack(self) -> float:
        n = self.success.sum()
        return float(self.energy.sum() / n) if n else math.inf


def _successor_table(P: np.ndarray):
    size = P.shape[0]
    width = max(1, int((P > 0).sum(axis=1).max()))
    succ = np.zeros((size, width), dtype=np.int64)
    cum = np.ones((size, width))
    for i in range(size):
        nz = np.flatnonzero(P[i] > 0)
        if len(nz) == 0:
            continue
        c = np.cumsum(P[i, nz])
        c[-1] = 1.0
        succ[i, : len(nz)] = nz
        succ[i, len(nz):] = nz[-1]
        cum[i, : len(nz)] = c
    return succ, cum


def simulate_chain(model: ChainModel, seed: int, frames: int, chunk: int = 100_000) -> ChainSample:
    """Monte Carlo walk of the chain, one frame (renewal cycle) at a time.

    Concatenating the simulated frames gives a single walk of the chain, so
    state occupancies are visits / total steps.
    """
    if frames < 1:
        raise ParameterError("frames must be >= 1")
    rng = np.random.default_rng(seed)
    P = np.asarray(model.matrix, dtype=float)
    size = P.shape[0]
    succ, cum = _successor_table(P)
    start_states = np.flatnonzero(model.start > 0)
    start_cum = np.cumsum(model.start[start_states])
    start_cum[-1] = 1.0
    is_drop = np.zeros(size, dtype=bool)
    is_drop[list(model.drop_states)] = True
    is_send = model.kinds == StateKind.SEND
    max_steps = 4 * size + 16

    success = np.zeros(frames, dtype=bool)
    attempts = np.zeros(frames, dtype=np.int64)
    delay = np.zeros(frames)
    energy = np.zeros(frames)
    sum_v = np.zeros(size)
    sum_vv = np.zeros(size)
    sum_vl = np.zeros(size)
    sum_l = 0.0
    sum_ll = 0.0

    for lo in range(0, frames, chunk):
        hi = min(frames, lo + chunk)
        m = hi - lo
        counts = np.zeros((m, size), dtype=np.int32)
        state = start_states[np.searchsorted(start_cum, rng.random(m), side="right").clip(max=len(start_states) - 1)]
        active = np.arange(m)
        for _ in range(max_steps):
            if active.size == 0:
                break
            s = state[active]
            counts[active, s] += 1
            delay[lo + active] += model.delay[s]
            energy[lo + active] += model.energy[s]
            attempts[lo + active] += is_send[s]
            done_ack = s == model.ack_index
            success[lo + active[done_ack]] = True
            keep = ~(done_ack | is_drop[s])
            active, s = active[keep], s[keep]
            u = rng.random(active.size)
            col = (u[:, None] >= cum[s]).sum(axis=1).clip(max=succ.shape[1] - 1)
            state[active] = succ[s, col]
        else:
            raise SolverError("chain walk did not finish a frame within the step budget")
        lengths = counts.sum(axis=1).astype(float)
        c = counts.astype(float)
        sum_v += c.sum(axis=0)
        sum_vv += (c * c).sum(axis=0)
        sum_vl += c.T @ lengths
        sum_l += lengths.sum()
        sum_ll += (lengths * lengths).sum()

    steps = int(sum_l)
    occupancy = sum_v / sum_l
    # Var(V - r L) per frame, r = occupancy
    mean_l = sum_l / frames
    var = (sum_vv - 2 * occupancy * sum_vl + occupancy**2 * sum_ll) / frames
    var -= ((sum_v - occupancy * sum_l) / frames) ** 2
    se = np.sqrt(np.clip(var, 0.0, None) / frames) / mean_l
    return ChainSample(
        frames=frames,
        steps=steps,
        visits=sum_v.astype(np.int64),
        occupancy=occupancy,
        occupancy_se=se,
        success=success,
        attempts=attempts,
        delay=delay,
        energy=energy,
    )
