"""Projected subgradient flow for partial-consensus problems.

The state is (x, lambda, mu): primal variables stacked across agents,
one consensus multiplier per primal coordinate, and one inequality
multiplier per constraint row.  The flow

    dx      = 2*gain*(P_box(x - dF(x) - dG(x)'p - K(x + lambda)) - x)
    dlambda = K x
    dmu     = gain*(p - mu),        p = max(mu + g(x), 0)

drives x to a KKT point of the coupled problem; ``gain`` is one plus the
largest eigenvalue of the coupling matrix K.  Time stepping is explicit
fixed-step Euler or classical rk4.

Two practical refinements address the nonsmooth sliding modes created by
absolute-value atoms (fixed-step explicit methods otherwise chatter at a
distance O(h) around interior kinks and the stationarity residual never
reaches tight tolerances):

* at a coordinate sitting bit-exactly on a kink, the selected
  subdifferential element is the velocity-minimizing one instead of the
  minimal-norm one (identical everywhere else, since off kinks the
  subdifferential is a singleton);
* ``integrate`` may snap a coordinate onto a kink it crossed or stalled
  against, but only when the snapped coordinate is stationary, so
  capture never invents equilibria.  Snapping is restricted to
  non-shared coordinates, whose stationarity test is agent-local.

Everything here is deterministic; identical inputs give bit-identical
trajectories.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .convex import Box, ConstraintMap, ConvexExpr, no_constraints
from .errors import DivergenceError, InvalidInputError, NumericalError
from .pcmatrix import (
    AgentDims,
    PartialConsensusMatrix,
    build_partial_consensus_matrix,
    spectral_summary,
)

#: trajectory norms beyond this raise DivergenceError
DIVERGENCE_NORM = 1e12

#: a snapped kink coordinate is kept only if its velocity is below this
SNAP_VELOCITY_TOL = 1e-9

METHODS = ("euler", "rk4")


@dataclass(frozen=True)
class AgentProblem:
    """One agent's objective, inequality constraints and feasible box."""

    objective: ConvexExpr
    constraints: ConstraintMap = field(default_factory=no_constraints)
    box: Box = None

    def __post_init__(self):
        if self.box is None:
            from .convex import whole_space

            object.__setattr__(self, "box", whole_space(self.objective.dim))
        if self.constraints.size and self.constraints.dim != self.objective.dim:
            raise InvalidInputError(
                f"constraints on R^{self.constraints.dim} attached to an "
                f"objective on R^{self.objective.dim}"
            )
        if self.box.dim != self.objective.dim:
            raise InvalidInputError(
                f"box of dimension {self.box.dim} attached to an objective "
                f"on R^{self.objective.dim}"
            )

    @property
    def dim(self) -> int:
        return self.objective.dim


class ProblemInstance:
    """N agents, a coupling graph, and the consensus depth.

    Construction normalizes the Laplacian, builds the coupling matrix and
    the gain, and precomputes the per-agent block layout used by the
    velocity evaluations.  ``slater_probe=True`` additionally samples the
    feasible boxes looking for a strictly feasible point and warns (never
    errors) when none is found.
    """

    def __init__(self, agents, laplacian, depth: int, slater_probe: bool = False, rng=None):
        self.agents = tuple(agents)
        if not self.agents:
            raise InvalidInputError("a problem needs at least one agent")
        self.dims = AgentDims(tuple(a.dim for a in self.agents))
        self.coupling: PartialConsensusMatrix = build_partial_consensus_matrix(
            laplacian, self.dims, depth
        )
        self.laplacian = self.coupling.laplacian
        self.depth = int(depth)
        self.gain = coupling_gain(self.coupling)

        offsets = self.dims.offsets
        self._block_slices = tuple(
            slice(off, off + d) for off, d in zip(offsets, self.dims.dims)
        )
        mu_sizes = [a.constraints.size for a in self.agents]
        mu_off = np.concatenate([[0], np.cumsum(mu_sizes)])
        self._mu_slices = tuple(
            slice(int(mu_off[i]), int(mu_off[i + 1])) for i in range(len(self.agents))
        )
        self.multiplier_dim = int(mu_off[-1])

        lap = self.laplacian
        self.neighbors = tuple(
            tuple(
                (j, float(-lap[i, j]))
                for j in range(self.dims.count)
                if j != i and lap[i, j] != 0.0
            )
            for i in range(self.dims.count)
        )
        # snap targets: objective kinks on the non-shared coordinates
        self._capture_table = tuple(
            tuple(
                (k, c)
                for k, c in agent.objective.kink_locations()
                if k >= self.depth
            )
            for agent in self.agents
        )
        self._stacked_lower = np.concatenate([a.box.lower for a in self.agents])
        self._stacked_upper = np.concatenate([a.box.upper for a in self.agents])
        if slater_probe:
            self._probe_slater(rng)

    @property
    def total_dim(self) -> int:
        return self.dims.total

    def block(self, i: int) -> slice:
        return self._block_slices[i]

    def mu_block(self, i: int) -> slice:
        return self._mu_slices[i]

    def objective_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.total_dim,):
            raise InvalidInputError(
                f"stacked vector of shape {x.shape}, expected ({self.total_dim},)"
            )
        return float(
            sum(a.objective.value(x[s]) for a, s in zip(self.agents, self._block_slices))
        )

    def constraint_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(self.multiplier_dim)
        for a, s, ms in zip(self.agents, self._block_slices, self._mu_slices):
            out[ms] = a.constraints.value(x[s])
        return out

    def box_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        under = np.maximum(self._stacked_lower - x, 0.0)
        over = np.maximum(x - self._stacked_upper, 0.0)
        return float(np.max(under + over, initial=0.0))

    def _probe_slater(self, rng, samples: int = 200):
        rng = rng if rng is not None else np.random.default_rng(0)
        for _ in range(samples):
            ok = True
            for a, s in zip(self.agents, self._block_slices):
                xi = a.box.sample(rng)
                interior = np.all(xi > a.box.lower) and np.all(xi < a.box.upper)
                if not interior or (a.constraints.size and np.any(a.constraints.value(xi) >= 0.0)):
                    ok = False
                    break
            if ok:
                return
        warnings.warn(
            "no strictly feasible interior point found by sampling; "
            "a constraint qualification could not be verified",
            stacklevel=3,
        )


def coupling_gain(pc: PartialConsensusMatrix) -> float:
    """One plus the largest eigenvalue of the coupling matrix."""
    return spectral_summary(pc).max_eigenvalue + 1.0


@dataclass
class SolverState:
    """Stacked solver state (x, lambda, mu) at virtual time t."""

    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    t: float = 0.0

    def copy(self) -> "SolverState":
        return SolverState(self.x.copy(), self.lam.copy(), self.mu.copy(), self.t)


@dataclass(frozen=True)
class KKTResidual:
    """Nonnegative residuals; all zero exactly at flow equilibria."""

    stationarity: float
    consensus: float
    complementarity: float
    feasibility: float

    @property
    def max_component(self) -> float:
        return max(self.stationarity, self.consensus, self.complementarity, self.feasibility)

    def as_tuple(self):
        return (self.stationarity, self.consensus, self.complementarity, self.feasibility)


def initial_state(problem: ProblemInstance, kind: str = "zeros", rng=None) -> SolverState:
    """Zero state, or x uniform over the feasible boxes with zero multipliers."""
    n, m = problem.total_dim, problem.multiplier_dim
    if kind == "zeros":
        return SolverState(np.zeros(n), np.zeros(n), np.zeros(m), 0.0)
    if kind == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        x = np.empty(n)
        for a, s in zip(problem.agents, problem._block_slices):
            x[s] = a.box.sample(rng)
        return SolverState(x, np.zeros(n), np.zeros(m), 0.0)
    raise InvalidInputError(f"unknown initialization kind {kind!r}")


# -- velocity field ----------------------------------------------------------


def _agent_velocity(agent, xi, li, mi, neighbor_terms, depth, gain):
    """Velocity of one agent's block.

    ``neighbor_terms`` is an iterable of (weight, x_j_shared, lam_j_shared)
    in ascending neighbor order; the same routine backs the centralized
    and the decentralized evaluations so both produce identical floats.
    Returns (dx, dlam_shared, dmu, g_values).
    """
    g = agent.constraints.value(xi)
    pp = np.maximum(mi + g, 0.0)
    if agent.constraints.size:
        base = agent.constraints.weighted_subgradient(xi, pp)
    else:
        base = np.zeros(xi.shape[0])
    lam_vel = np.zeros(depth)
    if neighbor_terms:
        ui = xi[:depth] + li[:depth]
        coup = np.zeros(depth)
        for w, xj, lj in neighbor_terms:
            coup += w * (ui - (xj + lj))
            lam_vel += w * (xi[:depth] - xj)
        base[:depth] += coup
    flo, fhi = agent.objective.subgradient_interval(xi)
    sel = np.minimum(np.maximum(-base, flo), fhi)
    y = xi - sel - base
    dx = 2.0 * gain * (agent.box.project(y) - xi)
    dmu = gain * (pp - mi)
    return dx, lam_vel, dmu, g


def _stacked_velocity(z, problem):
    """Velocity of the packed state. Returns (dz, stacked g values)."""
    n = problem.total_dim
    x = z[:n]
    lam = z[n : 2 * n]
    mu = z[2 * n :]
    dz = np.zeros_like(z)
    gstack = np.empty(problem.multiplier_dim)
    depth, gain = problem.depth, problem.gain
    slices = problem._block_slices
    for i, agent in enumerate(problem.agents):
        s = slices[i]
        ms = problem._mu_slices[i]
        terms = [
            (w, x[slices[j]][:depth], lam[slices[j]][:depth])
            for j, w in problem.neighbors[i]
        ]
        dx, dlam_shared, dmu, g = _agent_velocity(
            agent, x[s], lam[s], mu[ms], terms, depth, gain
        )
        dz[: n][s] = dx
        dz[n : 2 * n][s][:depth] = dlam_shared
        dz[2 * n :][ms] = dmu
        gstack[ms] = g
    return dz, gstack


def _pack(state: SolverState) -> np.ndarray:
    return np.concatenate([state.x, state.lam, state.mu])


def _unpack(z, problem, t) -> SolverState:
    n = problem.total_dim
    return SolverState(z[:n].copy(), z[n : 2 * n].copy(), z[2 * n :].copy(), t)


def rhs(state: SolverState, problem: ProblemInstance):
    """(dx, dlambda, dmu) of the flow at ``state``."""
    z = _pack(state)
    dz, _ = _stacked_velocity(z, problem)
    if not np.all(np.isfinite(dz)):
        raise NumericalError(f"non-finite velocity at t={state.t}")
    n = problem.total_dim
    return dz[:n], dz[n : 2 * n], dz[2 * n :]


def _residuals(dz, gstack, problem) -> KKTResidual:
    n = problem.total_dim
    gain = problem.gain
    return KKTResidual(
        stationarity=float(np.linalg.norm(dz[:n])) / (2.0 * gain),
        consensus=float(np.linalg.norm(dz[n : 2 * n])),
        complementarity=float(np.linalg.norm(dz[2 * n :])) / gain,
        feasibility=float(np.linalg.norm(np.maximum(gstack, 0.0))),
    )


def kkt_residual(state: SolverState, problem: ProblemInstance) -> KKTResidual:
    """Stationarity, consensus, complementarity and feasibility norms.

    Stationarity is the distance between x and the projected target
    point (equivalently ||dx|| / (2*gain)), consensus is ||K x||,
    complementarity ||p - mu||, feasibility the norm of the positive
    part of g(x).
    """
    z = _pack(state)
    dz, gstack = _stacked_velocity(z, problem)
    return _residuals(dz, gstack, problem)


# -- stepping ----------------------------------------------------------------


def _advance(z, problem, h, method):
    """One explicit step from packed state ``z``; returns (z_new, k1)."""
    k1, _ = _stacked_velocity(z, problem)
    if method == "euler":
        return z + h * k1, k1
    k2, _ = _stacked_velocity(z + (0.5 * h) * k1, problem)
    k3, _ = _stacked_velocity(z + (0.5 * h) * k2, problem)
    k4, _ = _stacked_velocity(z + h * k3, problem)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


def step(state: SolverState, problem: ProblemInstance, h: float, method: str = "rk4") -> SolverState:
    """One fixed step of the flow (no kink capture; see ``integrate``)."""
    if h <= 0:
        raise InvalidInputError(f"step size must be positive, got {h}")
    if method not in METHODS:
        raise InvalidInputError(f"method must be one of {METHODS}, got {method!r}")
    z_new, _ = _advance(_pack(state), problem, h, method)
    t_new = state.t + h
    if not np.all(np.isfinite(z_new)):
        raise NumericalError(f"non-finite state produced at t={t_new}")
    return _unpack(z_new, problem, t_new)


def _snapped_coordinate_velocity(agent, xi, mi, local_k, gain):
    """dx of one non-shared coordinate; couplings do not reach it."""
    g = agent.constraints.value(xi)
    pp = np.maximum(mi + g, 0.0)
    if agent.constraints.size:
        base_k = float(agent.constraints.weighted_subgradient(xi, pp)[local_k])
    else:
        base_k = 0.0
    flo, fhi = agent.objective.subgradient_interval(xi)
    sel = min(max(-base_k, float(flo[local_k])), float(fhi[local_k]))
    y = xi[local_k] - sel - base_k
    proj = min(max(y, float(agent.box.lower[local_k])), float(agent.box.upper[local_k]))
    return 2.0 * gain * (proj - xi[local_k])


def capture_agent_kinks(agent, table, x_block, x_prev_block, k1_block, mu_block, h, gain):
    """Snap kink coordinates of one agent's block, in place.

    A coordinate qualifies when the step crossed its kink or ended
    within h*|velocity| of it, and the snap is kept only if the snapped
    coordinate is stationary.  Uses agent-local data only.
    """
    changed = False
    for local_k, center in table:
        xk = x_block[local_k]
        if xk == center:
            continue
        band = h * abs(k1_block[local_k]) + 1e-12
        crossed = (x_prev_block[local_k] - center) * (xk - center) < 0.0
        if not (crossed or abs(xk - center) <= band):
            continue
        x_block[local_k] = center
        v = _snapped_coordinate_velocity(agent, x_block, mu_block, local_k, gain)
        if abs(v) <= SNAP_VELOCITY_TOL:
            changed = True
        else:
            x_block[local_k] = xk
    return changed


def _capture_pass(z_prev, z, k1, problem, h):
    n = problem.total_dim
    x = z[:n]
    x_prev = z_prev[:n]
    mu = z[2 * n :]
    for i, agent in enumerate(problem.agents):
        table = problem._capture_table[i]
        if not table:
            continue
        s = problem._block_slices[i]
        capture_agent_kinks(
            agent, table, x[s], x_prev[s], k1[:n][s], mu[problem._mu_slices[i]],
            h, problem.gain,
        )


@dataclass
class Trajectory:
    """Recorded run: states and diagnostics every ``record_every`` steps."""

    times: list
    states: list
    residuals: list
    objectives: list
    box_violations: list
    stop_reason: str
    total_steps: int
    wall_time: float
    message_rounds: int = 0
    message_count: int = 0
    messages_per_step: int = 0

    @property
    def final(self) -> SolverState:
        return self.states[-1]

    @property
    def final_residual(self) -> KKTResidual:
        return self.residuals[-1]


def integrate(
    problem: ProblemInstance,
    init: SolverState = None,
    h: float = 1e-3,
    method: str = "rk4",
    t_max: float = 100.0,
    kkt_tol: float = 1e-6,
    record_every: int = 1,
    capture_kinks: bool = True,
) -> Trajectory:
    """Run the flow until the KKT residual drops below ``kkt_tol``.

    Stops when the largest residual component is at most ``kkt_tol``
    (stop reason ``"kkt_converged"``) or when t reaches ``t_max``
    (``"t_max"``).  States and diagnostics are recorded every
    ``record_every`` steps plus at the final state.  A state norm beyond
    ``DIVERGENCE_NORM`` raises ``DivergenceError`` carrying the last
    finite state.
    """
    if h <= 0 or t_max <= 0 or kkt_tol <= 0:
        raise InvalidInputError("h, t_max and kkt_tol must all be positive")
    if method not in METHODS:
        raise InvalidInputError(f"method must be one of {METHODS}, got {method!r}")
    if record_every < 1:
        raise InvalidInputError("record_every must be at least 1")

    state0 = init if init is not None else initial_state(problem, "zeros")
    z = _pack(state0)
    if not np.all(np.isfinite(z)):
        raise NumericalError("initial state contains non-finite entries")
    t0 = state0.t

    times, states, residuals, objectives, violations = [], [], [], [], []
    started = time.perf_counter()

    def record(t, z, res):
        times.append(t)
        st = _unpack(z, problem, t)
        states.append(st)
        residuals.append(res)
        objectives.append(problem.objective_value(st.x))
        violations.append(problem.box_violation(st.x))

    stop_reason = "t_max"
    steps = 0
    while True:
        t = t0 + steps * h
        dz, gstack = _stacked_velocity(z, problem)
        res = _residuals(dz, gstack, problem)
        due = steps % record_every == 0
        if res.max_component <= kkt_tol:
            record(t, z, res)
            stop_reason = "kkt_converged"
            break
        if t >= t_max - 1e-12:
            record(t, z, res)
            stop_reason = "t_max"
            break
        if due:
            record(t, z, res)
        # step, reusing dz as the first stage
        if method == "euler":
            z_new = z + h * dz
        else:
            k2, _ = _stacked_velocity(z + (0.5 * h) * dz, problem)
            k3, _ = _stacked_velocity(z + (0.5 * h) * k2, problem)
            k4, _ = _stacked_velocity(z + h * k3, problem)
            z_new = z + (h / 6.0) * (dz + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z_new)):
            raise NumericalError(f"non-finite state produced at t={t + h}")
        if capture_kinks:
            _capture_pass(z, z_new, dz, problem, h)
        if np.linalg.norm(z_new) > DIVERGENCE_NORM:
            raise DivergenceError(
                f"state norm exceeded {DIVERGENCE_NORM:g} at t={t + h}",
                state=_unpack(z, problem, t),
                t=t + h,
            )
        z = z_new
        steps += 1

    return Trajectory(
        times=times,
        states=states,
        residuals=residuals,
        objectives=objectives,
        box_violations=violations,
        stop_reason=stop_reason,
        total_steps=steps,
        wall_time=time.perf_counter() - started,
    )


# -- Lyapunov diagnostics ----------------------------------------------------


@dataclass(frozen=True)
class LyapunovValue:
    """Descent function split into its four parts (total = v1+v2+v3+v4)."""

    total: float
    v1: float
    v2: float
    v3: float
    v4: float


def _selected_objective_gradient(z, problem):
    """The x-gradient of v1 with the flow's subgradient selection."""
    n = problem.total_dim
    x = z[:n]
    lam = z[n : 2 * n]
    mu = z[2 * n :]
    out = np.empty(n)
    depth, gain = problem.depth, problem.gain
    slices = problem._block_slices
    for i, agent in enumerate(problem.agents):
        s = slices[i]
        xi, li, mi = x[s], lam[s], mu[problem._mu_slices[i]]
        g = agent.constraints.value(xi)
        pp = np.maximum(mi + g, 0.0)
        if agent.constraints.size:
            base = agent.constraints.weighted_subgradient(xi, pp)
        else:
            base = np.zeros(xi.shape[0])
        if problem.neighbors[i]:
            ui = xi[:depth] + li[:depth]
            coup = np.zeros(depth)
            for j, w in problem.neighbors[i]:
                coup += w * (ui - (x[slices[j]][:depth] + lam[slices[j]][:depth]))
            base[:depth] += coup
        flo, fhi = agent.objective.subgradient_interval(xi)
        out[s] = np.clip(-base, flo, fhi) + base
    return out


def _v1(state: SolverState, problem: ProblemInstance) -> float:
    pp = np.maximum(state.mu + problem.constraint_values(state.x), 0.0)
    xl = state.x + state.lam
    K = problem.coupling.matrix
    return (
        problem.objective_value(state.x)
        + 0.5 * float(pp @ pp)
        + 0.5 * float(xl @ (K @ xl))
    )


def lyapunov_value(
    state: SolverState,
    reference: SolverState,
    problem: ProblemInstance,
    ref_tol: float = 1e-4,
) -> LyapunovValue:
    """Evaluate the descent function at ``state`` against a converged point.

    ``reference`` must be a near-equilibrium (its residual max-component
    at most ``ref_tol``), otherwise the quadratic comparison terms are
    meaningless and ``InvalidInputError`` is raised.  Along a trajectory
    of ``integrate`` the total is nonincreasing up to discretization
    error.
    """
    ref_res = kkt_residual(reference, problem)
    if ref_res.max_component > ref_tol:
        raise InvalidInputError(
            f"reference point has residual {ref_res.max_component:.3e} > {ref_tol:.3e}; "
            "not a usable equilibrium"
        )
    K = problem.coupling.matrix
    gain = problem.gain
    v1 = _v1(state, problem)
    v1_ref = _v1(reference, problem)
    grad_ref = _selected_objective_gradient(_pack(reference), problem)
    dx = state.x - reference.x
    dl = state.lam - reference.lam
    dm = state.mu - reference.mu
    v2 = (
        v1
        - v1_ref
        - float(grad_ref @ dx)
        - float((reference.x + reference.lam) @ (K @ dl))
        - float(reference.mu @ dm)
    )
    v3 = 0.5 * float(dx @ dx) + 0.5 * (2.0 * gain * float(dl @ dl) - float(dl @ (K @ dl)))
    v4 = 0.5 * float(dm @ dm)
    return LyapunovValue(total=v1 + v2 + v3 + v4, v1=v1, v2=v2, v3=v3, v4=v4)


# -- trajectory export -------------------------------------------------------


def write_trajectory_csv(trajectory: Trajectory, path, problem: ProblemInstance, reference=None):
    """Write the recorded trajectory as CSV.

    Columns: t, x_1..x_n, lambda_1..lambda_n, mu_1..mu_m, objective, the
    four residuals, and V when a reference state is supplied.  Floats are
    printed with 17 significant digits, so identical runs produce
    byte-identical files.
    """
    n, m = problem.total_dim, problem.multiplier_dim
    header = (
        ["t"]
        + [f"x_{k}" for k in range(1, n + 1)]
        + [f"lambda_{k}" for k in range(1, n + 1)]
        + [f"mu_{k}" for k in range(1, m + 1)]
        + ["objective", "res_stationarity", "res_consensus",
           "res_complementarity", "res_feasibility"]
    )
    if reference is not None:
        header.append("V")

    def fmt(v):
        return f"{v:.17g}"

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for t, st, res, obj in zip(
            trajectory.times, trajectory.states, trajectory.residuals, trajectory.objectives
        ):
            row = (
                [fmt(t)]
                + [fmt(v) for v in st.x]
                + [fmt(v) for v in st.lam]
                + [fmt(v) for v in st.mu]
                + [fmt(obj), fmt(res.stationarity), fmt(res.consensus),
                   fmt(res.complementarity), fmt(res.feasibility)]
            )
            if reference is not None:
                row.append(fmt(lyapunov_value(st, reference, problem).total))
            fh.write(",".join(row) + "\n")
