"""Decentralized execution of the flow as message-passing agents.

Each agent owns only its objective, constraints and box, plus the
Laplacian weights of its incident edges.  In every synchronous round the
agents exchange the shared components of (x_i, lambda_i) along graph
edges and advance their own blocks with the same per-agent velocity
routine the centralized integrator uses, so a decentralized run
reproduces the centralized trajectory bit for bit.  The "network" is an
in-process simulation: rounds are lockstep, there is no loss or delay.

rk4 needs neighbor values at every stage state, so one rk4 step costs
four exchanges; Euler costs one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    AgentProblem,
    ProblemInstance,
    SolverState,
    Trajectory,
    _agent_velocity,
    _residuals,
    capture_agent_kinks,
    initial_state,
    DIVERGENCE_NORM,
    METHODS,
)
from .errors import DivergenceError, InvalidInputError, NumericalError, ProtocolError
from .pcmatrix import laplacian_is_connected


@dataclass(frozen=True)
class Message:
    """One directed payload: the sender's shared (x, lambda) components."""

    round_index: int
    sender: int
    receiver: int
    x_shared: np.ndarray
    lam_shared: np.ndarray


class Agent:
    """Holds one agent's private problem data and its state block.

    ``neighbors`` lists (0-based neighbor index, edge weight) in
    ascending index order; the weights are the negated off-diagonal
    Laplacian entries, so they are positive.
    """

    def __init__(self, agent_id, problem, depth, gain, neighbors, capture_table,
                 x, lam, mu):
        self.id = agent_id  # 1-based, for logs
        self.problem: AgentProblem = problem
        self.depth = depth
        self.gain = gain
        self.neighbors = tuple(neighbors)
        self.capture_table = tuple(capture_table)
        self.x = np.asarray(x, dtype=float).copy()
        self.lam = np.asarray(lam, dtype=float).copy()
        self.mu = np.asarray(mu, dtype=float).copy()
        self.round_index = 0

    def payload(self, x=None, lam=None):
        """Shared components broadcast to neighbors (stage state override)."""
        x = self.x if x is None else x
        lam = self.lam if lam is None else lam
        return x[: self.depth].copy(), lam[: self.depth].copy()

    def local_velocity(self, x, lam, mu, received):
        """Velocity of the own block from own data plus neighbor payloads.

        ``received`` maps neighbor index to (x_shared, lam_shared); a
        missing payload is a protocol violation.
        """
        terms = []
        for j, w in self.neighbors:
            if j not in received:
                raise ProtocolError(f"agent {self.id} missing payload from agent {j + 1}")
            xj, lj = received[j]
            terms.append((w, xj, lj))
        return _agent_velocity(self.problem, x, lam, mu, terms, self.depth, self.gain)


def build_agents(problem: ProblemInstance, init: SolverState = None):
    """Instantiate one Agent per block of the problem.

    The gain is computed centrally once (it needs the full spectrum) and
    distributed; everything else an agent receives is local.  Requires a
    connected graph.
    """
    if not laplacian_is_connected(problem.laplacian):
        raise InvalidInputError("the coupling graph must be connected")
    state = init if init is not None else initial_state(problem, "zeros")
    agents = []
    for i, ap in enumerate(problem.agents):
        s = problem.block(i)
        ms = problem.mu_block(i)
        agents.append(
            Agent(
                agent_id=i + 1,
                problem=ap,
                depth=problem.depth,
                gain=problem.gain,
                neighbors=problem.neighbors[i],
                capture_table=problem._capture_table[i],
                x=state.x[s],
                lam=state.lam[s],
                mu=state.mu[ms],
            )
        )
    return agents


def _exchange(agents, stage_x, stage_lam, log, round_index):
    """Deliver shared payloads along every directed edge.

    Returns per-agent dicts neighbor-index -> payload and the number of
    directed payloads sent.
    """
    payloads = [a.payload(stage_x[i], stage_lam[i]) for i, a in enumerate(agents)]
    received = [{} for _ in agents]
    count = 0
    for i, agent in enumerate(agents):
        for j, _w in agent.neighbors:
            received[i][j] = payloads[j]
            count += 1
            if log is not None:
                log.append(
                    Message(
                        round_index=round_index,
                        sender=agents[j].id,
                        receiver=agent.id,
                        x_shared=payloads[j][0],
                        lam_shared=payloads[j][1],
                    )
                )
    return received, count


def _stage_velocities(agents, stage_x, stage_lam, stage_mu, log, round_index):
    """One exchange followed by every agent's local velocity."""
    received, count = _exchange(agents, stage_x, stage_lam, log, round_index)
    vel = []
    for i, agent in enumerate(agents):
        vel.append(
            agent.local_velocity(stage_x[i], stage_lam[i], stage_mu[i], received[i])
        )
    return vel, count


def _round_from_first_stage(agents, h, method, k1, log, capture=True):
    """Advance all agents one step, reusing the already-exchanged stage 1.

    Returns the number of directed payloads sent by the remaining
    exchanges.
    """
    count = 0
    xs = [a.x for a in agents]
    ls = [a.lam for a in agents]
    ms = [a.mu for a in agents]
    rnd = agents[0].round_index
    if method == "euler":
        newx = [x + h * v[0] for x, v in zip(xs, k1)]
        newl = []
        for lam, v, a in zip(ls, k1, agents):
            nl = lam.copy()
            nl[: a.depth] += h * v[1]
            newl.append(nl)
        newm = [mu + h * v[2] for mu, v in zip(ms, k1)]
    else:
        def at(coef, vel):
            sx = [x + coef * v[0] for x, v in zip(xs, vel)]
            sl = []
            for lam, v, a in zip(ls, vel, agents):
                nl = lam.copy()
                nl[: a.depth] += coef * v[1]
                sl.append(nl)
            sm = [mu + coef * v[2] for mu, v in zip(ms, vel)]
            return sx, sl, sm

        s2 = at(0.5 * h, k1)
        k2, c = _stage_velocities(agents, *s2, log, rnd)
        count += c
        s3 = at(0.5 * h, k2)
        k3, c = _stage_velocities(agents, *s3, log, rnd)
        count += c
        s4 = at(h, k3)
        k4, c = _stage_velocities(agents, *s4, log, rnd)
        count += c
        newx, newl, newm = [], [], []
        for i, a in enumerate(agents):
            newx.append(
                xs[i] + (h / 6.0) * (k1[i][0] + 2.0 * k2[i][0] + 2.0 * k3[i][0] + k4[i][0])
            )
            nl = ls[i].copy()
            nl[: a.depth] += (h / 6.0) * (
                k1[i][1] + 2.0 * k2[i][1] + 2.0 * k3[i][1] + k4[i][1]
            )
            newl.append(nl)
            newm.append(
                ms[i] + (h / 6.0) * (k1[i][2] + 2.0 * k2[i][2] + 2.0 * k3[i][2] + k4[i][2])
            )
    for i, agent in enumerate(agents):
        if capture and agent.capture_table:
            capture_agent_kinks(
                agent.problem, agent.capture_table, newx[i], agent.x,
                k1[i][0], newm[i], h, agent.gain,
            )
        agent.x, agent.lam, agent.mu = newx[i], newl[i], newm[i]
        agent.round_index += 1
    return count


def synchronous_round(agents, h, method="rk4", capture=True, log=None):
    """One synchronous exchange-and-step for every agent, in lockstep.

    All agents must be at the same round number.  Agents are mutated in
    place and returned; the second element of the result is the number
    of directed payloads sent.
    """
    if method not in METHODS:
        raise InvalidInputError(f"method must be one of {METHODS}, got {method!r}")
    rounds = {a.round_index for a in agents}
    if len(rounds) != 1:
        raise ProtocolError(f"agents out of sync: round numbers {sorted(rounds)}")
    rnd = agents[0].round_index
    xs = [a.x for a in agents]
    ls = [a.lam for a in agents]
    ms = [a.mu for a in agents]
    k1, count = _stage_velocities(agents, xs, ls, ms, log, rnd)
    count += _round_from_first_stage(agents, h, method, k1, log, capture=capture)
    return agents, count


def _assemble(agents, problem, t) -> SolverState:
    x = np.concatenate([a.x for a in agents])
    lam = np.concatenate([a.lam for a in agents])
    mu = np.concatenate([a.mu for a in agents])
    return SolverState(x, lam, mu, t)


def run_decentralized(
    problem: ProblemInstance,
    init: SolverState = None,
    h: float = 1e-3,
    method: str = "rk4",
    t_max: float = 100.0,
    kkt_tol: float = 1e-6,
    record_every: int = 1,
    capture_kinks: bool = True,
    message_log=None,
) -> Trajectory:
    """Decentralized counterpart of ``integrate`` with identical results.

    Termination, recording and kink capture follow the centralized
    integrator exactly; additionally the trajectory carries the total
    number of directed payloads and the per-step cost.  Pass a list as
    ``message_log`` to record every payload.
    """
    if h <= 0 or t_max <= 0 or kkt_tol <= 0:
        raise InvalidInputError("h, t_max and kkt_tol must all be positive")
    if method not in METHODS:
        raise InvalidInputError(f"method must be one of {METHODS}, got {method!r}")
    if record_every < 1:
        raise InvalidInputError("record_every must be at least 1")

    agents = build_agents(problem, init)
    t0 = init.t if init is not None else 0.0
    n = problem.total_dim

    times, states, residuals, objectives, violations = [], [], [], [], []
    started = time.perf_counter()
    total_messages = 0

    def record(t, res):
        st = _assemble(agents, problem, t)
        times.append(t)
        states.append(st)
        residuals.append(res)
        objectives.append(problem.objective_value(st.x))
        violations.append(problem.box_violation(st.x))

    stop_reason = "t_max"
    steps = 0
    while True:
        t = t0 + steps * h
        xs = [a.x for a in agents]
        ls = [a.lam for a in agents]
        ms = [a.mu for a in agents]
        k1, count = _stage_velocities(agents, xs, ls, ms, message_log, steps)
        total_messages += count
        # assemble the stacked velocity exactly as the centralized code does
        dz = np.zeros(2 * n + problem.multiplier_dim)
        gstack = np.empty(problem.multiplier_dim)
        for i in range(len(agents)):
            s = problem.block(i)
            ms_sl = problem.mu_block(i)
            dz[:n][s] = k1[i][0]
            dz[n : 2 * n][s][: problem.depth] = k1[i][1]
            dz[2 * n :][ms_sl] = k1[i][2]
            gstack[ms_sl] = k1[i][3]
        res = _residuals(dz, gstack, problem)
        if res.max_component <= kkt_tol:
            record(t, res)
            stop_reason = "kkt_converged"
            break
        if t >= t_max - 1e-12:
            record(t, res)
            stop_reason = "t_max"
            break
        if steps % record_every == 0:
            record(t, res)
        total_messages += _round_from_first_stage(
            agents, h, method, k1, message_log, capture=capture_kinks
        )
        flat = _assemble(agents, problem, t + h)
        z_new = np.concatenate([flat.x, flat.lam, flat.mu])
        if not np.all(np.isfinite(z_new)):
            raise NumericalError(f"non-finite state produced at t={t + h}")
        if np.linalg.norm(z_new) > DIVERGENCE_NORM:
            raise DivergenceError(
                f"state norm exceeded {DIVERGENCE_NORM:g} at t={t + h}",
                state=states[-1] if states else None,
                t=t + h,
            )
        steps += 1

    edges = sum(len(a.neighbors) for a in agents)
    return Trajectory(
        times=times,
        states=states,
        residuals=residuals,
        objectives=objectives,
        box_violations=violations,
        stop_reason=stop_reason,
        total_steps=steps,
        wall_time=time.perf_counter() - started,
        message_rounds=steps,
        message_count=total_messages,
        messages_per_step=edges * (1 if method == "euler" else 4),
    )


def write_message_log_csv(messages, path):
    """CSV dump of a message log: round, sender, receiver, payload.

    The payload column joins the shared x components and the shared
    lambda components with semicolons.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("round,sender,receiver,payload\n")
        for m in messages:
            payload = ";".join(
                f"{v:.17g}" for v in np.concatenate([m.x_shared, m.lam_shared])
            )
            fh.write(f"{m.round_index},{m.sender},{m.receiver},{payload}\n")
