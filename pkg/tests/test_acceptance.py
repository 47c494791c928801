"""Acceptance gate: every criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass line
per criterion.
"""
import time

import numpy as np
import pytest

from pcons import convex
from pcons.dynamics import (
    AgentProblem,
    SolverState,
    initial_state,
    integrate,
    kkt_residual,
    lyapunov_value,
    rhs,
)
from pcons.network import build_agents, run_decentralized, synchronous_round
from pcons.oracle import brute_force_solve
from pcons.pcmatrix import build_partial_consensus_matrix, spectral_summary

from conftest import random_connected_laplacian, random_problem

COMPLETE_L3 = np.array([[2.0, -1, -1], [-1, 2, -1], [-1, -1, 2]])

K3_EXPECTED = np.array([
    [2, 0, 0, -1, 0, 0, 0, -1, 0, 0, 0, 0],
    [0, 2, 0, 0, -1, 0, 0, 0, -1, 0, 0, 0],
    [0, 0, 2, 0, 0, -1, 0, 0, 0, -1, 0, 0],
    [-1, 0, 0, 2, 0, 0, 0, -1, 0, 0, 0, 0],
    [0, -1, 0, 0, 2, 0, 0, 0, -1, 0, 0, 0],
    [0, 0, -1, 0, 0, 2, 0, 0, 0, -1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [-1, 0, 0, -1, 0, 0, 0, 2, 0, 0, 0, 0],
    [0, -1, 0, 0, -1, 0, 0, 0, 2, 0, 0, 0],
    [0, 0, -1, 0, 0, -1, 0, 0, 0, 2, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
], dtype=float)


@pytest.fixture(scope="session")
def oracle_optimum(example2):
    return brute_force_solve(example2.problem, grid=1e-3)


def test_criterion_1_matrix_reproduction():
    build_partial_consensus_matrix(COMPLETE_L3, [3, 4, 5], 3)  # warm-up
    best = min(
        _timed(lambda: build_partial_consensus_matrix(COMPLETE_L3, [3, 4, 5], 3))
        for _ in range(5)
    )
    pc = build_partial_consensus_matrix(COMPLETE_L3, [3, 4, 5], 3)
    assert np.array_equal(pc.matrix, K3_EXPECTED)
    assert best < 1e-3
    print(f"criterion 1 PASS: 12x12 coupling matrix entrywise exact, build {best * 1e6:.0f} us")


def _timed(fn):
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


def test_criterion_2_kernel_equivalence_suite():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    for _ in range(1000):
        nodes = int(rng.integers(2, 5))
        lap = random_connected_laplacian(rng, nodes, integer_weights=True)
        dims = [int(rng.integers(1, 5)) for _ in range(nodes)]
        depth = int(rng.integers(1, min(dims) + 1))
        pc = build_partial_consensus_matrix(lap, dims, depth)
        offsets = pc.dims.offsets
        if rng.random() < 0.5:
            shared = rng.standard_normal(depth)
            x = rng.standard_normal(pc.order)
            for off in offsets:
                x[off : off + depth] = shared
            assert np.linalg.norm(pc.matrix @ x) <= 1e-12
        else:
            x = rng.standard_normal(pc.order)
            blocks = [x[off : off + depth] for off in offsets]
            if not all(np.array_equal(blocks[0], b) for b in blocks):
                assert np.linalg.norm(pc.matrix @ x) > 1e-12
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    print(f"criterion 2 PASS: 1000 kernel equivalence cases in {elapsed:.3f} s")


def test_criterion_3_spectrum():
    rng = np.random.default_rng(31)
    checked_depth_one = 0
    for _ in range(100):
        nodes = int(rng.integers(2, 7))
        lap = random_connected_laplacian(rng, nodes, integer_weights=False)
        dims = [int(rng.integers(1, 4)) for _ in range(nodes)]
        depth = int(rng.integers(1, min(dims) + 1))
        pc = build_partial_consensus_matrix(lap, dims, depth)
        summary = spectral_summary(pc)
        assert summary.min_eigenvalue >= -1e-10
        # kernel dimension: depth shared directions plus the padded
        # coordinates (the printed "+1" closed form is valid only for
        # depth 1, where both forms coincide; see the notes ledger)
        assert summary.zero_multiplicity == pc.order - depth * nodes + depth
        if depth == 1:
            assert summary.zero_multiplicity == pc.order - nodes + 1
            checked_depth_one += 1
        kron_max = float(np.linalg.eigvalsh(np.kron(lap, np.eye(depth)))[-1])
        assert abs(summary.max_eigenvalue - kron_max) <= 1e-10
    assert checked_depth_one >= 10
    print(
        "criterion 3 PASS: 100 spectra PSD, zero multiplicity matches the kernel "
        f"dimension (depth-1 closed form re-checked on {checked_depth_one} instances), "
        "max eigenvalue matches the Kronecker core"
    )


def test_criterion_4_subgradient_validity():
    rng = np.random.default_rng(4)
    atoms = {
        "affine": convex.affine([1.2, -0.4], 0.3),
        "quadratic": convex.quadratic(2, 0, center=0.25, weight=1.7),
        "absolute": convex.absolute(2, 1, center=-0.6, weight=0.9),
        "exponential": convex.exponential(2, 0, weight=0.4),
        "weighted_sum": 0.5 * convex.quadratic(2, 0, 1.0)
                        + 2.0 * convex.absolute(2, 1, 0.0)
                        + convex.exponential(2, 1, 0.1)
                        + convex.affine([0.1, 0.2], -1.0),
    }
    for name, e in atoms.items():
        for _ in range(10_000):
            x = rng.uniform(-2.0, 2.0, 2)
            y = rng.uniform(-2.0, 2.0, 2)
            g = e.subgradient(x)
            slack = e.value(y) - e.value(x) - float(g @ (y - x))
            assert slack >= -1e-10, (name, x, y, slack)
        smooth_checked = 0
        eps = 1e-6
        while smooth_checked < 1000:
            x = rng.uniform(-2.0, 2.0, 2)
            if any(abs(x[k] - c) < 1e-3 for k, c in e.kink_locations()):
                continue
            g = e.subgradient(x)
            for k in range(2):
                xp, xm = x.copy(), x.copy()
                xp[k] += eps
                xm[k] -= eps
                fd = (e.value(xp) - e.value(xm)) / (2 * eps)
                assert abs(g[k] - fd) / max(1.0, abs(fd)) < 1e-5, (name, x, k)
            smooth_checked += 1
    print("criterion 4 PASS: 10^4 convexity inequalities per atom family, "
          "finite differences agree at smooth points")


def test_criterion_5_end_to_end(example2, example2_run, oracle_optimum):
    problem = example2.problem
    traj = example2_run  # rk4, h = 1e-3, zeros init, kkt_tol 1e-6
    assert traj.stop_reason == "kkt_converged"
    assert traj.final.t <= 100.0
    assert traj.wall_time < 30.0
    res = traj.final_residual
    assert res.max_component <= 1e-6
    x = traj.final.x
    shared = [x[0], x[1], x[3]]
    assert max(shared) - min(shared) <= 1e-6
    assert np.all(problem.constraint_values(x) <= 1e-6)
    assert traj.box_violations[-1] == 0.0
    solver_value = problem.objective_value(x)
    _, oracle_value = oracle_optimum
    assert abs(solver_value - oracle_value) <= 5e-3
    assert solver_value >= oracle_value - 1e-9
    print(
        f"criterion 5 PASS: converged t={traj.final.t:.3f} "
        f"(wall {traj.wall_time:.1f} s), residuals <= 1e-6, shared components "
        f"agree to {max(shared) - min(shared):.2e}, objective {solver_value:.9f} vs "
        f"oracle {oracle_value:.9f}"
    )


def test_criterion_6_lyapunov_descent(example2, example2_run, example2_run_tight):
    problem = example2.problem
    reference = example2_run_tight.final
    h = 1e-3
    allowance = 10.0 * h * h
    values = [
        lyapunov_value(state, reference, problem).total
        for state in example2_run.states
    ]
    worst = max(
        (b - a) for a, b in zip(values, values[1:])
    )
    assert worst <= allowance, f"descent violated by {worst:.3e}"
    assert values[-1] < values[0]
    print(
        f"criterion 6 PASS: descent function over {len(values)} recorded steps, "
        f"worst per-step increase {worst:.2e} <= allowance {allowance:.0e}"
    )


def test_criterion_7_equilibrium_certification(example2, example2_run_tight):
    problem = example2.problem
    final = example2_run_tight.final
    dx, dlam, dmu = rhs(final, problem)
    rhs_norm = float(np.linalg.norm(np.concatenate([dx, dlam, dmu])))
    res = kkt_residual(final, problem)
    assert rhs_norm <= 1e-8
    assert res.max_component <= 1e-8
    rng = np.random.default_rng(7)
    weakest = np.inf
    for _ in range(100):
        perturbed = SolverState(
            final.x + 1e-2 * rng.standard_normal(problem.total_dim),
            final.lam + 1e-2 * rng.standard_normal(problem.total_dim),
            final.mu + 1e-2 * rng.standard_normal(problem.multiplier_dim),
        )
        pres = kkt_residual(perturbed, problem)
        assert pres.max_component > 0.0
        weakest = min(weakest, pres.max_component)
    print(
        f"criterion 7 PASS: at convergence |rhs| = {rhs_norm:.2e} <= 1e-8 and "
        f"residuals <= 1e-8; 100 perturbed states all positive "
        f"(smallest {weakest:.2e})"
    )


def test_criterion_8_decentralized_equivalence(example2, example2_run):
    problem = example2.problem
    decentral = run_decentralized(problem, h=1e-3, method="rk4", kkt_tol=1e-6)
    assert decentral.total_steps == example2_run.total_steps
    worst = 0.0
    for sc, sd in zip(example2_run.states, decentral.states):
        worst = max(
            worst,
            float(np.max(np.abs(sc.x - sd.x))),
            float(np.max(np.abs(sc.lam - sd.lam))),
            float(np.max(np.abs(sc.mu - sd.mu), initial=0.0)),
        )
    assert worst <= 1e-12

    rng = np.random.default_rng(88)
    for _ in range(50):
        p = random_problem(rng)
        init = initial_state(p, "random", rng)
        method = "rk4" if rng.random() < 0.5 else "euler"
        t_max = 30 * 2e-3
        central_run = integrate(p, init, h=2e-3, method=method, t_max=t_max,
                                kkt_tol=1e-15, record_every=1)
        decentral_run = run_decentralized(p, init, h=2e-3, method=method,
                                          t_max=t_max, kkt_tol=1e-15, record_every=1)
        for sc, sd in zip(central_run.states, decentral_run.states):
            assert np.max(np.abs(sc.x - sd.x)) <= 1e-12
            assert np.max(np.abs(sc.lam - sd.lam)) <= 1e-12
            if sc.mu.size:
                assert np.max(np.abs(sc.mu - sd.mu)) <= 1e-12

    # locality: each agent evaluates exactly its own objective, nothing else
    counts = {}

    class CountingExpr:
        def __init__(self, owner, inner):
            self.owner, self.inner, self.dim = owner, inner, inner.dim

        def value(self, x):
            counts[self.owner] = counts.get(self.owner, 0) + 1
            return self.inner.value(x)

        def subgradient(self, x):
            counts[self.owner] = counts.get(self.owner, 0) + 1
            return self.inner.subgradient(x)

        def subgradient_interval(self, x):
            counts[self.owner] = counts.get(self.owner, 0) + 1
            return self.inner.subgradient_interval(x)

        def kink_locations(self):
            return self.inner.kink_locations()

    agents = build_agents(problem)
    for agent in agents:
        agent.problem = AgentProblem(
            objective=CountingExpr(agent.id, agent.problem.objective),
            constraints=agent.problem.constraints,
            box=agent.problem.box,
        )
    for _ in range(10):
        synchronous_round(agents, 1e-3, "euler", capture=False)
    assert counts == {1: 10, 2: 10, 3: 10}
    print(
        "criterion 8 PASS: stepwise equality <= 1e-12 on the packaged problem "
        f"(worst {worst:.1e}) and 50 random instances; locality counter clean"
    )


def test_criterion_9_multistart(example2, oracle_optimum):
    problem = example2.problem
    _, oracle_value = oracle_optimum
    rng = np.random.default_rng(99)
    values = []
    for _ in range(20):
        init = initial_state(problem, "random", rng)
        traj = integrate(problem, init, h=2e-3, method="rk4",
                         t_max=100.0, kkt_tol=1e-6, record_every=10_000)
        assert traj.stop_reason == "kkt_converged"
        values.append(problem.objective_value(traj.final.x))
    spread = max(values) - min(values)
    assert spread <= 1e-3
    assert all(abs(v - oracle_value) <= 1e-3 for v in values)
    print(
        f"criterion 9 PASS: 20 random starts, objective spread {spread:.2e}, "
        f"max oracle gap {max(abs(v - oracle_value) for v in values):.2e}"
    )
