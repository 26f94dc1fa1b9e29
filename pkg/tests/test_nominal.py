import numpy as np
import pytest

from swarmmpc.nominal import (
    InputSequence,
    NominalState,
    ReferenceTrajectory,
    TrajectoryMetadata,
    hover_trajectory,
    propagate,
    sample,
    shift,
    terminal_rest,
    trajectories_equal,
)


def make_state(p=(0, 0, 0), v=(0, 0, 0), a=(0, 0, 0)):
    return NominalState(np.array(p, float), np.array(v, float), np.array(a, float))


def random_trajectory(rng, h=15, dt=0.2, round_steps=1, rest_tail=True):
    init = make_state(rng.uniform(-1, 1, 3), rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3))
    jerks = rng.uniform(-5, 5, size=(h, 3))
    if rest_tail:
        # solve the last two jerk steps so velocity and acceleration vanish
        # exactly at the horizon end
        probe = ReferenceTrajectory(0, init, InputSequence(jerks.copy(), dt),
                                    TrajectoryMetadata(0, 0), round_steps)
        nodes = probe.nodes()
        v, a = nodes[h - 2, 3:6], nodes[h - 2, 6:9]
        m = np.array([[1.5 * dt * dt, 0.5 * dt * dt], [dt, dt]])
        rhs = np.stack([-(v + 2 * dt * a), -a], axis=0)
        sol = np.linalg.solve(m, rhs)
        jerks[h - 2] = sol[0]
        jerks[h - 1] = sol[1]
    return ReferenceTrajectory(0, init, InputSequence(jerks, dt),
                               TrajectoryMetadata(0, 0), round_steps)


class TestPropagate:
    def test_unit_jerk_closed_form(self):
        s = propagate(make_state(), (6, 0, 0), 1.0)
        assert np.allclose(s.position, [1, 0, 0])
        assert np.allclose(s.velocity, [3, 0, 0])
        assert np.allclose(s.acceleration, [6, 0, 0])

    def test_constant_velocity(self):
        s = propagate(make_state(p=(1, 0, 0), v=(2, 0, 0)), (0, 0, 0), 0.5)
        assert s.position[0] == 2.0
        assert s.velocity[0] == 2.0
        assert s.acceleration[0] == 0.0

    def test_semigroup_split_step(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            s = make_state(rng.uniform(-2, 2, 3), rng.uniform(-1, 1, 3), rng.uniform(-3, 3, 3))
            u = rng.uniform(-8, 8, 3)
            whole = propagate(s, u, 0.2)
            halves = propagate(propagate(s, u, 0.1), u, 0.1)
            assert np.allclose(whole.as_vector(), halves.as_vector(), atol=1e-12)

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            propagate(make_state(), (0, 0, 0), -0.1)


class TestSample:
    def test_hover_everywhere(self):
        traj = hover_trajectory((0, 0, 1), 15, 0.2, 1)
        for tau in (0.0, 0.13, 1.0, 3.0, 42.0):
            s = sample(traj, tau)
            assert np.array_equal(s.position, [0, 0, 1])
            assert np.all(s.velocity == 0) and np.all(s.acceleration == 0)

    def test_grid_boundary_matches_repeated_propagation(self):
        rng = np.random.default_rng(1)
        traj = random_trajectory(rng, rest_tail=False)
        state = traj.initial_state
        for kappa in range(traj.horizon_steps):
            got = sample(traj, kappa * 0.2)
            assert np.allclose(got.as_vector(), state.as_vector(), atol=1e-12)
            state = propagate(state, traj.inputs.jerks[kappa], 0.2)

    def test_terminal_hold(self):
        rng = np.random.default_rng(2)
        traj = random_trajectory(rng)
        end = sample(traj, traj.horizon_time)
        later = sample(traj, traj.horizon_time + 10.0)
        assert np.array_equal(end.as_vector(), later.as_vector())

    def test_negative_tau_rejected(self):
        with pytest.raises(ValueError):
            sample(hover_trajectory((0, 0, 1), 5, 0.2, 1), -0.01)


class TestShift:
    def test_hover_is_fixed_point(self):
        traj = hover_trajectory((1, 2, 1), 15, 0.2, 1)
        out = shift(traj)
        assert out.start_round == 1
        assert trajectories_equal(
            out, hover_trajectory((1, 2, 1), 15, 0.2, 1, start_round=1))

    def test_index_shift_two_steps(self):
        jerks = np.array([[1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]], float)
        traj = ReferenceTrajectory(0, make_state(), InputSequence(jerks, 0.1),
                                   TrajectoryMetadata(3, 1), round_steps=2)
        out = shift(traj)
        assert np.array_equal(out.inputs.jerks[:, 0], [3, 4, 0, 0])
        assert out.metadata == traj.metadata

    def test_shift_consistency_dense_sampling(self):
        # sample(shift(t), tau) == sample(t, tau + T) over the retained horizon
        rng = np.random.default_rng(3)
        for _ in range(5):
            traj = random_trajectory(rng)
            shifted = shift(traj)
            T = traj.round_period
            for tau in np.linspace(0, traj.horizon_time - T, 57):
                a = sample(shifted, tau).as_vector()
                b = sample(traj, tau + T).as_vector()
                assert np.allclose(a, b, atol=1e-12)


class TestTerminalRest:
    def test_exact_rest(self):
        assert terminal_rest(make_state(p=(3, 1, 4)))

    def test_tiny_velocity_fails_exact_policy(self):
        assert not terminal_rest(make_state(v=(1e-12, 0, 0)))

    def test_tolerance(self):
        assert terminal_rest(make_state(v=(1e-12, 0, 0)), tol=1e-9)

    def test_rest_tail_construction(self):
        rng = np.random.default_rng(4)
        traj = random_trajectory(rng)
        assert terminal_rest(traj.terminal_state(), tol=1e-9)
