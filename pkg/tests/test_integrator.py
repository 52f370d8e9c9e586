import numpy as np
import pytest
from scipy.optimize import fsolve

from modectl import (
    NonPositivePeriodError,
    PendulumParams,
    PotentialNet,
    ShapeMismatchError,
    State,
    TaskSpec,
    TimeGrid,
    TrajectoryCotangents,
    backprop_trajectory,
    loss_total,
    LossWeights,
    rollout,
    rollout_controlled,
    rollout_scaled,
)
from modectl.dynamics import mass_matrix_inverse, open_loop_potential_grad


def zero_net(width=4):
    return PotentialNet(
        w1=np.zeros((width, 2)), b1=np.zeros(width), w2=np.zeros(width), b2=0.0
    )


def test_grid_validation():
    with pytest.raises(NonPositivePeriodError):
        TimeGrid(period=-1.0, steps=10)
    with pytest.raises(ValueError):
        TimeGrid(period=1.0, steps=3)
    grid = TimeGrid(period=1.5, steps=150)
    assert grid.dt == pytest.approx(0.01)
    assert grid.midpoint_index == 75


def test_rollout_from_equilibrium_is_constant(params):
    qeq = fsolve(lambda q: open_loop_potential_grad(params, q), [0.0, 0.3])
    traj = rollout(params, zero_net(), qeq, TimeGrid(1.5, 150))
    assert np.abs(traj.q - qeq).max() < 1e-9
    assert np.abs(traj.p).max() < 1e-9


def test_rollout_starts_at_rest(params, small_net):
    traj = rollout(params, small_net, np.array([0.2, 0.5]), TimeGrid(1.5, 150))
    assert np.all(traj.p[0] == 0.0)
    assert traj.q.shape == (151, 2)


def test_energy_constant_along_rollout(params):
    for seed in range(3):
        net = PotentialNet.initialize(width=256, seed=seed)
        traj = rollout(params, net, np.array([-0.37, 0.95]), TimeGrid(1.5, 150))
        assert np.abs(traj.energy - traj.energy[0]).max() < 1e-6


def test_rk4_order_via_step_halving(params, small_net):
    q0 = np.array([-0.37, 0.95])
    ref = rollout(params, small_net, q0, TimeGrid(1.5, 1200))
    end_ref = np.concatenate([ref.q[-1], ref.p[-1]])
    errs = []
    for steps in (150, 300):
        tr = rollout(params, small_net, q0, TimeGrid(1.5, steps))
        errs.append(np.linalg.norm(np.concatenate([tr.q[-1], tr.p[-1]]) - end_ref))
    assert errs[0] / errs[1] >= 8.0


def test_recorded_controls_are_potential_gradient(params, small_net):
    traj = rollout(params, small_net, np.array([0.1, 0.2]), TimeGrid(1.0, 50))
    for i in (0, 17, 50):
        assert np.allclose(traj.u[i], small_net.input_gradient(traj.q[i]))


def test_controlled_rollout_with_zero_feedback_matches_rollout(params, small_net):
    grid = TimeGrid(1.5, 150)
    free = rollout(params, small_net, np.array([0.3, 0.4]), grid)
    controlled = rollout_controlled(
        params,
        small_net,
        State(q=np.array([0.3, 0.4]), p=np.zeros(2)),
        duration=1.5,
        dt=0.01,
        controller=lambda q, p: np.zeros(2),
    )
    assert np.abs(controlled.q - free.q).max() == 0.0
    assert np.abs(controlled.p - free.p).max() == 0.0


def test_damping_controller_dissipates_energy(params, small_net):
    b = 0.5
    controlled = rollout_controlled(
        params,
        small_net,
        State(q=np.array([0.3, 0.4]), p=np.array([2.0, -1.0])),
        duration=3.0,
        dt=0.005,
        controller=lambda q, p: -b * (mass_matrix_inverse(params, q) @ p),
    )
    diffs = np.diff(controlled.energy)
    assert np.all(diffs <= 1e-10)


def test_energy_feedback_steers_energy_toward_target(params, small_net):
    # with only the energy term active, sign(dE/dt) = sign(E_bar - E)
    from modectl import energy_feedback

    for e_bar_offset in (+5.0, -5.0):
        start = State(q=np.array([0.3, 0.4]), p=np.array([2.0, -1.0]))
        e0 = None
        from modectl.integrator import _energy

        e0 = _energy(params, small_net, start.q, start.p)
        e_bar = e0 + e_bar_offset

        tr = rollout_controlled(
            params,
            small_net,
            start,
            duration=0.5,
            dt=0.005,
            controller=lambda q, p: energy_feedback(
                params, small_net, State(q=q, p=p), e_bar, 1.0
            ),
        )
        diffs = np.diff(tr.energy)
        if e_bar_offset > 0:
            assert np.all(diffs > 0.0)
        else:
            assert np.all(diffs < 0.0)


def test_nonfinite_rollout_reports_step():
    from modectl import NonFiniteStateError

    params = PendulumParams()
    wild = PotentialNet(
        w1=np.full((4, 2), 50.0), b1=np.zeros(4), w2=np.full(4, 1e150), b2=0.0
    )
    with pytest.raises(NonFiniteStateError) as err:
        rollout(params, wild, np.array([0.5, 0.5]), TimeGrid(1.5, 150))
    assert err.value.step >= 1


def test_backprop_zero_cotangents_give_zero_gradient(params, small_net):
    traj = rollout(params, small_net, np.array([0.2, 0.3]), TimeGrid(1.0, 50))
    sens = backprop_trajectory(
        params, small_net, traj, TrajectoryCotangents.zeros(51)
    )
    assert np.all(sens.d_theta == 0.0)
    assert sens.d_period is None


def test_backprop_shape_mismatch(params, small_net):
    traj = rollout(params, small_net, np.array([0.2, 0.3]), TimeGrid(1.0, 50))
    with pytest.raises(ShapeMismatchError):
        backprop_trajectory(params, small_net, traj, TrajectoryCotangents.zeros(50))


def test_full_loss_gradient_matches_finite_differences(params):
    # primary correctness gate for the discrete adjoint
    width = 16
    net = PotentialNet.initialize(width=width, seed=7)
    spec = TaskSpec(q0=np.array([-0.37, 0.95]), h_star=np.array([-0.06, -1.93]))
    weights = LossWeights()
    grid = TimeGrid(1.5, 150)

    def loss_of(theta):
        n = PotentialNet.from_flat(theta, width)
        tr = rollout(params, n, spec.q0, grid)
        value, _ = loss_total(params, tr, spec, weights)
        return value

    traj = rollout(params, net, spec.q0, grid)
    _, cot = loss_total(params, traj, spec, weights)
    sens = backprop_trajectory(params, net, traj, cot, period_sensitivity=True)

    theta = net.to_flat()
    h = 1e-5
    rng = np.random.default_rng(3)
    for i in rng.choice(net.n_params, 20, replace=False):
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        fd = (loss_of(tp) - loss_of(tm)) / (2 * h)
        assert abs(sens.d_theta[i] - fd) <= 1e-3 * max(1e-8, abs(fd))

    def loss_of_period(T):
        tr = rollout_scaled(params, net, spec.q0, T, 150)
        sp = TaskSpec(q0=spec.q0, h_star=spec.h_star, period=T)
        value, _ = loss_total(params, tr, sp, weights)
        return value

    fd_T = (loss_of_period(1.5 + h) - loss_of_period(1.5 - h)) / (2 * h)
    assert abs(sens.d_period - fd_T) <= 1e-3 * abs(fd_T)


def test_gradient_of_midpoint_momentum_vanishes_at_equilibrium(params):
    # lambda2-type loss is stationary where its constraint is already met
    qeq = fsolve(lambda q: open_loop_potential_grad(params, q), [0.0, 0.3])
    net = zero_net()
    traj = rollout(params, net, qeq, TimeGrid(1.5, 150))
    cot = TrajectoryCotangents.zeros(151)
    cot.p[75] = traj.p[75]  # gradient of (1/2)|p(T/2)|^2
    sens = backprop_trajectory(params, net, traj, cot)
    assert np.abs(sens.d_theta).max() < 1e-12


def test_scaled_rollout_matches_plain_rollout(params, small_net):
    q0 = np.array([0.25, -0.4])
    a = rollout(params, small_net, q0, TimeGrid(2.0, 100))
    b = rollout_scaled(params, small_net, q0, 2.0, 100)
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.p, b.p)


def test_scaled_rollout_rejects_nonpositive_period(params, small_net):
    with pytest.raises(NonPositivePeriodError):
        rollout_scaled(params, small_net, np.zeros(2), -0.5, 100)


def test_time_rescaling_invariance(params):
    # doubling the period while halving the field reproduces the states:
    # the field halves under m -> 2m, g -> g/4, k -> k/2, (w2, b2) -> half
    net = PotentialNet.initialize(width=8, seed=1)
    half_net = PotentialNet(w1=net.w1, b1=net.b1, w2=0.5 * net.w2, b2=0.5 * net.b2)
    params2 = PendulumParams(
        m=2.0 * params.m, d=params.d, g=params.g / 4.0, k=params.k / 2.0
    )
    q0 = np.array([0.3, 0.6])
    a = rollout_scaled(params, net, q0, 1.5, 150)
    b = rollout_scaled(params2, half_net, q0, 3.0, 150)
    assert np.abs(a.q - b.q).max() < 1e-12
    assert np.abs(a.p - b.p).max() < 1e-12


def test_rollout_is_deterministic(params, small_net):
    q0 = np.array([0.1, 0.9])
    a = rollout(params, small_net, q0, TimeGrid(1.5, 150))
    b = rollout(params, small_net, q0, TimeGrid(1.5, 150))
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.energy, b.energy)


def test_forward_and_backward_time_are_symmetric(params, small_net):
    # trajectories from rest retrace themselves when momentum is flipped at
    # the turning point
    q0 = np.array([-0.37, 0.95])
    grid = TimeGrid(1.5, 300)
    forward = rollout(params, small_net, q0, grid)
    half = grid.midpoint_index
    flipped = rollout_controlled(
        params,
        small_net,
        State(q=forward.q[half], p=-forward.p[half]),
        duration=0.75,
        dt=grid.dt,
        controller=lambda q, p: np.zeros(2),
    )
    for i in range(half + 1):
        assert np.abs(flipped.q[i] - forward.q[half - i]).max() < 1e-5
        assert np.abs(flipped.p[i] + forward.p[half - i]).max() < 1e-5


def test_trajectory_csv_round_trip(tmp_path, params, small_net):
    traj = rollout(params, small_net, np.array([0.2, 0.3]), TimeGrid(1.0, 10))
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,q1,q2,p1,p2,u1,u2,E"
    assert len(lines) == 12
    row = np.array([float(v) for v in lines[4].split(",")])
    assert row[0] == pytest.approx(0.3)
    assert np.allclose(row[1:3], traj.q[3])
    assert np.allclose(row[7], traj.energy[3])
