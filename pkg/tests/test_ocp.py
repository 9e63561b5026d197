from dataclasses import replace

import numpy as np
import pytest

from conftest import fd_grad, rel_err
from dualcatch.geometry import Pose, UnitQuaternion, quat_cost_residual
from dualcatch.kinematics import SystemState, chain_residual, fk_catcher
from dualcatch.ocp import (
    PROFILES,
    OcpEvaluator,
    OcpProblem,
    PlannerWeights,
    StageWeights,
    adaptive_weight,
    constraint_eval,
    cost_at,
    cost_pt,
    profile,
    rollout,
)

T_S = 0.04
N = 20


def A_B(T_s, n=14):
    I, Z = np.eye(n), np.zeros((n, n))
    A = np.block([[I, T_s * I], [Z, I]])
    B = np.vstack([0.5 * T_s**2 * I, T_s * I])
    return A, B


def problem(model, q0, target, mode="PT", weights=None, qd0=None, N=N):
    return OcpProblem(model, SystemState(q0, qd0), target, N, T_S, weights or PlannerWeights(), mode)


def shifted_target(model, q, dp=(0.05, -0.03, 0.04), yaw=0.2):
    here = fk_catcher(model, q[:7], "left")
    ori = UnitQuaternion.from_axis_angle([0, 0, 1], yaw) * here.orientation
    return Pose(here.position + np.asarray(dp), ori)


# -- rollout ----------------------------------------------------------------


def test_rollout_single_step_example():
    u = np.zeros((3, 14))
    u[0] = 1.0
    q, qd = rollout(SystemState(np.zeros(14)), u, 0.04)
    assert np.allclose(q[1], 0.0008, rtol=0, atol=1e-18)
    assert np.allclose(qd[1], 0.04, rtol=0, atol=1e-18)


def test_rollout_coasting_and_constant_input():
    rng = np.random.default_rng(0)
    q0, qd0 = rng.normal(size=14), rng.normal(size=14)
    q, qd = rollout(SystemState(q0, qd0), np.zeros((10, 14)), T_S)
    for k in range(11):
        assert np.allclose(q[k], q0 + k * T_S * qd0, atol=1e-13)
    c = rng.normal(size=14)
    q, qd = rollout(SystemState(q0, qd0), np.tile(c, (10, 1)), T_S)
    for k in range(11):
        assert np.allclose(qd[k], qd0 + k * T_S * c, atol=1e-13)


def test_rollout_exact_1000_instances():
    rng = np.random.default_rng(1)
    A, B = A_B(T_S)
    worst = 0.0
    for _ in range(1000):
        z0 = SystemState(rng.normal(size=14), rng.normal(size=14))
        u = rng.normal(size=(N, 14))
        q, qd = rollout(z0, u, T_S)
        z = np.hstack([q, qd])
        r = z[1:] - z[:-1] @ A.T - u @ B.T
        worst = max(worst, float(np.max(np.abs(r))))
    assert worst <= 1e-12


# -- adaptive law -------------------------------------------------------------


def test_adaptive_weight_examples():
    assert adaptive_weight(0.0, 20.0, 50.0, 0.05) == 20.0
    assert adaptive_weight(0.05, 20.0, 50.0, 0.05) == pytest.approx(35.0, abs=1e-12)
    assert adaptive_weight(1000 * 0.05, 20.0, 50.0, 0.05) == pytest.approx(49.97, abs=5e-3)


def test_adaptive_weight_monotone_and_bounded():
    rng = np.random.default_rng(2)
    e = rng.exponential(1.0, size=1000)
    eps = rng.uniform(1e-3, 1.0, size=1000)
    w = adaptive_weight(e, 0.1, 2.0, eps)
    assert np.all((w >= 0.1) & (w < 2.0))
    assert np.all(np.diff(adaptive_weight(np.sort(e), 0.1, 2.0, 0.05)) >= 0)


# -- costs --------------------------------------------------------------------


def test_cost_zero_at_target(model, consistent_q):
    tgt = fk_catcher(model, consistent_q[:7], "left")
    u = np.zeros((N, 14))
    assert cost_pt(problem(model, consistent_q, tgt), u)[0] == pytest.approx(0.0, abs=1e-20)
    assert cost_at(problem(model, consistent_q, tgt, "AT"), u)[0] == pytest.approx(0.0, abs=1e-20)


def test_cost_pt_terminal_only(model, consistent_q):
    tgt = shifted_target(model, consistent_q)
    w = PlannerWeights()
    here = fk_catcher(model, consistent_q[:7], "left")
    e_p = here.position - tgt.position
    r_q = quat_cost_residual(here.orientation, tgt.orientation)
    val, _ = cost_pt(problem(model, consistent_q, tgt, weights=w), np.zeros((N, 14)))
    assert val == pytest.approx(w.P_e * e_p @ e_p + w.O_e * r_q @ r_q, rel=1e-12)


def test_costs_nonnegative(model, consistent_q):
    rng = np.random.default_rng(3)
    tgt = shifted_target(model, consistent_q)
    for mode in ("PT", "AT"):
        p = problem(model, consistent_q, tgt, mode, qd0=rng.normal(scale=0.1, size=14))
        for _ in range(20):
            assert OcpEvaluator(p).cost(rng.normal(size=(N, 14))).value >= 0.0


def test_at_terminal_weights_at_zero_error(model, consistent_q):
    tgt = fk_catcher(model, consistent_q[:7], "left")
    w = PROFILES["at_balanced"][1]
    ev = OcpEvaluator(problem(model, consistent_q, tgt, "AT", w))
    assert (ev.P_term, ev.O_term) == (w.P_e_min, w.O_e_min)
    st = ev.stage_weights(np.zeros((N, 14)))
    assert np.all(st.pos == w.Q_pos_min) and np.all(st.ori == w.Q_ori_min)


def test_at_terminal_weight_midpoint(model, consistent_q):
    w = PROFILES["at_balanced"][1]
    here = fk_catcher(model, consistent_q[:7], "left")
    tgt = Pose(here.position + np.array([w.eps_pos, 0, 0]), here.orientation)
    ev = OcpEvaluator(problem(model, consistent_q, tgt, "AT", w))
    assert ev.P_term == pytest.approx(0.5 * (w.P_e_max + w.P_e_min), rel=1e-12)


def test_at_smooth_terminal_terms_small(model, consistent_q):
    w = PROFILES["at_smooth"][1]
    tgt = shifted_target(model, consistent_q, (0.2, 0.0, 0.0), 0.0)
    rng = np.random.default_rng(4)
    ev = OcpEvaluator(problem(model, consistent_q, tgt, "AT", w))
    for _ in range(5):
        u = rng.normal(scale=0.5, size=(N, 14))
        c = ev.cost(u)
        kin = ev.kin(u)
        e_p = kin.p_left[N] - tgt.position
        assert c.terms["terminal_pos"] <= 0.001 * e_p @ e_p + 1e-15
        assert c.terms["terminal_pos"] < c.terms["stage_pos"]


def test_table_profiles():
    assert profile("at_aggressive")[1].P_e_max == 500 and profile("at_aggressive")[1].P_e_min == 100
    assert profile("at_balanced")[1].P_e_max == 50 and profile("at_balanced")[1].P_e_min == 20
    assert profile("at_smooth")[1].P_e_max == 0.001 and profile("at_smooth")[1].P_e_min == 0
    assert profile("pt")[0] == "PT"
    with pytest.raises(ValueError):
        profile("fast")


def collapsed(w: PlannerWeights) -> PlannerWeights:
    return replace(w, P_e_max=w.P_e, P_e_min=w.P_e, O_e_max=w.O_e, O_e_min=w.O_e,
                   Q_pos_max=0.0, Q_pos_min=0.0, Q_ori_max=0.0, Q_ori_min=0.0)


def test_at_degenerates_to_pt(model, consistent_q):
    rng = np.random.default_rng(5)
    w = collapsed(PlannerWeights())
    tgt = shifted_target(model, consistent_q)
    for _ in range(50):
        qd0 = rng.normal(scale=0.1, size=14)
        u = rng.normal(size=(N, 14))
        a = cost_pt(problem(model, consistent_q, tgt, "PT", w, qd0), u)
        b = cost_at(problem(model, consistent_q, tgt, "AT", w, qd0), u)
        assert abs(a[0] - b[0]) <= 1e-12 * abs(a[0])
        assert np.allclose(a[1], b[1], rtol=1e-12, atol=0)


# -- gradients ----------------------------------------------------------------


def _instances(model, q, n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        tgt = shifted_target(model, q, rng.normal(scale=0.05, size=3), rng.normal(scale=0.3))
        yield tgt, rng.normal(scale=0.2, size=14), rng.normal(scale=0.5, size=(N, 14))


@pytest.mark.slow
def test_cost_pt_gradient_fd(model, consistent_q):
    for tgt, qd0, u in _instances(model, consistent_q, 50, 6):
        ev = OcpEvaluator(problem(model, consistent_q, tgt, "PT", qd0=qd0))
        g = ev.cost(u).grad
        g_fd = fd_grad(lambda x: ev.cost(x).value, u)
        assert rel_err(g, g_fd) < 1e-5


@pytest.mark.slow
def test_cost_at_gradient_fd_frozen_weights(model, consistent_q):
    w = PROFILES["at_balanced"][1]
    for tgt, qd0, u in _instances(model, consistent_q, 50, 7):
        ev = OcpEvaluator(problem(model, consistent_q, tgt, "AT", w, qd0))
        stage = ev.stage_weights(u)
        frozen = StageWeights(stage.pos.copy(), stage.ori.copy())
        g = ev.cost(u, stage=frozen).grad
        g_fd = fd_grad(lambda x: ev.cost(x, stage=frozen).value, u)
        assert rel_err(g, g_fd) < 1e-5


def test_chain_vjp_matches_fd(model, consistent_q):
    rng = np.random.default_rng(8)
    tgt = shifted_target(model, consistent_q)
    ev = OcpEvaluator(problem(model, consistent_q, tgt, qd0=rng.normal(scale=0.2, size=14), N=5))
    for _ in range(5):
        u = rng.normal(size=(5, 14))
        y = rng.normal(size=(5, 7))
        g = ev.chain_vjp(u, y)
        g_fd = fd_grad(lambda x: float(np.sum(y * ev.chain_residuals(x))), u)
        assert rel_err(g, g_fd) < 1e-6


def test_bound_penalty_gradient_fd(model, consistent_q):
    rng = np.random.default_rng(9)
    tgt = shifted_target(model, consistent_q)
    ev = OcpEvaluator(problem(model, consistent_q, tgt, qd0=rng.normal(scale=1.5, size=14), N=5))
    u = rng.normal(scale=20.0, size=(5, 14))
    v, g = ev.bound_penalty(u)
    assert v > 0
    assert rel_err(g, fd_grad(lambda x: ev.bound_penalty(x)[0], u)) < 1e-6


def test_gauss_newton_is_symmetric_psd(model, consistent_q):
    rng = np.random.default_rng(10)
    tgt = shifted_target(model, consistent_q)
    ev = OcpEvaluator(problem(model, consistent_q, tgt, "AT", PROFILES["at_balanced"][1], N=6))
    u = rng.normal(size=(6, 14))
    H = ev.gauss_newton(u, 100.0 * ev.constraint_scale() ** 2, 1e3)
    assert np.allclose(H, H.T, atol=1e-9 * np.max(np.abs(H)))
    assert np.min(np.linalg.eigvalsh(H)) > 0


# -- constraints ----------------------------------------------------------------


def test_coasting_plan_feasible(model, consistent_q):
    rep = constraint_eval(problem(model, consistent_q, shifted_target(model, consistent_q)), np.zeros((N, 14)))
    for name in ("q_slack_lo", "q_slack_hi", "qd_slack_lo", "qd_slack_hi", "u_slack_lo", "u_slack_hi"):
        assert np.all(getattr(rep, name) >= 0)
    assert rep.max_chain <= 1e-9


def test_single_input_violation_flagged(model, consistent_q):
    u = np.zeros((N, 14))
    u[3, 5] = model.qdd_max[5] * 1.01
    viol = constraint_eval(problem(model, consistent_q, shifted_target(model, consistent_q)), u).violated()
    expected = np.zeros((N, 14), dtype=bool)
    expected[3, 5] = True
    assert np.array_equal(viol["u"], expected)


def test_constraints_match_rescan(model, consistent_q):
    rng = np.random.default_rng(11)
    p = problem(model, consistent_q, shifted_target(model, consistent_q), qd0=rng.normal(size=14))
    u = rng.normal(scale=8.0, size=(N, 14))
    rep = constraint_eval(p, u)
    q, qd = consistent_q.copy(), p.z0.qdot.copy()
    for k in range(N):
        q, qd = q + T_S * qd + 0.5 * T_S**2 * u[k], qd + T_S * u[k]
        assert np.allclose(rep.q_slack_lo[k], q - model.q_min, atol=1e-12)
        assert np.allclose(rep.q_slack_hi[k], model.q_max - q, atol=1e-12)
        assert np.allclose(rep.qd_slack_hi[k], model.qd_max - qd, atol=1e-12)
        assert np.allclose(rep.qd_slack_lo[k], qd + model.qd_max, atol=1e-12)
        assert np.allclose(rep.chain[k], chain_residual(model, q[:7], q[7:]), atol=1e-12)
    assert np.array_equal(rep.violated()["u"], np.abs(u) > model.qdd_max)


def test_weights_validation():
    with pytest.raises(ValueError):
        PlannerWeights(P_e_min=60.0)
    with pytest.raises(ValueError):
        PlannerWeights(eps_pos=0.0)
    with pytest.raises(ValueError):
        PlannerWeights(R=-1.0)
    w = PlannerWeights.from_dict(PlannerWeights().to_dict())
    assert w.to_dict() == PlannerWeights().to_dict()
