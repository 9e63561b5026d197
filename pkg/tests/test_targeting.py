import numpy as np
import pytest

from dualcatch.ballistics import BallEstimate, PredictedTrajectory, TrajectorySample, propagate
from dualcatch.geometry import Pose, UnitQuaternion
from dualcatch.targeting import SafeZone, filter_safe, impact_orientation, select_target

ZONE = SafeZone([0.35, -0.2, 0.3], [0.7, 0.2, 0.6])


def sample(t, p, v=(0.0, 0.0, -1.0)):
    return TrajectorySample(float(t), np.asarray(p, dtype=float), np.asarray(v, dtype=float))


def brute_force(cands, p_now, t_now):
    """Exhaustive argmin of required average speed; earlier time wins exact ties."""
    best = None
    for c in cands:
        s = np.linalg.norm(c.p - p_now) / (c.t - t_now)
        if best is None or s < best[0] or (s == best[0] and c.t < best[1].t):
            best = (s, c)
    return best[1]


def test_filter_outside_and_inside():
    out = [sample(k * 0.1, [2.0, 0, 0.4]) for k in range(5)]
    inside = [sample(k * 0.1, [0.5, 0.0, 0.45]) for k in range(5)]
    assert filter_safe(out, ZONE) == []
    assert filter_safe(inside, ZONE) == inside


def test_filter_parabola_matches_containment_scan():
    p0, aim, t_aim = np.array([2.5, 0.3, 1.0]), np.array([0.55, 0.05, 0.45]), 0.9
    v0 = (aim - p0 + 0.5 * np.array([0, 0, 9.81]) * t_aim**2) / t_aim
    est = BallEstimate(p0, v0)
    traj = propagate(est, 1.6, 0.02)
    got = filter_safe(traj, ZONE)
    expected = [s for s in traj.samples if np.all(s.p >= ZONE.min_corner) and np.all(s.p <= ZONE.max_corner)]
    assert 0 < len(got) < len(traj)
    assert [s.t for s in got] == [s.t for s in expected]
    assert filter_safe(got, ZONE) == got


def test_filter_closed_box_boundary():
    on_face = sample(0.1, [0.7, 0.2, 0.6])
    assert filter_safe([on_face], ZONE) == [on_face]


def test_filter_idempotent_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pts = rng.uniform(0.2, 0.8, (30, 3))
        traj = PredictedTrajectory(np.arange(30) * 0.04, pts, np.zeros((30, 3)))
        once = filter_safe(traj, ZONE)
        assert filter_safe(once, ZONE) == once


def test_select_single_candidate():
    c = sample(0.5, [0.5, 0, 0.4])
    tp = select_target([c], Pose([0.5, 0, 0.5]), 0.0)
    assert tp.t_catch == 0.5
    assert np.array_equal(tp.pose.position, c.p)
    assert select_target([], Pose([0.5, 0, 0.5]), 0.0) is None


def test_select_same_distance_later_wins():
    now = Pose([0.5, 0.0, 0.5])
    a = sample(0.3, [0.6, 0.0, 0.5])
    b = sample(0.6, [0.4, 0.0, 0.5])
    assert select_target([a, b], now, 0.0).t_catch == 0.6


def test_select_exact_tie_goes_to_earlier():
    now = Pose([0.0, 0.0, 0.0])
    a = sample(1.0, [0.5, 0.0, 0.0])
    b = sample(2.0, [1.0, 0.0, 0.0])  # same average speed 0.5 m/s
    assert select_target([b, a], now, 0.0).t_catch == 1.0


def _random_candidates(rng, n, with_ties):
    t = np.sort(rng.choice(np.arange(1, 400), size=n, replace=False)) / 64.0
    p = rng.integers(-64, 64, size=(n, 3)) / 64.0
    cands = [sample(ti, pi) for ti, pi in zip(t, p)]
    if with_ties and n > 1:
        # duplicate the speed of one candidate at double the time (exact in binary)
        j = rng.integers(n)
        cands.append(sample(2 * cands[j].t, 2 * cands[j].p))
        cands.sort(key=lambda c: c.t)
    return cands


def test_select_matches_brute_force_1000_sets():
    rng = np.random.default_rng(1)
    for trial in range(1000):
        cands = _random_candidates(rng, int(rng.integers(1, 100)), trial % 3 == 0)
        got = select_target(cands, Pose([0.0, 0.0, 0.0]), 0.0)
        ref = brute_force(cands, np.zeros(3), 0.0)
        assert got.t_catch == ref.t and np.array_equal(got.pose.position, ref.p)
        speeds = [np.linalg.norm(c.p) / c.t for c in cands]
        assert np.linalg.norm(got.pose.position) / got.t_catch <= min(speeds)


def test_select_permutation_invariant():
    rng = np.random.default_rng(2)
    for _ in range(100):
        cands = _random_candidates(rng, 30, True)
        base = select_target(cands, Pose([0.1, 0.0, 0.2]), 0.0)
        shuffled = [cands[i] for i in rng.permutation(len(cands))]
        other = select_target(shuffled, Pose([0.1, 0.0, 0.2]), 0.0)
        assert base.t_catch == other.t_catch and np.array_equal(base.pose.position, other.pose.position)


def test_select_ignores_past_candidates():
    tp = select_target([sample(0.1, [0.5, 0, 0.5]), sample(0.4, [0.9, 0, 0.5])], Pose([0.5, 0, 0.5]), 0.2)
    assert tp.t_catch == 0.4


def test_vertical_drop_default_yaw():
    q = impact_orientation([0, 0, -5])
    assert np.allclose(q.matrix(), np.eye(3), atol=1e-12)


def test_oblique_impact_faces_ball():
    R = impact_orientation([-3, 0, -3]).matrix()
    assert np.allclose(R[:, 0], [1, 0, 0], atol=1e-12)
    assert np.allclose(R[:, 2], [0, 0, 1], atol=1e-12)
    R = impact_orientation([0, 2, -1]).matrix()
    assert np.allclose(R[:, 0], [0, -1, 0], atol=1e-12)


def test_orientation_property_1000_random():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        v = rng.normal(scale=3.0, size=3)
        if np.linalg.norm(v) <= 0.1:
            continue
        q = impact_orientation(v)
        assert np.linalg.norm(q.as_array()) == pytest.approx(1.0, abs=1e-9)
        R = q.matrix()
        assert np.allclose(R[:, 2], [0, 0, 1], atol=1e-9)
        h = -v[:2] / np.linalg.norm(v[:2])
        assert np.allclose(R[:2, 0], h, atol=1e-9)


def test_slow_impact_rejected_and_orientation_kept():
    with pytest.raises(ValueError):
        impact_orientation([0.01, 0, 0])
    prev = UnitQuaternion.from_axis_angle([0, 0, 1], 0.4)
    c = TrajectorySample(0.5, np.array([0.5, 0, 0.4]), np.array([0.0, 0.0, 0.01]))
    tp = select_target([c], Pose([0.5, 0, 0.5]), 0.0, orientation=prev)
    assert np.allclose(tp.pose.orientation.as_array(), prev.as_array())


def test_safe_zone_validation():
    with pytest.raises(ValueError):
        SafeZone([0, 0, 0], [1, 0, 1])
