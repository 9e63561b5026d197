import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_quat
from dualcatch.geometry import (
    Pose,
    RigidTransform,
    UnitQuaternion,
    quat_angle_error,
    quat_compose,
    quat_cost_residual,
)

finite = st.floats(-10, 10, allow_nan=False)
quats = st.tuples(finite, finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3).map(
    UnitQuaternion.from_array
)


def rot(axis, deg):
    return UnitQuaternion.from_axis_angle(axis, np.deg2rad(deg))


def test_compose_identity():
    q = rot([1, 2, 3], 40)
    assert np.allclose(quat_compose(UnitQuaternion.identity(), q).as_array(), q.as_array(), atol=1e-15)


def test_compose_same_axis_adds_angles():
    r = quat_compose(rot([1, 0, 0], 90), rot([1, 0, 0], 90))
    assert quat_angle_error(r, rot([1, 0, 0], 180)) < 1e-7
    assert np.allclose(r.matrix(), np.diag([1.0, -1.0, -1.0]), atol=1e-12)


def test_compose_with_conjugate_is_identity():
    q = rot([0.3, -1, 2], 123)
    r = quat_compose(q, q.conjugate())
    assert np.allclose(r.as_array(), [1, 0, 0, 0], atol=1e-12)


def test_hamilton_convention_matches_matrices():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = random_quat(rng), random_quat(rng)
        assert np.allclose((a * b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_angle_error_examples():
    q = rot([1, 1, 0], 70)
    assert quat_angle_error(q, q) == pytest.approx(0.0, abs=1e-7)
    assert quat_angle_error(q, -q) == pytest.approx(0.0, abs=1e-7)
    assert quat_angle_error(UnitQuaternion.identity(), rot([0, 0, 1], 90)) == pytest.approx(np.pi / 2, abs=1e-12)


def test_residual_examples():
    q = rot([0, 1, 0], 33)
    assert np.allclose(quat_cost_residual(q, q), 0.0)
    assert np.allclose(quat_cost_residual(q, -q), 0.0)
    r = quat_cost_residual(UnitQuaternion.identity(), rot([0, 0, 1], 180))
    assert np.linalg.norm(r) == pytest.approx(np.sqrt(2.0), abs=1e-12)


@given(quats)
def test_unit_norm_after_construction(q):
    assert np.linalg.norm(q.as_array()) == pytest.approx(1.0, abs=1e-9)


@given(quats, quats)
def test_compose_stays_unit(a, b):
    assert np.linalg.norm(quat_compose(a, b).as_array()) == pytest.approx(1.0, abs=1e-9)


@given(quats)
def test_sign_invariance(q):
    assert quat_angle_error(q, q) < 1e-6
    assert quat_angle_error(q, -q) < 1e-6
    assert np.allclose(quat_cost_residual(q, -q), 0.0, atol=1e-12)


@given(quats, quats)
def test_angle_error_symmetric_and_bounded(a, b):
    e = quat_angle_error(a, b)
    assert e == pytest.approx(quat_angle_error(b, a), abs=1e-12)
    assert 0.0 <= e <= np.pi + 1e-12


@given(quats, quats)
def test_residual_zero_iff_same_rotation(a, b):
    # ||a - s b||^2 = 2 - 2|<a,b>| = 4 sin^2(e/4), so both vanish together
    r = np.linalg.norm(quat_cost_residual(a, b))
    e = quat_angle_error(a, b)
    assert r == pytest.approx(2.0 * np.sin(e / 4.0), abs=1e-7)
    assert np.linalg.norm(quat_cost_residual(a, a)) == 0.0


def test_triangle_inequality_1000_triples():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b, c = random_quat(rng), random_quat(rng), random_quat(rng)
        assert quat_angle_error(a, c) <= quat_angle_error(a, b) + quat_angle_error(b, c) + 1e-12


def test_angle_error_matches_rotation_matrix_angle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, b = random_quat(rng), random_quat(rng)
        R = a.matrix().T @ b.matrix()
        ang = np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))
        assert quat_angle_error(a, b) == pytest.approx(ang, abs=1e-6)


def rand_transform(rng):
    return RigidTransform(random_quat(rng), rng.normal(size=3))


def test_transform_associative_and_inverse():
    rng = np.random.default_rng(3)
    for _ in range(50):
        A, B, C = rand_transform(rng), rand_transform(rng), rand_transform(rng)
        assert np.allclose((A @ B @ C).matrix(), (A @ (B @ C)).matrix(), atol=1e-12)
        assert np.allclose((A @ A.inverse()).matrix(), np.eye(4), atol=1e-9)
        assert np.allclose((A @ B).matrix(), A.matrix() @ B.matrix(), atol=1e-12)
        p = rng.normal(size=3)
        assert np.allclose(A.apply(p), (A.matrix() @ np.append(p, 1.0))[:3], atol=1e-12)


def test_from_matrix_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(200):
        q = random_quat(rng)
        assert quat_angle_error(UnitQuaternion.from_matrix(q.matrix()), q) < 1e-7


def test_serialization_w_first():
    q = rot([0, 0, 1], 90)
    d = Pose([1, 2, 3], q).to_dict()
    assert d["orientation"][0] == pytest.approx(np.cos(np.pi / 4))
    back = Pose.from_dict(d)
    assert np.allclose(back.orientation.as_array(), q.as_array())
    assert np.allclose(back.position, [1, 2, 3])


def test_zero_quaternion_rejected():
    with pytest.raises(ValueError):
        UnitQuaternion(0.0, 0.0, 0.0, 0.0)
