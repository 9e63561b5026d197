"""Regenerate src/dualcatch/data/default_model.json.

The arm rows follow the publicly documented Panda-style modified-DH layout but
are shipped as a TEST FIXTURE only; they are not verified hardware values.
"""

import json
from pathlib import Path

import numpy as np

from dualcatch.geometry import RigidTransform, UnitQuaternion

ROWS = [
    {"alpha": 0.0, "a": 0.0, "d": 0.333},
    {"alpha": -np.pi / 2, "a": 0.0, "d": 0.0},
    {"alpha": np.pi / 2, "a": 0.0, "d": 0.316},
    {"alpha": np.pi / 2, "a": 0.0825, "d": 0.0},
    {"alpha": -np.pi / 2, "a": -0.0825, "d": 0.384},
    {"alpha": np.pi / 2, "a": 0.0, "d": 0.0},
    {"alpha": np.pi / 2, "a": 0.088, "d": 0.0},
]
Q_MIN = [-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973]
Q_MAX = [2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973]
QD_MAX = [2.175, 2.175, 2.175, 2.175, 2.61, 2.61, 2.61]
QDD_MAX = [15.0, 7.5, 10.0, 12.5, 15.0, 20.0, 20.0]

BASE_Y = 0.45
HOME_CATCHER = [0.5, 0.0, 0.45]
GRASP_LEVER = 0.25  # end-effector origin to catcher origin, m


def grasp(side: str) -> RigidTransform:
    sgn = 1.0 if side == "left" else -1.0
    # end-effector axes expressed in the catcher frame
    x_e = np.array([0.0, 0.0, -1.0])
    z_e = np.array([0.0, -sgn, 0.0])
    y_e = np.cross(z_e, x_e)
    R_oe = np.column_stack([x_e, y_e, z_e])
    p_oe = np.array([0.0, sgn * GRASP_LEVER, 0.0])
    T_oe = RigidTransform(UnitQuaternion.from_matrix(R_oe), p_oe)
    return T_oe.inverse()


def arm(side: str) -> dict:
    sgn = 1.0 if side == "left" else -1.0
    g = grasp(side)
    return {
        "base_transform": {"rotation": [1.0, 0.0, 0.0, 0.0], "translation": [0.0, sgn * BASE_Y, 0.0]},
        "rows": [dict(r, theta=0.0, joint="revolute") for r in ROWS],
        "grasp_transform": {"rotation": g.rotation.to_list(), "translation": [round(v, 15) for v in g.translation.tolist()]},
        "q_min": Q_MIN,
        "q_max": Q_MAX,
        "qd_max": QD_MAX,
        "qdd_max": QDD_MAX,
    }


def home_configuration(model_dict: dict) -> list[float]:
    """Chain-consistent configuration with the largest joint-limit margin."""
    from dualcatch.geometry import Pose
    from dualcatch.kinematics import SystemModel, consistent_configuration

    m = SystemModel.from_dict(model_dict)
    rng = np.random.default_rng(7)
    best, best_margin = None, -np.inf
    for _ in range(300):
        q = consistent_configuration(m, Pose(HOME_CATCHER), rng.uniform(m.q_min, m.q_max), margin=0.3)
        if q is None:
            continue
        margin = min(np.min(q - m.q_min), np.min(m.q_max - q))
        if margin > best_margin:
            best, best_margin = q, margin
    return best.tolist()


def main():
    model = {
        "name": "dual-panda-like-test-fixture",
        "note": "Test fixture. Numeric parameters are NOT verified hardware values.",
        "convention": "mdh",
        "arms": {"left": arm("left"), "right": arm("right")},
        "d_nom": 2 * GRASP_LEVER,
    }
    model["home"] = {"catcher_position": HOME_CATCHER, "q": home_configuration(model)}
    out = Path(__file__).resolve().parents[1] / "src" / "dualcatch" / "data" / "default_model.json"
    out.write_text(json.dumps(model, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
