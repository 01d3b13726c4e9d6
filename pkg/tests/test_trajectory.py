import math

import numpy as np
import pytest

from linbilliards.arrangement import Arrangement, Itinerary, Subspace
from linbilliards.errors import InputError
from linbilliards.trajectory import (
    BilliardTrajectory,
    OrientedLine,
    boundary_lines,
    is_generic,
    is_transverse,
    max_reflection_residual,
    reflection_residual,
    trajectory_from_json,
    trajectory_to_json,
    validate_trajectory,
)


def mirror_traj():
    arr = Arrangement(2, (Subspace.from_spanning("L1", [[1.0, 0.0]], 2),))
    traj = BilliardTrajectory(np.array([0.0, 1.0]), np.array([2.0, 1.0]),
                              np.array([[1.0, 0.0]]), Itinerary((0,)))
    return arr, traj


def test_mirror_momentum_residual():
    arr, traj = mirror_traj()
    energy, momentum = reflection_residual(arr, traj, 1)
    assert energy < 1e-15
    assert momentum < 1e-15
    # both tangential components equal 1/sqrt(2)
    assert traj.edge_velocities[0][0] == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_zaxis_residual():
    arr = Arrangement(3, (Subspace.from_spanning("Lz", [[0.0, 0.0, 1.0]], 3),))
    traj = BilliardTrajectory(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                              np.array([[0.0, 0.0, 0.0]]), Itinerary((0,)))
    _, momentum = reflection_residual(arr, traj, 1)
    assert momentum < 1e-15


def test_corrupted_vertex_breaks_law():
    arr, _ = mirror_traj()
    traj = BilliardTrajectory(np.array([0.0, 1.0]), np.array([2.0, 1.0]),
                              np.array([[1.3, 0.0]]), Itinerary((0,)))
    _, momentum = reflection_residual(arr, traj, 1)
    assert momentum > 1e-2
    assert any("momentum" in p for p in validate_trajectory(arr, traj))


def test_residual_index_range():
    arr, traj = mirror_traj()
    with pytest.raises(InputError):
        reflection_residual(arr, traj, 0)
    with pytest.raises(InputError):
        reflection_residual(arr, traj, 2)


def test_transverse_mirror():
    _, traj = mirror_traj()
    assert is_transverse(traj)


def test_internal_vertex_not_transverse():
    # straight pass through the origin of a codim-2 subspace
    traj = BilliardTrajectory(np.array([-1.0, 0.0]), np.array([1.0, 0.0]),
                              np.array([[0.0, 0.0]]), Itinerary((0,)))
    assert not is_transverse(traj)


def test_three_body_style_transverse():
    traj = BilliardTrajectory(np.array([-2.0, 0.0]), np.array([2.0, 1.5]),
                              np.array([[0.0, 0.0]]), Itinerary((0,)))
    assert is_transverse(traj)


def test_generic_mirror():
    arr, traj = mirror_traj()
    assert is_generic(arr, traj.A, traj.chain, traj.B, traj.itinerary)


def test_generic_rejects_adjacent_membership(twolines_arr):
    # q1 = 0 lies on L2 as well
    chain = np.array([[0.0, 0.0], [0.5, 0.5 * math.sqrt(3)]])
    ok = is_generic(twolines_arr, np.array([-1.0, 2.0]), chain,
                    np.array([2.0, 3.0]), Itinerary((0, 1)))
    assert not ok


def test_generic_detects_ray_recross(twolines_arr):
    # outgoing ray from q1 through B crosses the second line, even beyond B
    arr = twolines_arr
    A = np.array([-3.0, 1.0])
    B = np.array([1.0, 2.0])
    chain = np.array([[-5.0 / 3.0, 0.0]])
    assert not is_generic(arr, A, chain, B, Itinerary((0,)))
    # an outgoing direction into the lower-left quadrant misses the second line
    B_clear = chain[0] + np.array([-1.0, -0.1])
    assert is_generic(arr, A, chain, B_clear, Itinerary((0,)))


def test_generic_rejects_anchor_on_locus(mirror_arr):
    chain = np.array([[1.0, 0.0]])
    assert not is_generic(mirror_arr, np.array([0.0, 0.0]), chain,
                          np.array([2.0, 1.0]), Itinerary((0,)))


def test_boundary_lines_total_collision():
    traj = BilliardTrajectory(np.array([3.0, 0.0]), np.array([0.0, 4.0]),
                              np.array([[0.0, 0.0]]), Itinerary((0,)))
    lm, lp = boundary_lines(traj)
    assert np.allclose(lm.v, [-1.0, 0.0], atol=1e-15)
    assert np.allclose(lm.Q, [0.0, 0.0], atol=1e-12)
    assert np.allclose(lp.v, [0.0, 1.0], atol=1e-15)
    assert np.allclose(lp.Q, [0.0, 0.0], atol=1e-12)


def test_boundary_lines_mirror():
    _, traj = mirror_traj()
    lm, _ = boundary_lines(traj)
    v = np.array([1.0, -1.0]) / math.sqrt(2)
    assert np.allclose(lm.v, v, atol=1e-15)
    A = np.array([0.0, 1.0])
    assert np.allclose(lm.Q, A - np.dot(A, v) * v, atol=1e-14)


def test_boundary_lines_representative_invariance():
    _, traj = mirror_traj()
    lm, lp = boundary_lines(traj)
    v_in = traj.edge_velocities[0]
    for s in (0.1, 0.5, 1.2):
        shifted = BilliardTrajectory(traj.A + s * v_in, traj.B,
                                     traj.chain, traj.itinerary)
        lm2, lp2 = boundary_lines(shifted)
        assert lm2.close_to(lm, tol=1e-12)
        assert lp2.close_to(lp, tol=1e-12)


def test_oriented_line_invariants():
    with pytest.raises(InputError):
        OrientedLine(np.array([2.0, 0.0]), np.array([0.0, 1.0]))
    with pytest.raises(InputError):
        OrientedLine(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    line = OrientedLine.through(np.array([5.0, 1.0]), np.array([1.0, 0.0]))
    assert np.allclose(line.Q, [0.0, 1.0], atol=1e-14)


def test_coincident_points_rejected():
    with pytest.raises(InputError):
        BilliardTrajectory(np.array([0.0, 1.0]), np.array([2.0, 1.0]),
                           np.array([[0.0, 1.0]]), Itinerary((0,)))


def test_edge_unit_norm():
    _, traj = mirror_traj()
    norms = np.linalg.norm(traj.edge_velocities, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-15


def test_json_round_trip(mirror_arr):
    _, traj = mirror_traj()
    text = trajectory_to_json(traj, mirror_arr)
    back = trajectory_from_json(text, mirror_arr)
    assert np.allclose(back.A, traj.A)
    assert np.allclose(back.chain, traj.chain)
    assert back.itinerary.indices == traj.itinerary.indices
    assert back.length == pytest.approx(traj.length, abs=1e-15)
    assert not validate_trajectory(mirror_arr, back)


def test_max_residual_on_free_motion(mirror_arr):
    traj = BilliardTrajectory(np.array([0.0, 1.0]), np.array([2.0, 3.0]),
                              np.zeros((0, 2)), None)
    assert max_reflection_residual(mirror_arr, traj) == 0.0
