import numpy as np
import pytest

from fingersplit import splitter
from fingersplit.collision import col_detect
from fingersplit.kinematics import fingertip_normals, fingertip_positions
from fingersplit.splitter import (
    InfeasibleGraspError,
    ParallelGrasp,
    SeedingError,
    SplitterParams,
    grasp_frame,
    make_proxy,
    map_parallel_grasp,
    max_span,
    run_split,
    seed_antipodal,
)
from fingersplit.surface import SurfaceModel


def test_max_span_fits_default_fixtures(hand, span):
    assert 0.08 < span < 0.15
    assert max_span(hand, samples=7) <= span + 1e-9


def test_parallel_grasp_validation():
    g = ParallelGrasp([0, 0, 0], [1, 0, 0], [0, 0, 2])
    assert np.allclose(g.v_ap, [0, 0, 1])
    with pytest.raises(ValueError):
        ParallelGrasp([0, 0, 0], [0, 0, 0], [0, 0, 1])
    with pytest.raises(ValueError):
        ParallelGrasp([0, 0, 0], [1, 0, 0], [0, 0, 0])
    with pytest.raises(InfeasibleGraspError):
        grasp_frame(ParallelGrasp([0, 0, 0], [1, 0, 0], [1, 0, 0]))


def test_grasp_frame_is_right_handed():
    R = grasp_frame(ParallelGrasp([0, 0, 0], [0.05, 0.01, 0], [0, 0.3, 1]))
    assert np.allclose(R.T @ R, np.eye(3))
    assert np.isclose(np.linalg.det(R), 1)


def test_map_closes_fingers_on_sphere(hand, span, small_sphere):
    g = ParallelGrasp([-0.04, 0, 0], [0.04, 0, 0], [0, 0, -1])
    state = map_parallel_grasp(g, small_sphere, hand, span=span)
    tips = fingertip_positions(hand, state.palm_in_object, state.q)
    assert np.linalg.norm(tips - state.contact_positions, axis=1).max() <= 0.01
    assert not col_detect(hand, state.palm_in_object, state.q, make_proxy(small_sphere))
    # palm z follows the approach vector, pads face the surface
    assert np.allclose(state.palm.rotation[:, 2], [0, 0, -1])
    nf = fingertip_normals(hand, state.palm_in_object, state.q)
    assert np.all(np.einsum("ij,ij->i", nf, state.contact_normals) < -0.5)
    # thumb on c2, the split pair on c1
    assert state.contact_positions[2, 0] > 0 and np.all(state.contact_positions[:2, 0] < 0)


def test_map_from_opposite_side(hand, span, small_sphere):
    g = ParallelGrasp([-0.04, 0, 0], [0.04, 0, 0], [0, 0, 1])
    state = map_parallel_grasp(g, small_sphere, hand, span=span)
    assert np.allclose(state.palm.rotation[:, 2], [0, 0, 1])
    assert state.palm.translation[2] < 0


def test_map_rejects_grasp_wider_than_span(hand, span, small_sphere):
    g = ParallelGrasp([-span, 0, 0], [span, 0, 0], [0, 0, 1])
    with pytest.raises(InfeasibleGraspError):
        map_parallel_grasp(g, small_sphere, hand, span=span)


def brute_force_seed(surface, n_samples, mu, seed, span):
    rng = np.random.default_rng(seed)
    V, N = surface.vertices, surface.vertex_normals
    seeds = rng.choice(len(V), size=min(n_samples, len(V)), replace=False)
    cone = np.cos(np.arctan(mu))
    best = 0.0
    for i in seeds:
        for j in range(len(V)):
            if j == i:
                continue
            u = V[j] - V[i]
            d = np.linalg.norm(u)
            u /= d
            if d <= span and -(u @ N[i]) >= cone and u @ N[j] >= cone:
                best = max(best, d)
    return best


def test_seed_antipodal_matches_brute_force():
    from fingersplit import meshes

    surf = meshes.box(divisions=4)
    g = seed_antipodal(surf, n_samples=20, seed=3, span=0.09)
    assert np.isclose(np.linalg.norm(g.c2 - g.c1), brute_force_seed(surf, 20, 0.5, 3, 0.09))
    assert abs(g.v_ap @ (g.c2 - g.c1)) < 1e-9


def test_seed_antipodal_is_deterministic(small_sphere, span):
    a = seed_antipodal(small_sphere, seed=7, span=span)
    b = seed_antipodal(small_sphere, seed=7, span=span)
    assert np.array_equal(a.c1, b.c1) and np.array_equal(a.v_ap, b.v_ap)


def test_seed_antipodal_fails_on_open_sheet():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    sheet = SurfaceModel.from_arrays(v, [[0, 1, 2], [1, 3, 2]])
    with pytest.raises(SeedingError):
        seed_antipodal(sheet)
    with pytest.raises(ValueError):
        seed_antipodal(sheet, n_samples=0)


@pytest.fixture(scope="module")
def sphere_plan(hand, span, small_sphere):
    g = seed_antipodal(small_sphere, span=span)
    return run_split(g, small_sphere, hand, SplitterParams(), span=span)


def test_run_split_terminates_and_improves(sphere_plan):
    res = sphere_plan
    assert res.reason == "converged"
    assert res.cpo_iterations[-1] < 2 and res.ppo_iterations[-1] < 2
    assert len(res.cpo_iterations) == len(res.ppo_iterations) == res.outer_iterations
    assert np.all(np.diff(res.accepted_q) >= -1e-12)
    assert res.metrics_after.q_total >= res.metrics_before.q_total
    assert res.error is None
    assert res.timing["total_ms"] >= res.timing["cpo_ms"]


def test_trace_rows_tagged_by_outer_iteration(sphere_plan):
    outers = [r.outer for r in sphere_plan.trace]
    assert outers == sorted(outers) and outers[0] == 1
    assert {r.phase for r in sphere_plan.trace} <= {"CPO", "PPO"}


def test_run_split_max_outer(hand, span, small_sphere):
    g = seed_antipodal(small_sphere, span=span)
    res = run_split(g, small_sphere, hand, SplitterParams(max_outer=1, m=1), span=span)
    assert res.outer_iterations == 1 and res.reason == "max_outer"


def test_run_split_reports_phase_error(hand, span, small_sphere, monkeypatch):
    def broken(*args, **kwargs):
        raise FloatingPointError("boom")

    monkeypatch.setattr(splitter, "run_ppo", broken)
    g = seed_antipodal(small_sphere, span=span)
    res = run_split(g, small_sphere, hand, SplitterParams(), span=span)
    assert res.reason == "error" and "boom" in res.error
    # the last valid state is still reported
    assert res.metrics_after.q_total >= res.metrics_before.q_total


def test_splitter_params_validation():
    with pytest.raises(ValueError):
        SplitterParams(m=0)
    with pytest.raises(ValueError):
        SplitterParams(max_outer=0)
