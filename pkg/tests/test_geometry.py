import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import cdist

from conceptkit.assembly import OutOfRangeParam, instantiate_structure
from conceptkit.concepts import builtin_registry
from conceptkit.geometry import (GeometryError, PointCloud, Primitive, PrimitiveAssembly, RigidTransform,
                                 apply, chamfer, closest_surface_points, compose, downsample, invert,
                                 nearest, pose_error, primitive_residual, random_transform,
                                 rotation_about, sample_surface, surface_residual)

seeds = st.integers(0, 2**32 - 1)


def _T(seed, scale=1.0):
    return random_transform(np.random.default_rng(seed), scale)


def _cloud(seed, n=40):
    return PointCloud(np.random.default_rng(seed).normal(size=(n, 3)))


@given(seeds)
def test_compose_with_inverse_is_identity(seed):
    T = _T(seed)
    for M in (compose(T, invert(T)), compose(invert(T), T)):
        assert np.abs(M.as_matrix() - np.eye(4)).max() < 1e-9


@given(seeds)
def test_double_inverse(seed):
    T = _T(seed)
    TT = invert(invert(T))
    assert np.abs(TT.R - T.R).max() < 1e-12
    assert np.abs(TT.t - T.t).max() < 1e-12


@given(seeds, seeds)
def test_compose_associates_with_apply(s1, s2):
    T1, T2 = _T(s1), _T(s2)
    P = _cloud(s1 ^ s2)
    a = apply(compose(T1, T2), P).points
    b = apply(T1, apply(T2, P)).points
    assert np.abs(a - b).max() < 1e-12


@given(seeds)
def test_apply_preserves_distances(seed):
    T = _T(seed, 5.0)
    P = _cloud(seed)
    D0 = cdist(P.points, P.points)
    D1 = cdist(*(apply(T, P).points,) * 2)
    assert np.abs(D0 - D1).max() < 1e-9


def test_identity_apply():
    P = _cloud(3)
    assert np.array_equal(apply(RigidTransform(), P).points, P.points)


@given(seeds)
def test_random_transform_is_valid(seed):
    T = _T(seed)
    assert T.is_valid()
    assert np.linalg.det(T.R) > 0


def test_rotation_about_quarter_turn():
    R = rotation_about([0, 0, 2], np.pi / 2)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_pose_error_of_known_offset():
    T = RigidTransform(rotation_about([1, 0, 0], 0.3), [0.1, 0, 0])
    dt, dr = pose_error(T, RigidTransform())
    assert dt == pytest.approx(0.1)
    assert dr == pytest.approx(0.3)


def test_json_round_trip():
    T = _T(11)
    assert RigidTransform.from_json(T.to_json()) == T


def test_empty_and_nonfinite_clouds_rejected():
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(GeometryError):
        PointCloud([[0.0, np.nan, 0.0]])


def test_bad_primitive():
    with pytest.raises(GeometryError):
        Primitive("Cone", [1, 2], RigidTransform())
    with pytest.raises(GeometryError):
        Primitive("Cuboid", [1, 2], RigidTransform())
    with pytest.raises(GeometryError):
        PrimitiveAssembly((Primitive("Sphere", [-1.0], RigidTransform()),))


# -- sampling -------------------------------------------------------------

def _asm(kind, size, T=None):
    return PrimitiveAssembly((Primitive(kind, size, T or RigidTransform()),))


def test_unit_sphere_samples_on_surface():
    P = sample_surface(_asm("Sphere", [1.0]), 10000, seed=0)
    assert len(P) == 10000
    assert np.abs(np.linalg.norm(P.points, axis=1) - 1.0).max() < 1e-9


@pytest.mark.parametrize("kind,size", [("Cuboid", [0.1, 0.3, 0.05]), ("Cylinder", [0.04, 0.2]),
                                       ("Sphere", [0.07])])
def test_samples_satisfy_implicit_surface(kind, size):
    T = _T(5, 0.3)
    asm = _asm(kind, size, T)
    P = sample_surface(asm, 3000, seed=1)
    assert primitive_residual(asm.primitives[0], P.points).max() < 1e-9
    assert np.allclose(np.linalg.norm(P.normals, axis=1), 1.0)


def test_cuboid_face_rates_follow_areas():
    a, b, c = 0.3, 0.2, 0.05
    n = 60000
    P = sample_surface(_asm("Cuboid", [a, b, c]), n, seed=2)
    h = np.array([a, b, c]) / 2
    face_area = {0: b * c, 1: a * c, 2: a * b}
    total = 2 * sum(face_area.values())
    for axis in range(3):
        for sgn in (1, -1):
            hits = np.sum(np.isclose(P.points[:, axis], sgn * h[axis]))
            p = face_area[axis] / total
            sigma = np.sqrt(n * p * (1 - p))
            assert abs(hits - n * p) < 3 * sigma


def test_cylinder_samples_include_caps():
    P = sample_surface(_asm("Cylinder", [0.05, 0.1]), 5000, seed=4)
    top = np.isclose(P.points[:, 2], 0.05)
    assert top.sum() > 0 and np.isclose(P.points[:, 2], -0.05).sum() > 0


def test_sampling_deterministic():
    asm = _asm("Cylinder", [0.05, 0.1])
    assert np.array_equal(sample_surface(asm, 500, 9).points, sample_surface(asm, 500, 9).points)
    assert not np.array_equal(sample_surface(asm, 500, 9).points, sample_surface(asm, 500, 10).points)


def test_sampling_convergence():
    asm = instantiate_structure(builtin_registry()["L_Handle"])
    A = sample_surface(asm, 50000, seed=0)
    B = sample_surface(asm, 50000, seed=1)
    assert chamfer(A, B) < 0.02 * asm.bbox_diagonal()


# -- chamfer and nearest neighbors --------------------------------------------

def test_chamfer_examples():
    P = _cloud(0)
    assert chamfer(P, P) == 0.0
    assert chamfer([[0, 0, 0]], [[0, 0, 1]]) == pytest.approx(2.0)


@given(seeds)
@settings(max_examples=50)
def test_chamfer_symmetric_and_rigid_invariant(seed):
    P, Q = _cloud(seed, 30), _cloud(seed + 1, 45)
    assert chamfer(P, Q) == chamfer(Q, P)
    T = _T(seed)
    assert abs(chamfer(apply(T, P), apply(T, Q)) - chamfer(P, Q)) < 1e-7


def test_chamfer_rejects_empty():
    with pytest.raises(GeometryError):
        chamfer(np.zeros((0, 3)), [[0, 0, 0]])


@pytest.mark.parametrize("n", [1, 17, 2000])
def test_nearest_matches_brute_force(n):
    rng = np.random.default_rng(n)
    data, query = rng.random((n, 3)), rng.random((300, 3))
    d, idx = nearest(data, query)
    D = cdist(query, data)
    assert np.allclose(d, D.min(1))
    assert np.allclose(D[np.arange(len(query)), idx], D.min(1))


def test_closest_points_lie_on_surface():
    asm = instantiate_structure(builtin_registry()["U_Handle"])
    q = np.random.default_rng(0).normal(scale=0.1, size=(500, 3))
    c, d = closest_surface_points(asm, q)
    assert surface_residual(asm, c).max() < 1e-9
    assert np.allclose(np.linalg.norm(c - q, axis=1), d)
    # no sampled surface point is closer than the reported distance
    S = sample_surface(asm, 20000, 0).points
    assert np.all(cdist(q, S).min(1) >= d - 1e-9)


def test_downsample_modes():
    P = _cloud(1, 300)
    for method in ("farthest", "uniform"):
        D = downsample(P, 50, method)
        assert len(D) == 50
    assert downsample(P, 500) is P
    with pytest.raises(ValueError):
        downsample(P, 10, "voxel")


def test_farthest_point_is_pose_independent():
    P = _cloud(2, 200)
    T = _T(2)
    a = downsample(P, 40).points
    b = downsample(apply(T, P), 40).points
    assert np.allclose(T.apply_points(a), b)


# -- templates ----------------------------------------------------------------

def test_l_handle_defaults_form_right_angle():
    asm = instantiate_structure(builtin_registry()["L_Handle"])
    assert [p.kind for p in asm.primitives] == ["Cuboid", "Cuboid"]
    a, b = asm.primitives
    # long axes of the two bars are perpendicular
    la = a.pose.R[:, int(np.argmax(a.size))]
    lb = b.pose.R[:, int(np.argmax(b.size))]
    assert abs(la @ lb) < 1e-12


def test_sphere_cap_radius():
    c = builtin_registry()["Sphere_Cap"]
    r = [p.name for p in c.structure.params if p.name == "radius"]
    assert r
    asm = instantiate_structure(c, {"radius": 0.05})
    assert asm.primitives[0].kind == "Sphere"
    assert asm.primitives[0].size.tolist() == [0.05]


def test_out_of_range_param():
    with pytest.raises(OutOfRangeParam):
        instantiate_structure(builtin_registry()["Sphere_Cap"], {"radius": 10.0})
