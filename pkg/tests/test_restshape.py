import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clothmpm.geometry import DegenerateFaceError, material_frames
from clothmpm.restshape import RestShapeParam, apply_rest_alpha, build_rest_state, decompose_edge
from clothmpm.scenes import cloth_patch

G = (0.0, 0.0, -1.0)
comp = st.floats(-10, 10, allow_nan=False)


def test_decompose_examples():
    for e, eg, ep in [((0, 0, -2), (0, 0, -2), (0, 0, 0)), ((1, 0, 0), (0, 0, 0), (1, 0, 0)),
                      ((1, 0, -2), (0, 0, -2), (1, 0, 0))]:
        a, b = decompose_edge(np.array(e, float), G)
        np.testing.assert_array_equal(a, eg)
        np.testing.assert_array_equal(b, ep)


def test_alpha_examples():
    e = np.array([1.0, 0, -2])
    np.testing.assert_array_equal(apply_rest_alpha(e, 1.0, G), e)
    np.testing.assert_array_equal(apply_rest_alpha(e, 0.0, G), [1, 0, 0])
    np.testing.assert_array_equal(apply_rest_alpha(e, 0.5, G), [1, 0, -1])
    with pytest.raises(ValueError):
        apply_rest_alpha(e, 1.5, G)


@given(comp, comp, comp, comp, comp, comp)
def test_exact_decomposition_and_monotonicity(x, y, z, gx, gy, gz):
    g = np.array([gx, gy, gz])
    if np.linalg.norm(g) < 1e-3:
        return
    g = g / np.linalg.norm(g)
    e = np.array([x, y, z])
    eg, ep = decompose_edge(e, g)
    assert np.array_equal(eg + ep, e) or np.allclose(eg + ep, e, rtol=0, atol=4e-15 * (1 + np.abs(e).max()))
    lengths = [np.linalg.norm(apply_rest_alpha(e, a, g)) for a in np.linspace(0, 1, 11)]
    assert all(b >= a - 1e-12 for a, b in zip(lengths, lengths[1:]))


def test_param_validation():
    with pytest.raises(ValueError):
        RestShapeParam(1.2)
    with pytest.raises(ValueError):
        RestShapeParam(0.5, (0, 0, -2))
    p = RestShapeParam.from_gravity(0.5, (0, -9.8, 0))
    assert p.gravity_dir == (0.0, -1.0, 0.0)


def test_alpha_one_is_identity():
    cloth = cloth_patch(5, 5, 1, 1, plane="xy")
    a = build_rest_state(cloth, RestShapeParam(1.0))
    b = material_frames(cloth)
    assert a.D.tobytes() == b.D.tobytes()


def test_horizontal_mesh_unaffected():
    cloth = cloth_patch(5, 5, 1, 1, plane="xz")
    a = build_rest_state(cloth, RestShapeParam(0.3))
    np.testing.assert_allclose(a.D, material_frames(cloth).D, atol=1e-12)


def test_vertical_strip_half_alpha():
    cloth = cloth_patch(2, 2, 1, 1, plane="xy")  # unit square in the xy plane
    rest = build_rest_state(cloth, RestShapeParam(0.5))
    for f, D in zip(cloth.faces, rest.D):
        for col, (i, j) in zip(D.T[:2], [(0, 1), (0, 2)]):
            e = cloth.vertices[f[j]] - cloth.vertices[f[i]]
            np.testing.assert_allclose(col, [e[0], 0.5 * e[1], 0])
    assert np.all(np.abs(np.linalg.det(rest.D)) > 0)


def test_collapse_names_alpha():
    cloth = cloth_patch(2, 3, 1e-9, 1, plane="xy", origin=(0, 0, 0))
    with pytest.raises(DegenerateFaceError, match="alpha=0.0"):
        build_rest_state(cloth, RestShapeParam(0.0))
