import numpy as np
import pytest

from sffsim import kernels

BACKENDS = kernels.available_backends()


def test_python_backend_always_available():
    assert "python" in BACKENDS
    with pytest.raises(ValueError):
        kernels.load_backend("fortran")


def _random_hull_points(rng, n=12, m=20):
    centers = rng.uniform(5, 35, (n, 1, 2))
    return np.ascontiguousarray(centers + rng.normal(0, 3, (n, m, 2)))


def _random_quads(rng, n=12):
    out = []
    for _ in range(n):
        c = rng.uniform(5, 35, 2)
        t = rng.uniform(0, np.pi)
        hx, hy = rng.uniform(0.5, 5, 2)
        r = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        corners = np.array([(hx, -hy), (hx, hy), (-hx, hy), (-hx, -hy)])
        out.append(c + corners @ r.T)
    return np.ascontiguousarray(np.array(out))


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    py, cy = kernels.load_backend("python"), kernels.load_backend("cython")
    rng = np.random.default_rng(seed)
    pts = _random_hull_points(rng)
    g1, g2 = np.zeros((40, 40), np.uint8), np.zeros((40, 40), np.uint8)
    np.testing.assert_array_equal(py.stamp_hulls(g1, pts), cy.stamp_hulls(g2, pts))
    quads = _random_quads(rng)
    g1, g2 = np.zeros((40, 40), np.uint8), np.zeros((40, 40), np.uint8)
    np.testing.assert_array_equal(py.stamp_polygons(g1, quads), cy.stamp_polygons(g2, quads))
    occ = (rng.random((30, 25)) < 0.3).astype(float)
    k = rng.random((7, 7))
    k /= k.sum()
    np.testing.assert_array_equal(py.convolve_clamped(occ, k), cy.convolve_clamped(occ, k))


def test_stamp_hull_matches_point_in_polygon(rng):
    py = kernels.load_backend("python")
    quads = _random_quads(rng, 3)
    a = py.stamp_hulls(np.zeros((40, 40), np.uint8), quads)
    b = py.stamp_polygons(np.zeros((40, 40), np.uint8), quads)
    np.testing.assert_array_equal(a, b)


def test_convolution_of_delta(rng):
    py = kernels.load_backend("python")
    occ = np.zeros((9, 9))
    occ[4, 4] = 1.0
    k = rng.random((3, 3)) / 9.0
    out = py.convolve_clamped(occ, k)
    np.testing.assert_allclose(out[3:6, 3:6], k)
    assert out.sum() == pytest.approx(k.sum())
