import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muon8 import linalg
from muon8.errors import NumericalError, RankError, ShapeError, ZeroInputError

from conftest import random_orthogonal


def triple_loop(a, b):
    m, p = a.shape
    n = b.shape[1]
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(p):
                acc += a[i, k] * b[k, j]
            out[i][j] = acc
    return np.array(out)


def eig_oracle(ata, iters=5000):
    """Eigenvalues of a symmetric PSD matrix by power iteration + deflation."""
    n = ata.shape[0]
    work = ata.copy()
    vals = []
    rng = np.random.default_rng(99)
    for _ in range(n):
        x = rng.standard_normal(n)
        lam = 0.0
        for _ in range(iters):
            y = work @ x
            ny = np.linalg.norm(y)
            if ny == 0:
                break
            x = y / ny
            lam_new = x @ work @ x
            if abs(lam_new - lam) < 1e-15 * max(1.0, abs(lam_new)):
                lam = lam_new
                break
            lam = lam_new
        vals.append(lam)
        work = work - lam * np.outer(x, x)
    return np.sort(np.array(vals))[::-1]


# ---- matmul -------------------------------------------------------------


def test_matmul_identity_and_zero(backend):
    a = np.random.default_rng(0).standard_normal((3, 3))
    assert np.array_equal(linalg.matmul(np.eye(3), a), a)
    assert np.array_equal(linalg.matmul(a, np.zeros((3, 2))), np.zeros((3, 2)))


def test_matmul_against_triple_loop(backend):
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    assert np.max(np.abs(linalg.matmul(a, b) - triple_loop(a, b))) <= 1e-12


def test_matmul_compiled_order_is_left_to_right():
    from muon8._backend import BACKENDS

    if "cython" not in BACKENDS:
        pytest.skip("compiled core not built")
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((7, 9)), rng.standard_normal((9, 4))
    assert np.array_equal(BACKENDS["cython"].matmul(a, b), triple_loop(a, b))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))


# ---- norms ---------------------------------------------------------------


def test_frobenius():
    assert linalg.frobenius_norm(np.zeros((3, 3))) == 0.0
    assert linalg.frobenius_norm(np.eye(4)) == 2.0
    a = np.random.default_rng(3).standard_normal((8, 8))
    direct = math.sqrt(sum(float(v) ** 2 for v in a.ravel()))
    assert abs(linalg.frobenius_norm(a) - direct) <= 1e-12


def test_max_abs():
    assert linalg.max_abs(np.zeros((2, 2))) == 0.0
    assert linalg.max_abs(np.array([[2.0, -3.0], [1.0, 0.5]])) == 3.0
    assert linalg.max_abs(np.array([[-7.0]])) == 7.0


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(NumericalError):
        linalg.as_matrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ShapeError):
        linalg.as_matrix(np.ones(3))


# ---- thin SVD --------------------------------------------------------------


def check_svd(a, res, tol=1e-9):
    r = min(a.shape)
    assert res.u.shape == (a.shape[0], r) and res.vt.shape == (r, a.shape[1])
    assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)
    assert np.linalg.norm(res.u.T @ res.u - np.eye(r)) <= tol
    assert np.linalg.norm(res.vt @ res.vt.T - np.eye(r)) <= tol
    scale = max(np.linalg.norm(a), 1e-300)
    assert np.linalg.norm(a - res.reconstruct()) <= tol * scale
    lead = res.u[np.argmax(np.abs(res.u), axis=0), np.arange(r)]
    assert np.all(lead >= 0)


def test_svd_diagonal(backend):
    res = linalg.thin_svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(res.s, [3, 2, 1], atol=1e-15)
    assert np.allclose(res.u, np.eye(3)) and np.allclose(res.vt, np.eye(3))


def test_svd_orthogonal_input(backend):
    q = random_orthogonal(6, 4)
    res = linalg.thin_svd(q)
    assert np.max(np.abs(res.s - 1.0)) <= 1e-9


def test_svd_random_vs_eigen_oracle(backend):
    a = np.random.default_rng(5).standard_normal((6, 4))
    res = linalg.thin_svd(a)
    check_svd(a, res)
    eig = eig_oracle(a.T @ a)
    assert np.max(np.abs(res.s - np.sqrt(eig))) <= 1e-6


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (3, 7), (16, 8), (40, 40), (256, 256)])
def test_svd_shapes(shape, backend):
    if shape == (256, 256) and backend.BACKEND == "python":
        pytest.skip("pure-Python Jacobi too slow at 256")
    a = np.random.default_rng(sum(shape)).standard_normal(shape)
    check_svd(a, linalg.thin_svd(a))


def test_svd_rank_deficient(backend):
    rng = np.random.default_rng(6)
    a = rng.standard_normal((7, 2)) @ rng.standard_normal((2, 5))
    res = linalg.thin_svd(a)
    check_svd(a, res)
    assert res.s[2] <= 1e-12 * res.s[0]
    z = linalg.thin_svd(np.zeros((3, 2)))
    check_svd(np.zeros((3, 2)), z)


def test_svd_backends_agree():
    from muon8._backend import BACKENDS

    if "cython" not in BACKENDS:
        pytest.skip("compiled core not built")
    a = np.random.default_rng(8).standard_normal((20, 12))
    outs = []
    for name in ("python", "cython"):
        w = np.asfortranarray(a.copy())
        v = np.asfortranarray(np.eye(12))
        BACKENDS[name].jacobi_sweeps(w, v, 1e-12, 60)
        outs.append(np.sort(np.linalg.norm(w, axis=0)))
    assert np.max(np.abs(outs[0] - outs[1])) <= 1e-12


def test_svd_deterministic():
    a = np.random.default_rng(9).standard_normal((12, 9))
    r1, r2 = linalg.thin_svd(a), linalg.thin_svd(a)
    assert np.array_equal(r1.u, r2.u) and np.array_equal(r1.s, r2.s) and np.array_equal(r1.vt, r2.vt)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 24), n=st.integers(1, 24), seed=st.integers(0, 2**32 - 1))
def test_svd_property(m, n, seed):
    a = np.random.default_rng(seed).standard_normal((m, n))
    check_svd(a, linalg.thin_svd(a))


# ---- polar factor --------------------------------------------------------


def test_polar_of_orthogonal(backend):
    q = random_orthogonal(5, 11)
    assert np.max(np.abs(linalg.polar_factor(q) - q)) <= 1e-12


def test_polar_positive_diagonal(backend):
    assert np.allclose(linalg.polar_factor(np.diag([5.0, 0.1])), np.eye(2), atol=1e-15)


def test_polar_random_tall(backend):
    a = np.random.default_rng(12).standard_normal((8, 5))
    o = linalg.polar_factor(a)
    assert np.linalg.norm(o.T @ o - np.eye(5)) <= 1e-9
    # symmetric PSD factor P = O^T A reconstructs A
    p = o.T @ a
    assert np.linalg.norm(p - p.T) <= 1e-9
    assert np.all(np.linalg.eigvalsh((p + p.T) / 2) > 0)
    assert np.linalg.norm(a - o @ p) <= 1e-9 * np.linalg.norm(a)
    # nearest matrix with orthonormal columns: beats random competitors
    best = np.linalg.norm(a - o)
    for s in range(20):
        q = np.linalg.qr(np.random.default_rng(100 + s).standard_normal((8, 5)))[0]
        assert best <= np.linalg.norm(a - q) + 1e-12


def test_polar_rank_error():
    with pytest.raises(RankError) as info:
        linalg.polar_factor(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert info.value.s_min < 1e-12


@settings(max_examples=30, deadline=None)
@given(m=st.integers(2, 20), k=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
def test_polar_property(m, k, seed):
    n = min(m, k)
    a = np.random.default_rng(seed).standard_normal((m, n))
    res = linalg.thin_svd(a)
    if res.s[-1] <= 1e-12 * res.s[0]:
        return
    o = linalg.polar_factor(a)
    assert np.linalg.norm(o.T @ o - np.eye(n)) <= 1e-8


# ---- Newton-Schulz ---------------------------------------------------------


def ns_replay(m, steps):
    a, b, c = linalg.NS_COEFFS
    x = m / (np.linalg.norm(m) + linalg.NS_EPS)
    t = x.shape[0] > x.shape[1]
    if t:
        x = x.T
    for _ in range(steps):
        g = x @ x.T
        x = a * x + (b * g + c * g @ g) @ x
    return x.T if t else x


def test_ns_one_step_closed_form(backend):
    a, b, c = linalg.NS_COEFFS
    q = np.array([[1.0]])
    out = linalg.newton_schulz(q, 1)
    assert abs(out[0, 0] - 0.701) <= 1e-6
    q = random_orthogonal(4, 13)
    s0 = 1.0 / (2.0 + linalg.NS_EPS)
    expected = (a * s0 + b * s0**3 + c * s0**5) * q
    assert np.max(np.abs(linalg.newton_schulz(q, 1) - expected)) <= 1e-12


def test_ns_orthogonal_input(backend):
    for n in (2, 8, 32):
        q = random_orthogonal(n, n)
        d = np.linalg.norm(linalg.newton_schulz(q, 5) - q) / math.sqrt(n)
        assert d <= 0.35


def test_ns_gaussian_64_band(backend):
    m = np.random.default_rng(14).standard_normal((64, 64))
    sv = np.linalg.svd(linalg.newton_schulz(m, 5), compute_uv=False)
    assert sv.min() >= 0.5 and sv.max() <= 1.5


def test_ns_matches_replay(backend):
    for shape in ((4, 4), (9, 5), (5, 9)):
        m = np.random.default_rng(15).standard_normal(shape)
        assert np.max(np.abs(linalg.newton_schulz(m, 5) - ns_replay(m, 5))) <= 1e-12


def test_ns_errors():
    with pytest.raises(ValueError):
        linalg.newton_schulz(np.eye(2), 0)
    with pytest.raises(ZeroInputError):
        linalg.newton_schulz(np.zeros((3, 3)), 5)


def test_ns_transpose_symmetry():
    m = np.random.default_rng(16).standard_normal((10, 4))
    assert np.max(np.abs(linalg.newton_schulz(m).T - linalg.newton_schulz(m.T))) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(
    r=st.integers(2, 24),
    c=st.integers(2, 24),
    seed=st.integers(0, 2**32 - 1),
    log_floor=st.floats(math.log10(1.1e-3), 0.0),
)
def test_ns_band_for_conditioned_inputs(r, c, seed, log_floor):
    """Band holds whenever normalized singular values sit in [1.1e-3, 1]."""
    k = min(r, c)
    rng = np.random.default_rng(seed)
    u = np.linalg.qr(rng.standard_normal((r, k)))[0]
    v = np.linalg.qr(rng.standard_normal((c, k)))[0]
    # normalized spectrum: k-1 values log-uniform in [floor, 1/sqrt(k)], the top one fills the unit norm
    hi = math.log10(1.0 / math.sqrt(k))
    rest = 10 ** rng.uniform(min(log_floor, hi), hi, size=k - 1)
    if k > 1:
        rest[-1] = 10 ** min(log_floor, hi)
    s = np.sort(np.concatenate([[math.sqrt(1.0 - np.sum(rest**2))], rest]))[::-1]
    sv = np.linalg.svd(linalg.newton_schulz((u * s) @ v.T), compute_uv=False)
    assert sv.min() >= 0.5 and sv.max() <= 1.5


def test_ns_distance_to_polar_random():
    for i, (m, n) in enumerate([(16, 16), (32, 8), (8, 48), (64, 64), (128, 96)]):
        a = np.random.default_rng(200 + i).standard_normal((m, n))
        d = np.linalg.norm(linalg.newton_schulz(a) - linalg.polar_factor(a)) / math.sqrt(min(m, n))
        assert d <= 0.35
