import math

import numpy as np
import pytest

from palign.errors import ConfigError, InvalidInputError
from palign.kernels import Family, KernelSpec, decreasing_envelope, evaluate, evaluate_matrix, load_table


def test_constant_kernel():
    k = KernelSpec(beta=0.0, c_k=1.0)
    assert evaluate(k, [0.3, 1.0], [5.0, -2.0]) == 1.0


def test_heavy_tail_value():
    k = KernelSpec(beta=1.0, c_k=2.0)
    assert evaluate(k, [0.0], [1.0]) == pytest.approx(1.0, abs=1e-15)


def test_singular_head_value():
    k = KernelSpec(Family.SINGULAR_HEAVY_TAIL, beta=0.25, s=0.75, p=1.0, dim=1)
    assert evaluate(k, [0.0], [0.5]) == pytest.approx(0.5 ** -2.5, rel=1e-14)
    assert 0.5 ** -2.5 == pytest.approx(5.65685, abs=1e-5)


def test_singular_continuous_at_crossover():
    k = KernelSpec(Family.SINGULAR_HEAVY_TAIL, beta=0.5, s=0.6, p=1.2, dim=2, r_scale=0.7)
    lo, hi = k.profile(0.7), k.profile(0.7 * (1 + 1e-12))
    assert lo == pytest.approx(hi, rel=1e-9)


def test_singular_dominates_head():
    k = KernelSpec(Family.SINGULAR_HEAVY_TAIL, beta=0.5, s=0.5, p=1.0, dim=1)
    r = np.linspace(1e-3, 10.0, 2000)
    assert np.all(k.profile(r) >= k.singular_head(r) * (1 - 1e-14))


def test_singular_needs_floor_at_zero():
    k = KernelSpec(Family.SINGULAR_HEAVY_TAIL, s=0.5, dim=1)
    with pytest.raises(InvalidInputError):
        evaluate(k, [0.0], [0.0])
    assert math.isfinite(evaluate(k.with_eps(0.01), [0.0], [0.0]))


def test_matrix_isotropic():
    k = KernelSpec(Family.MATRIX, beta=0.0, c_k=1.5, dim=2, aniso=((1.0, 0.0), (0.0, 1.0)))
    assert np.array_equal(evaluate_matrix(k, [0, 0], [3, 1]), 1.5 * np.eye(2))


def test_matrix_diag():
    k = KernelSpec(Family.MATRIX, beta=1.0, c_k=1.0, dim=2, aniso=((1.0, 0.0), (0.0, 2.0)))
    np.testing.assert_allclose(evaluate_matrix(k, [0, 0], [1, 0]), np.diag([0.5, 1.0]), rtol=1e-15)


def test_matrix_quadratic_form_bounds():
    rng = np.random.default_rng(3)
    k = KernelSpec(Family.MATRIX, beta=0.5, c_k=1.0, dim=2, aniso=((2.0, 0.5), (0.5, 1.0)))
    lam = np.linalg.eigvalsh(k.aniso_array)
    for _ in range(50):
        x, y, w = rng.normal(size=(3, 2))
        form = w @ evaluate_matrix(k, x, y) @ w
        r = np.linalg.norm(x - y)
        assert form >= (1 + r) ** -0.5 * lam[0] * (w @ w) * (1 - 1e-12)
        assert form <= k.upper_bound * (w @ w) * (1 + 1e-12)


def test_matrix_requires_p1_and_spd():
    with pytest.raises(ConfigError):
        KernelSpec(Family.MATRIX, p=0.5, dim=2, aniso=((1.0, 0.0), (0.0, 1.0)))
    with pytest.raises(ConfigError):
        KernelSpec(Family.MATRIX, dim=2, aniso=((1.0, 0.0), (0.0, -1.0)))


def test_envelope_heavy_tail():
    k = KernelSpec(beta=0.5, c_k=3.0)
    assert decreasing_envelope(k, 0.0) == 3.0
    assert decreasing_envelope(k, 2.0) == pytest.approx(3.0 * 3.0 ** -0.5)


def test_envelope_tabulated_running_min():
    k = KernelSpec(Family.TABULATED, table_r=(0.0, 1.0, 2.0), table_phi=(1.0, 0.2, 0.5))
    assert decreasing_envelope(k, 2.0) == pytest.approx(0.2)
    assert decreasing_envelope(k, 1.5) == pytest.approx(0.2)


def test_envelope_rejects_negative():
    with pytest.raises(InvalidInputError):
        decreasing_envelope(KernelSpec(), -1.0)


def test_load_table(tmp_path):
    f = tmp_path / "k.csv"
    f.write_text("r,phi\n0,1\n1,0.2\n2,0.5\n")
    r, phi = load_table(f)
    assert r == (0.0, 1.0, 2.0) and phi == (1.0, 0.2, 0.5)


def test_invalid_parameters():
    with pytest.raises(ConfigError):
        KernelSpec(beta=-1.0)
    with pytest.raises(ConfigError):
        KernelSpec(c_k=0.0)
    with pytest.raises(InvalidInputError):
        evaluate(KernelSpec(), [0.0, 1.0], [1.0])
