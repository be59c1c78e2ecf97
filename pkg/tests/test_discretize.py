"""Finite-difference generators: stencils, monotonicity, conservation."""

import numpy as np
import pytest

import oracles
from merton_factor import (
    DiscretizationError,
    assemble_discrete_hjb,
    build_central_generator,
    build_upwind_generator,
    load_model,
    monotone_step_limit,
    to_zero_correlation,
)


def tabulated(y, a, b, lam=None, R=2.0):
    """Piecewise-linear model over y, padded one cell so the full range is usable."""
    y = np.asarray(y, dtype=float)
    pad = y[1] - y[0]
    y = np.concatenate([[y[0] - pad], y, [y[-1] + pad]])
    a = np.concatenate([[a[0]], np.asarray(a, dtype=float), [a[-1]]])
    b = np.concatenate([[b[0]], np.asarray(b, dtype=float), [b[-1]]])
    lam = np.zeros_like(y) if lam is None else np.concatenate([[lam[0]], np.asarray(lam, dtype=float), [lam[-1]]])
    return load_model(
        {
            "family": "tabulated",
            "params": {
                "R": R,
                "y": y.tolist(),
                "r": (0.02 + 0.0 * y).tolist(),
                "lambda": lam.tolist(),
                "sigma": (0.25 + 0.0 * y).tolist(),
                "delta": (0.1 + 0.0 * y).tolist(),
                "a": np.asarray(a, dtype=float).tolist(),
                "b": np.asarray(b, dtype=float).tolist(),
            },
        }
    )


def test_upwind_operator_matches_dense_transcription(mpr_model):
    A_h, grid = assemble_discrete_hjb(mpr_model, -3.0, 3.0, 24, scheme="upwind")
    expected = oracles.dense_upwind_operator(
        mpr_model.eta(grid),
        mpr_model.a(grid),
        mpr_model.b(grid),
        mpr_model.R,
        float(grid[1] - grid[0]),
    )
    got = A_h.to_dense()
    # Off-diagonal bands follow the identical arithmetic path: bitwise equal.
    assert np.array_equal(np.diag(got, -1), np.diag(expected, -1))
    assert np.array_equal(np.diag(got, 1), np.diag(expected, 1))
    # The diagonal uses the conservative form -(sub + sup) instead of the
    # written-out stencil, so agreement is to rounding only.
    assert np.diag(got) == pytest.approx(np.diag(expected), rel=5e-15, abs=0)


def test_two_node_generator_is_symmetric_half_rate():
    # b = 1, a = 0 on [0, 1] with one step: both reflection rows give
    # rate b^2/(2 h^2) = 1/2, i.e. the two-state generator [[-.5,.5],[.5,-.5]].
    y = np.linspace(0.0, 1.0, 5)
    model = tabulated(y, 0.0 * y, 1.0 + 0.0 * y)
    gen = build_upwind_generator(model, 0.0, 1.0, 1)
    assert np.array_equal(gen.Q_h.to_dense(), [[-0.5, 0.5], [0.5, -0.5]])


def test_generators_conserve_probability(mpr_model):
    up = build_upwind_generator(mpr_model, -3.0, 3.0, 50)
    rows = up.Q_h.to_dense().sum(axis=1)
    assert np.max(np.abs(rows)) <= 1e-13 * up.Q_h.norm_inf()
    cen = build_central_generator(mpr_model, -3.0, 3.0, 100)
    rows = cen.Q_h.to_dense().sum(axis=1)
    assert np.max(np.abs(rows)) <= 1e-13 * cen.Q_h.norm_inf()


def test_generators_are_monotone_z_matrices(mpr_model):
    for gen in (
        build_upwind_generator(mpr_model, -3.0, 3.0, 50),
        build_central_generator(mpr_model, -3.0, 3.0, 100),
    ):
        assert np.all(gen.Q_h.sub >= 0.0)
        assert np.all(gen.Q_h.sup >= 0.0)
        assert np.all(gen.Q_h.main <= 0.0)


def test_assembled_rows_sum_to_eta(mpr_model):
    A_h, grid = assemble_discrete_hjb(mpr_model, -3.0, 3.0, 40)
    rows = A_h.to_dense().sum(axis=1)
    eta = mpr_model.eta(grid)
    assert rows == pytest.approx(eta, rel=1e-12, abs=1e-12)


def test_monotone_step_limit_value(mpr_model):
    # b = 0.6 constant, drift 0.3(0.5 - y): sup |a| on [-3, 3] is 1.05 at y = -3,
    # so h* = 0.36 / 1.05 = 12/35.
    assert monotone_step_limit(mpr_model, -3.0, 3.0, 100) == pytest.approx(
        12.0 / 35.0, rel=0, abs=1e-15
    )


def test_central_scheme_enforces_step_limit(mpr_model):
    with pytest.raises(DiscretizationError, match="h\\*"):
        build_central_generator(mpr_model, -3.0, 3.0, 10)
    # The upwind scheme has no such restriction.
    build_upwind_generator(mpr_model, -3.0, 3.0, 10)


def test_central_upwind_interior_identical_for_zero_drift():
    y = np.linspace(-1.0, 1.0, 9)
    model = tabulated(y, 0.0 * y, 0.7 + 0.0 * y)
    up = build_upwind_generator(model, -1.0, 1.0, 8).Q_h.to_dense()
    cen = build_central_generator(model, -1.0, 1.0, 8).Q_h.to_dense()
    # Interior rows agree bitwise; the wall rows use different reflections
    # (half-cell for upwind, mirror for central).
    assert np.array_equal(up[1:-1], cen[1:-1])
    h = 0.25
    assert cen[0, 1] == pytest.approx(0.7**2 / h**2, rel=0, abs=0)
    assert up[0, 1] == pytest.approx(0.7**2 / (2 * h**2), rel=0, abs=0)


def test_central_mirror_rows_cancel_drift(mpr_model):
    gen = build_central_generator(mpr_model, -3.0, 3.0, 200)
    h = gen.h
    b = mpr_model.b(gen.grid)
    assert gen.Q_h.sup[0] == pytest.approx(b[0] ** 2 / h**2, rel=0, abs=0)
    assert gen.Q_h.main[0] == -gen.Q_h.sup[0]
    assert gen.Q_h.sub[-1] == pytest.approx(b[-1] ** 2 / h**2, rel=0, abs=0)
    assert gen.Q_h.main[-1] == -gen.Q_h.sub[-1]


def test_upwind_boundary_rows_split_drift():
    y = np.linspace(-1.0, 1.0, 9)
    model = tabulated(y, 0.5 + 0.0 * y, 1.0 + 0.0 * y)  # constant positive drift
    gen = build_upwind_generator(model, -1.0, 1.0, 4)
    h = 0.5
    # Left wall: outflow rate b^2/(2h^2) + a+/h; right wall: b^2/(2h^2) + a-/h.
    assert gen.Q_h.sup[0] == pytest.approx(1.0 / (2 * h**2) + 0.5 / h, rel=0, abs=0)
    assert gen.Q_h.sub[-1] == pytest.approx(1.0 / (2 * h**2), rel=0, abs=0)


def test_grid_geometry(mpr_model):
    gen = build_upwind_generator(mpr_model, -3.0, 3.0, 12)
    assert gen.n_steps == 12
    assert gen.grid.shape == (13,)
    assert gen.h == pytest.approx(0.5, rel=0, abs=0)
    assert gen.grid[0] == -3.0 and gen.grid[-1] == 3.0
    assert np.diff(gen.grid) == pytest.approx(np.full(12, 0.5), rel=0, abs=1e-15)


def test_domain_validation(mpr_model, heston_model):
    with pytest.raises(DiscretizationError, match="e_minus < e_plus"):
        build_upwind_generator(mpr_model, 3.0, -3.0, 10)
    with pytest.raises(DiscretizationError, match="grid nodes"):
        build_upwind_generator(mpr_model, -3.0, 3.0, 0)
    with pytest.raises(DiscretizationError, match="state interval"):
        build_upwind_generator(heston_model, -1.0, 1.0, 10)
    # Square-root state space: strictly positive truncations work.
    gen = build_upwind_generator(heston_model, 0.01, 0.2, 10)
    assert np.all(gen.grid > 0.0)


def test_assemble_uses_the_given_models_risk_aversion(mpr_model):
    # diag(eta) - Q_h / R with the model's own R; the zero-correlation
    # transform changes R, so the assembled operators must differ.
    raw, _ = assemble_discrete_hjb(mpr_model, -3.0, 3.0, 20)
    work, phi = to_zero_correlation(mpr_model)
    transformed, _ = assemble_discrete_hjb(work, -3.0, 3.0, 20)
    assert phi != 1.0
    assert np.max(np.abs(raw.to_dense() - transformed.to_dense())) > 0.0
