"""Shared model fixtures for the test suite."""

import pytest

from merton_factor import load_model


@pytest.fixture
def mpr_model():
    """Proportional market-price-of-risk factor model on an OU factor."""
    return load_model(
        {
            "family": "mpr",
            "params": {
                "R": 1.5,
                "delta": 0.05,
                "r": 0.02,
                "sigma": 0.2,
                "kappa": 0.3,
                "theta": 0.5,
                "nu": 0.6,
                "rho": -0.2,
            },
        }
    )


@pytest.fixture
def heston_model():
    """Square-root stochastic-volatility model with strongly negative rho."""
    return load_model(
        {
            "family": "heston",
            "params": {
                "R": 2.0,
                "delta": 0.02,
                "r": 0.013,
                "lambda": 1.66,
                "kappa": 0.088,
                "theta": 0.035,
                "nu": 0.031,
                "rho": -0.84,
            },
        }
    )


@pytest.fixture
def vasicek_model():
    """Mean-reverting interest-rate model with constant market price of risk."""
    return load_model(
        {
            "family": "vasicek",
            "params": {
                "R": 1.5,
                "delta": 0.02,
                "lambda": 23.0 / 60.0,
                "sigma": 0.18,
                "kappa": 0.43,
                "theta": 0.013,
                "nu": 0.033,
                "rho": -0.0012,
            },
        }
    )


@pytest.fixture
def bs_model():
    """Constant-coefficient market; every route has a closed form here."""
    return load_model(
        {
            "family": "black_scholes",
            "params": {"R": 2.0, "delta": 0.1, "r": 0.02, "lambda": 0.3, "sigma": 0.25},
        }
    )


@pytest.fixture
def regime2_model():
    """Two-state regime model with state-dependent discounting."""
    return load_model(
        {
            "family": "regime",
            "Q": [[-0.5, 0.5], [0.5, -0.5]],
            "r": [0.02, 0.01],
            "lambda": [0.4, 0.1],
            "sigma": [0.25, 0.2],
            "delta": [0.3, 0.18],
            "R": 2.0,
        }
    )
