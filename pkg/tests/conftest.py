import numpy as np
import pytest

from nehari_radial import (
    EUCLIDEAN_BALL,
    ROUND_SPHERE,
    Field,
    ModelGeometry,
    ProblemSpec,
    RadialCoefficient,
    build_grid,
    constants_report,
)


@pytest.fixture(scope="session")
def ball8():
    return ModelGeometry(EUCLIDEAN_BALL, 8, 1.0)


@pytest.fixture(scope="session")
def ball6():
    return ModelGeometry(EUCLIDEAN_BALL, 6, 1.0)


@pytest.fixture(scope="session")
def sphere8():
    return ModelGeometry(ROUND_SPHERE, 8, 1.5)


@pytest.fixture(scope="session")
def grid8_small(ball8):
    return build_grid(ball8, 128)


@pytest.fixture(scope="session")
def grid8_mid(ball8):
    return build_grid(ball8, 512)


@pytest.fixture(scope="session")
def spec8_small(ball8, grid8_small):
    return ProblemSpec(geom=ball8, grid=grid8_small)


@pytest.fixture(scope="session")
def spec8_mid(ball8, grid8_mid):
    return ProblemSpec(geom=ball8, grid=grid8_mid)


@pytest.fixture(scope="session")
def constants_mid(spec8_mid):
    return constants_report(spec8_mid)


@pytest.fixture(scope="session")
def spec8_mid_lam(spec8_mid, constants_mid):
    """Reference spec in the smallness regime: lam = 0.1 * lambda0."""
    return spec8_mid.with_lam(0.1 * constants_mid.lambda0)


@pytest.fixture(scope="session")
def weighted_spec(ball8, grid8_mid):
    """Nonzero singular weights sigma = 1.5, mu = 3 (a adds, b adds)."""
    return ProblemSpec(
        geom=ball8,
        grid=grid8_mid,
        a=RadialCoefficient.constant(-0.3),
        b=RadialCoefficient.constant(0.4),
        sigma=1.5,
        mu=3.0,
        lam=0.05,
    )


def smooth_random_field(spec, rng, modes=6):
    rho = spec.grid.nodes
    R = spec.geom.radius
    bump = (1.0 - (rho / R) ** 2) ** 2
    k = np.arange(modes)
    basis = np.cos(np.pi * np.outer(k, rho / R)) * bump
    coef = rng.normal(size=modes)
    vals = coef @ basis
    if not np.any(vals):
        vals = bump
    return Field(vals, spec.grid)
