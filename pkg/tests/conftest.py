import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from toricgk.polytope import BUILTIN_POLYTOPES, interior_quadrature, load_builtin
from toricgk.potential import PolynomialField, admissibility_check, gauged_basis, guillemin_potential

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def polys():
    return {name: load_builtin(name) for name in BUILTIN_POLYTOPES}


@pytest.fixture(scope="session")
def square():
    return load_builtin("square")


@pytest.fixture(scope="session")
def segment():
    return load_builtin("segment")


@pytest.fixture(scope="session")
def simplex():
    return load_builtin("simplex")


def random_correction(poly, rng, degree=4, scale=0.05):
    alphas = gauged_basis(poly.dim, degree)
    return PolynomialField(poly.barycenter, {a: scale * rng.standard_normal() for a in alphas})


def random_admissible(poly, datum, rng, degree=4, scale=0.05, level=3):
    """A random u₀ + v, shrinking v until the sampled check passes."""
    u0 = guillemin_potential(poly)
    v = random_correction(poly, rng, degree, scale)
    q = interior_quadrature(poly, level)
    for _ in range(30):
        u = u0.with_correction(v)
        if admissibility_check(u, datum, q).admissible:
            return u
        v = v.scaled(0.5)
    raise AssertionError("could not find an admissible potential")


def random_polynomial(poly, rng, degree=4):
    from toricgk._exact import multi_indices
    alphas = multi_indices(poly.dim, degree)
    return PolynomialField(poly.barycenter, {a: rng.standard_normal() for a in alphas})


def centered_derivative(E, u, udot, eps):
    """Fourth-order centered difference of t -> E(u + t u̇) at t = 0."""
    Et = lambda t: E(u.add_polynomial(udot.scaled(t)))
    return (8 * (Et(eps) - Et(-eps)) - (Et(2 * eps) - Et(-2 * eps))) / (12 * eps)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
