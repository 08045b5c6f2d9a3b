import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import linregress

from reifenberg.generators import SnowflakeSpec, plane_lattice_balls, snowflake_balls
from reifenberg.geometry import AffinePlane, Ball, omega
from reifenberg.measure import BallCollection, DiscreteMeasure, measure_from_balls
from reifenberg.reifenberg import (PreconditionError, ScaleLadder, build_covering, classify_ball,
                                   comparison_constant, default_tau, excess_set, initial_M, key_estimates_report,
                                   markov_terms, run_construction, separated_subset, squash_experiment, verify_bound)

X_AXIS = AffinePlane(np.zeros(2), np.array([[1.0, 0.0]]))


def lattice(s=3, rho=0.25, k=1, n=2):
    return measure_from_balls(plane_lattice_balls(k, n, s, rho), k)


def single_ball(rho=0.25):
    return measure_from_balls(BallCollection([[0.0, 0.0]], [rho]).certify(), 1)


@pytest.fixture(scope="module")
def snowflake5():
    return measure_from_balls(snowflake_balls(SnowflakeSpec.constant(0.3, 5), 4, 0.25), 1)


# ------------------------------------------------------------------ ladder

@pytest.mark.parametrize("rho", [0.1, 0.25, 1 / 3, 0.5])
def test_ladder_constants(rho):
    L = ScaleLadder(rho, 4, default_tau(2))
    assert abs(L.kappa * (1 - rho) - 1) <= 1e-15
    np.testing.assert_allclose(L.radii, rho ** np.arange(5), rtol=1e-15)
    assert L.to_dict()["A"] == 4


def test_ladder_validation():
    for bad in ((0.0, 3, 1.0), (1.0, 3, 1.0), (0.5, 0, 1.0), (0.5, 3, 0.0)):
        with pytest.raises(ValueError):
            ScaleLadder(*bad)
    assert default_tau(2) == 1 / (80 * 36)
    assert comparison_constant(1) == 60.0 and comparison_constant(2) == 180.0


def test_initial_M():
    assert initial_M(0.0, 2.0) == 10.0
    assert initial_M(16.0, 2.0) == pytest.approx(40.0)


# ------------------------------------------------------------------ separation and classification

def brute_separated(pts, out, r):
    d = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    reach = np.linalg.norm(pts[:, None] - out[None], axis=-1).min(1)
    return bool(np.all(d >= r)) and bool(np.all(reach < r))


def test_separated_subset_small_cases():
    np.testing.assert_array_equal(separated_subset([[0.3, 0.1]], 0.1), [[0.3, 0.1]])
    assert len(separated_subset([[0.0, 0.0], [0.05, 0.0]], 0.1)) == 1
    assert len(separated_subset(np.zeros((0, 2)), 0.1)) == 0
    with pytest.raises(ValueError):
        separated_subset([[0.0, 0.0]], 0.0)


def test_separated_subset_thousand_points():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(1000, 2))
    pts = u / np.linalg.norm(u, axis=1, keepdims=True) * np.sqrt(rng.uniform(size=(1000, 1)))
    assert brute_separated(pts, separated_subset(pts, 0.1), 0.1)


@given(st.integers(0, 10_000), st.floats(0.02, 0.5))
def test_separated_subset_property(seed, r):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (int(rng.integers(1, 150)), 3))
    assert brute_separated(pts, separated_subset(pts, r), r)


def test_classify_ball():
    tau, M = 0.01, 10.0
    r = 0.5
    mu = DiscreteMeasure([[0.0, 0.0]], [2 * tau * M * r], 1)
    assert classify_ball(mu, Ball(np.array([5.0, 5.0]), r), tau, M) == "bad"
    assert classify_ball(mu, Ball(np.zeros(2), r), tau, M) == "good"
    edge = DiscreteMeasure([[0.0, 0.0]], [0.125], 1)  # tau M r^k = 0.125 exactly in binary
    assert classify_ball(edge, Ball(np.zeros(2), 0.5), 0.25, 1.0) == "good"
    assert classify_ball(edge, Ball(np.zeros(2), 0.5), 0.25, 1.0 + 2 ** -40) == "bad"
    with pytest.raises(ValueError):
        classify_ball(mu, Ball(np.zeros(2), r), 0.0, M)


# ------------------------------------------------------------------ excess and Markov

def test_excess_empty_for_planar():
    mu = lattice()
    assert len(excess_set(mu, Ball(np.zeros(2), 1.0), X_AXIS, 0.25)) == 0


def test_excess_boundary_is_included():
    mu = DiscreteMeasure([[0.0, 0.0625], [0.1, 0.0625 - 2 ** -30]], [1.0, 1.0], 1)
    assert excess_set(mu, Ball(np.zeros(2), 1.0), X_AXIS, 0.25).tolist() == [0]


@given(st.integers(0, 10_000), st.sampled_from([2.0, 3.0, 4.0]))
def test_markov_exact(seed, q):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.01, 1, 50)
    d = rng.uniform(0, 0.2, 50)
    lhs, rhs = markov_terms(w, d, 0.25, q)
    assert lhs <= rhs
    lhs, rhs = markov_terms([0.3], [0.0625], 0.25, q)
    assert lhs == rhs == 0.3


# ------------------------------------------------------------------ covering

def test_single_ball_ends_in_fin():
    mu = single_ball()
    h = build_covering(mu, ScaleLadder.for_measure(mu), 1.0)
    assert not h.trivial
    last = h.scales[-1]
    assert len(last.good) == 0 and len(last.fin) == 1 and last.fin_atoms.tolist() == [0]


def test_lattice_has_no_excess():
    mu = lattice(4)
    for M in (1.0, 10.0, 100.0):
        h = build_covering(mu, ScaleLadder.for_measure(mu), M)
        assert h.excess.sum() == 0 and h.excess_mass_total == 0.0
        assert all(len(s.bad) == 0 for s in h.scales)


def test_snowflake_covering_checks_and_excess(snowflake5):
    h = build_covering(snowflake5, ScaleLadder.for_measure(snowflake5), 10.0)
    assert h.excess_mass_total > 0
    for key in ("claim2.coverage", "claim2.disjoint", "claim2.centers", "termination"):
        assert h.checks[key] >= 1
    assert h.checks["markov"] == sum(len(s.good) for s in h.scales)
    assert len(h.scales[-1].good) == 0


def test_large_M_makes_run_trivial():
    mu = lattice()
    h = build_covering(mu, ScaleLadder.for_measure(mu), 1e9)
    assert h.trivial and len(h.final_balls()) == 1


def test_preconditions():
    L = ScaleLadder(0.25, 3, default_tau(2))
    with pytest.raises(PreconditionError):
        build_covering(DiscreteMeasure([[0.0, 0.0]], [1.0], 1), L, 1.0)  # no source radius
    with pytest.raises(PreconditionError):
        build_covering(measure_from_balls(BallCollection([[0.0, 0.0]], [0.3]).certify(), 1), L, 1.0)
    with pytest.raises(PreconditionError):
        build_covering(measure_from_balls(BallCollection([[1.5, 0.0]], [0.25]).certify(), 1), L, 1.0)
    with pytest.raises(PreconditionError):
        build_covering(measure_from_balls(BallCollection([[0.0, 0.0]], [0.25 ** 5]).certify(), 1), L, 1.0)
    overl = DiscreteMeasure([[0.0, 0.0], [0.1, 0.0]], [0.5, 0.5], 1, radii=[0.25, 0.25])
    with pytest.raises(PreconditionError):
        build_covering(overl, L, 1.0)
    with pytest.raises(ValueError):
        build_covering(single_ball(), L, 0.0)


# ------------------------------------------------------------------ construction and reports

@pytest.fixture(scope="module")
def lattice_run():
    mu = lattice()
    L = ScaleLadder.for_measure(mu)
    return mu, L, run_construction(mu, L)


def test_lattice_report(lattice_run):
    mu, L, run = lattice_run
    rep = key_estimates_report(run.hierarchy, run.surfaces, mu)
    assert rep["excess_mass"] == 0.0 and rep["comparison_pass"]
    areas = [row["area"] for row in rep["rows"]]
    np.testing.assert_allclose(areas, areas[0], rtol=1e-12)
    assert rep["rows"][0]["lookback_clamped"] and all(b == 0.0 for b in (r["beta_sum"] for r in rep["rows"]))


def test_report_rejects_foreign_surfaces(lattice_run, snowflake5):
    mu, L, run = lattice_run
    other = run_construction(snowflake5, ScaleLadder.for_measure(snowflake5))
    with pytest.raises(ValueError, match="mismatched"):
        key_estimates_report(run.hierarchy, other.surfaces, mu)
    with pytest.raises(ValueError):
        key_estimates_report(run.hierarchy, run.surfaces, mu, ScaleLadder(0.5, 3, 1.0))


def test_snowflake_run_report(snowflake5):
    L = ScaleLadder.for_measure(snowflake5)
    run = run_construction(snowflake5, L)
    rep = key_estimates_report(run.hierarchy, run.surfaces, snowflake5)
    assert rep["comparison_pass"] and rep["comparison_worst"] <= 1.0
    assert run.attempts[-1]["failure"] is None
    assert run.M == run.M0 * 2 ** (len(run.attempts) - 1)
    assert len(rep["rows"]) == len(run.surfaces)


def test_explicit_M0_is_respected(snowflake5):
    L = ScaleLadder.for_measure(snowflake5)
    run = run_construction(snowflake5, L, M0=3.0)
    assert run.attempts[0]["M"] == 3.0 and run.J == 0.0


# ------------------------------------------------------------------ the bound

def test_verify_lattice():
    s, rho = 4, 0.25
    mu = lattice(s, rho)
    v = verify_bound(mu, 2.0, ScaleLadder.for_measure(mu), "sup")
    r = rho ** s
    count = 2 * math.floor(1 / (2 * r)) + 1
    assert v.J == 0.0 and v.ratio == v.mu_B1
    assert v.mu_B1 == pytest.approx(count * 2 * r, rel=1e-12)
    assert v.claim1_pass


@pytest.mark.parametrize("mode", ["sup", "avg"])
def test_verify_single_ball(mode):
    mu = single_ball()
    v = verify_bound(mu, 2.0, ScaleLadder.for_measure(mu), mode)
    assert v.J == 0.0 and v.ratio == pytest.approx(omega(1) * 0.25)
    assert v.exponent == (0.5 if mode == "sup" else 1.0)


def test_verify_rejects_mode():
    mu = single_ball()
    with pytest.raises(ValueError):
        verify_bound(mu, 2.0, ScaleLadder.for_measure(mu), "max")


# ------------------------------------------------------------------ squash experiment

def test_squash_exponents():
    res = squash_experiment([0.1 / 2 ** j for j in range(5)])
    assert 0.9 <= res["slope"] <= 1.1          # against delta0^2 + delta1^2
    d = [row["delta0"] for row in res["rows"]]
    y = [row["lip_minus_one"] for row in res["rows"]]
    assert 1.8 <= linregress(np.log(d), np.log(y)).slope <= 2.2   # against delta0
    assert all(v > 0 for v in y)
