import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reifenberg.generators import (SnowflakeSpec, greedy_separated, perturbed_graph_balls, plane_lattice_balls,
                                   polyline_length, polyline_to_balls, read_polyline_csv, snowflake_balls,
                                   snowflake_length, snowflake_polyline, write_polyline_csv)
from reifenberg.jones import flatness_sup
from reifenberg.measure import measure_from_balls

angles = st.floats(0.0, 1.0, allow_nan=False)


def brute_disjoint(bc, tol=1e-12):
    c, r = bc.centers, bc.radii
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    return bool(np.all(d >= r[:, None] + r[None] - tol))


# ------------------------------------------------------------------ polylines

def test_zero_generations():
    np.testing.assert_array_equal(snowflake_polyline(SnowflakeSpec((), 0)), [[0, 0], [1, 0]])
    assert snowflake_length(SnowflakeSpec((), 0)) == 1.0


def test_flat_angles_give_subdivided_segment():
    v = snowflake_polyline(SnowflakeSpec.constant(0.0, 3))
    assert len(v) == 4 ** 3 + 1
    assert np.all(v[:, 1] == 0) and np.all(np.diff(v[:, 0]) > 0)
    assert polyline_length(v) == pytest.approx(1.0, rel=1e-12)
    assert snowflake_length(SnowflakeSpec.constant(0.0, 3)) == 1.0


def test_pi_over_six_single_generation():
    spec = SnowflakeSpec.constant(math.pi / 6, 1)
    v = snowflake_polyline(spec)
    assert len(v) == 5
    np.testing.assert_array_equal(v[[0, -1]], [[0, 0], [1, 0]])
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    np.testing.assert_allclose(seg, [1 / 3, 1 / (6 * math.cos(math.pi / 6)), 1 / (6 * math.cos(math.pi / 6)), 1 / 3])
    expect = (2 + 2 / math.sqrt(3)) / 3
    assert snowflake_length(spec) == pytest.approx(expect, rel=1e-14)
    assert polyline_length(v) == pytest.approx(expect, rel=1e-12)


def test_harmonic_partial_products():
    spec = SnowflakeSpec.harmonic(0.3, 7)
    lengths = [polyline_length(snowflake_polyline(SnowflakeSpec(spec.angles[:g], g))) for g in range(8)]
    for g, L in enumerate(lengths):
        assert snowflake_length(SnowflakeSpec(spec.angles[:g], g)) == pytest.approx(L, rel=1e-9)
    inc = np.diff(lengths)
    assert np.all(inc > 0) and np.all(np.diff(inc) < 0)


@given(st.lists(angles, min_size=0, max_size=6))
def test_product_formula_matches_polyline(th):
    spec = SnowflakeSpec(tuple(th), len(th))
    assert snowflake_length(spec) == pytest.approx(polyline_length(snowflake_polyline(spec)), rel=1e-9)


def test_flat_snowflake_grows_geometrically():
    theta = 0.4
    ratio = (2 + 1 / math.cos(theta)) / 3
    L = [polyline_length(snowflake_polyline(SnowflakeSpec.constant(theta, g))) for g in range(6)]
    np.testing.assert_allclose(np.array(L[1:]) / L[:-1], ratio, rtol=1e-12)


def test_invalid_specs():
    with pytest.raises(ValueError):
        SnowflakeSpec.constant(math.pi / 3, 1)
    with pytest.raises(ValueError):
        SnowflakeSpec.constant(-0.1, 1)
    with pytest.raises(ValueError):
        SnowflakeSpec((0.1,), 2)
    with pytest.raises(ValueError):
        SnowflakeSpec((), -1)


def test_spec_round_trip():
    spec = SnowflakeSpec.harmonic(0.2, 4, power=2.0)
    assert SnowflakeSpec.from_dict(spec.to_dict()) == spec


# ------------------------------------------------------------------ ball collections

def test_segment_ball_count():
    bc = polyline_to_balls([[0.0, 0.0], [1.0, 0.0]], 2, 0.25)
    assert np.all(bc.radii == 1 / 16)
    expect = math.floor(1.8 / (1 / 8)) + 1
    assert abs(len(bc) - expect) <= 1
    assert brute_disjoint(bc)


def test_coarse_scale_rejected():
    with pytest.raises(ValueError):
        polyline_to_balls([[0.4, 0.0], [0.6, 0.0]], 0, 0.5)
    with pytest.raises(ValueError):
        polyline_to_balls([[0.0, 0.0], [1.0, 0.0]], 2, 1.0)


def test_zero_generation_and_flat_subdivision_agree():
    a = snowflake_balls(SnowflakeSpec((), 0), 3)
    b = snowflake_balls(SnowflakeSpec.constant(0.0, 3), 3)
    np.testing.assert_allclose(a.centers, b.centers, atol=1e-12)
    np.testing.assert_array_equal(a.radii, b.radii)


def test_lattice_example():
    bc = plane_lattice_balls(1, 2, 2, 0.5)
    np.testing.assert_array_equal(bc.centers, [[-1, 0], [-0.5, 0], [0, 0], [0.5, 0], [1, 0]])
    assert np.all(bc.radii == 0.25) and brute_disjoint(bc)
    assert flatness_sup(measure_from_balls(bc, 1), rho=0.5).J_sup == 0.0
    with pytest.raises(ValueError):
        plane_lattice_balls(2, 2, 1, 0.5)


def test_lattice_k2_in_r3():
    bc = plane_lattice_balls(2, 3, 2, 0.25)
    assert np.all(bc.centers[:, 2] == 0) and brute_disjoint(bc)
    assert np.all(np.linalg.norm(bc.centers, axis=1) <= 1 + 1e-12)


def test_graph_with_zero_amplitude_is_the_lattice():
    a = perturbed_graph_balls(0.0, 3, 3, 0.25)
    b = plane_lattice_balls(1, 2, 3, 0.25)
    np.testing.assert_array_equal(a.centers, b.centers)
    with pytest.raises(ValueError):
        perturbed_graph_balls(-0.1, 3, 3, 0.25)


def test_graph_flatness_positive():
    mu = measure_from_balls(perturbed_graph_balls(0.05, 3, 4, 0.25), 1)
    assert flatness_sup(mu).J_sup > 0


@pytest.mark.parametrize("make", [
    lambda: snowflake_balls(SnowflakeSpec.constant(0.3, 4), 4),
    lambda: snowflake_balls(SnowflakeSpec.harmonic(0.5, 5), 5, 1 / 3),
    lambda: perturbed_graph_balls(0.1, 2, 4, 0.25),
    lambda: plane_lattice_balls(2, 4, 2, 0.25),
])
def test_collections_certified_and_deterministic(make):
    a, b = make(), make()
    assert a.certified and brute_disjoint(a)
    np.testing.assert_array_equal(a.centers, b.centers)
    np.testing.assert_array_equal(a.radii, b.radii)
    assert np.all(np.linalg.norm(a.centers, axis=1) <= 1 + 1e-12)


@given(st.integers(0, 10_000), st.floats(0.05, 0.5))
def test_greedy_separated_is_maximal(seed, sep):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (int(rng.integers(1, 200)), 2))
    keep = greedy_separated(pts, sep)
    chosen = pts[keep]
    d = np.linalg.norm(chosen[:, None] - chosen[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert np.all(d >= sep - 1e-12)
    rest = np.linalg.norm(pts[:, None] - chosen[None], axis=-1).min(1)
    assert np.all(rest < sep + 1e-12)


def test_polyline_csv_round_trip(tmp_path):
    v = snowflake_polyline(SnowflakeSpec.harmonic(0.3, 3))
    write_polyline_csv(v, tmp_path / "p.csv")
    np.testing.assert_array_equal(read_polyline_csv(tmp_path / "p.csv"), v)
