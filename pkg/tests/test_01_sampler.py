"""
Sampler Tests - simulation, S, G, near-sparsity and the dataset CSV.
"""

import numpy as np
import pytest

from sps_grf.errors import DimensionMismatchError, DuplicateLocationError, FactorizationError, InvalidParameterError
from sps_grf.kernels import CovarianceParams, KernelFamily, KernelTag, LocationSet, covariance_matrix
from sps_grf.sampler import (
    SpatialDataset,
    decay_profile,
    derive_seed,
    distance_to_hull,
    distance_weights,
    factorize,
    near_sparsity_fraction,
    precision_vs_distance,
    read_dataset,
    read_queries,
    rng_stream,
    sample_covariance,
    sample_grf,
    sample_locations,
    true_precision,
    write_dataset,
    write_queries,
)

from .conftest import random_locations, se_params

MATERN_TABLE = CovarianceParams(KernelFamily(KernelTag.MATERN32), (10.0,), 1.0, 0.0)


def _mean_fractions(n, draws, eps_grid):
    """Near-sparsity fractions of P* and C* averaged over `draws` location sets on [-50, 50]^2."""
    totals = {"precision": dict.fromkeys(eps_grid, 0.0), "covariance": dict.fromkeys(eps_grid, 0.0)}
    for seed in range(draws):
        locs = sample_locations(n, 2, derive_seed(17, n, seed), domain=(-50.0, 50.0))
        mats = {"precision": true_precision(locs, MATERN_TABLE), "covariance": covariance_matrix(locs, MATERN_TABLE)}
        for name, M in mats.items():
            for eps in eps_grid:
                totals[name][eps] += near_sparsity_fraction(M, eps) / draws
    return totals


class TestStreams:
    """Keyed generators and derived seeds."""

    def test_same_keys_same_stream(self):
        a = rng_stream(7, 3, "split").standard_normal(5)
        b = rng_stream(7, 3, "split").standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_different_purpose_different_stream(self):
        a = rng_stream(7, 3, "split").standard_normal(5)
        b = rng_stream(7, 3, "field").standard_normal(5)
        assert not np.array_equal(a, b)

    def test_derived_seeds_distinct(self):
        seeds = {derive_seed(11, k) for k in range(50)}
        assert len(seeds) == 50
        assert derive_seed(11, 4) == derive_seed(11, 4)


class TestSampleGrf:
    """Draws from N(0, C(theta))."""

    def test_pure_nugget_moments(self, rng):
        locs = random_locations(rng, 5)
        params = se_params(2.0, 0.0, 1.0)
        ds = sample_grf(locs, params, 10000, seed=3)
        var = ds.Y.var(axis=1)
        assert np.all((var > 0.95) & (var < 1.05)), var
        corr = np.corrcoef(ds.Y)
        off = corr[~np.eye(5, dtype=bool)]
        assert np.all(np.abs(off) < 0.05), off

    def test_deterministic(self, rng):
        locs = random_locations(rng, 12)
        a = sample_grf(locs, se_params(), 3, seed=99)
        b = sample_grf(locs, se_params(), 3, seed=99)
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_sample_covariance_converges(self, rng):
        locs = random_locations(rng, 20)
        params = se_params(4.0, 8.0, 4.0)
        S = sample_covariance(sample_grf(locs, params, 50000, seed=1))
        C = covariance_matrix(locs, params)
        assert np.linalg.norm(S - C) / np.linalg.norm(C) < 0.05

    def test_average_over_seeds_is_unbiased(self, rng):
        locs = random_locations(rng, 8)
        params = se_params(3.0, 2.0, 0.5)
        S = np.mean([sample_covariance(sample_grf(locs, params, 1000, seed=s)) for s in range(100)], axis=0)
        C = covariance_matrix(locs, params)
        assert np.linalg.norm(S - C) / np.linalg.norm(C) < 0.05

    def test_zero_nugget_dense_points_use_jitter(self):
        locs = LocationSet(np.linspace(0.0, 1.0, 60)[:, None])
        ds = sample_grf(locs, se_params(50.0, 1.0, 0.0), 2, seed=0)
        assert np.all(np.isfinite(ds.Y))

    def test_rejects_zero_realizations(self, rng):
        with pytest.raises(InvalidParameterError):
            sample_grf(random_locations(rng, 3), se_params(), 0, seed=0)


class TestFactorize:
    """Cholesky with one jittered retry."""

    def test_indefinite_without_jitter_fails(self):
        with pytest.raises(FactorizationError):
            factorize(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_jitter_rescues_singular(self):
        c, lower = factorize(np.ones((3, 3)), jitter=1e-8)
        assert lower


class TestSampleCovariance:
    """S = Y Y^T / N."""

    def test_outer_product(self):
        ds = SpatialDataset(LocationSet([[0.0], [1.0]]), [[1.0], [2.0]])
        np.testing.assert_array_equal(sample_covariance(ds), [[1.0, 2.0], [2.0, 4.0]])

    def test_zero_data(self):
        ds = SpatialDataset(LocationSet([[0.0], [1.0], [2.0]]), np.zeros((3, 4)))
        np.testing.assert_array_equal(sample_covariance(ds), np.zeros((3, 3)))

    def test_average_of_outer_products(self):
        ds = SpatialDataset(LocationSet([[0.0], [1.0]]), [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(sample_covariance(ds), [[0.5, 0.0], [0.0, 0.5]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            SpatialDataset(LocationSet([[0.0], [1.0]]), np.zeros((3, 1)))


class TestDistanceWeights:
    """G off the diagonal is distance, on it the nearest-neighbour distance."""

    def test_two_points(self):
        W = distance_weights(LocationSet([[0.0, 0.0], [3.0, 0.0]]))
        np.testing.assert_array_equal(W.G, [[3.0, 3.0], [3.0, 3.0]])
        assert W.G_min == 3.0 and W.G_max == 3.0

    def test_colinear(self):
        W = distance_weights(LocationSet([[0.0], [1.0], [3.0]]))
        assert (W.G[0, 1], W.G[0, 2], W.G[1, 2]) == (1.0, 3.0, 2.0)
        np.testing.assert_array_equal(np.diag(W.G), [1.0, 1.0, 2.0])
        assert W.G_min == 1.0 and W.G_max == 3.0

    def test_duplicate_rejected(self):
        with pytest.raises(DuplicateLocationError):
            distance_weights([[0.0, 0.0], [0.0, 0.0]])

    def test_minimum_sits_off_diagonal(self, rng):
        W = distance_weights(random_locations(rng, 30))
        np.testing.assert_array_equal(W.G, W.G.T)
        off = W.G[~np.eye(30, dtype=bool)]
        assert W.G_min == off.min() > 0


class TestNearSparsity:
    """Share of scaled off-diagonals above eps."""

    def test_identity(self):
        assert near_sparsity_fraction(np.eye(4), 0.1) == 0.0

    def test_equal_off_diagonals(self):
        assert near_sparsity_fraction(np.array([[1.0, 0.3], [0.3, 1.0]]), 0.5) == 1.0

    def test_needs_two_points(self):
        with pytest.raises(InvalidParameterError):
            near_sparsity_fraction(np.eye(1), 0.1)

    def test_precision_sparser_than_covariance(self):
        eps_grid = (0.1, 0.01, 0.001)
        small = _mean_fractions(10, 100, eps_grid)
        large = _mean_fractions(100, 20, eps_grid)
        for eps in eps_grid:
            assert small["precision"][eps] < small["covariance"][eps], eps
            assert large["precision"][eps] < large["covariance"][eps], eps
            assert large["precision"][eps] < small["precision"][eps], eps
        assert large["precision"][0.1] < 0.05


    def test_precision_decays_with_distance(self):
        frame = precision_vs_distance(sample_locations(100, 2, 0, domain=(-50.0, 50.0)), MATERN_TABLE)
        near = frame.nsmallest(len(frame) // 10, "distance")["scaled"].median()
        far = frame.nlargest(len(frame) // 10, "distance")["scaled"].median()
        assert far < near

    def test_decay_profile_sorted(self, rng):
        prof = decay_profile(true_precision(random_locations(rng, 30), se_params(2.0, 1.0, 0.5)), top=50)
        assert prof.size == 50
        assert prof[0] == 1.0
        assert np.all(np.diff(prof) <= 0)


class TestHullDistance:
    """Distance from queries to the convex hull of the training points."""

    SQUARE = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]

    def test_inside_and_on_boundary_are_zero(self):
        dist = distance_to_hull(LocationSet(self.SQUARE), [[0.5, 0.5], [0.2, 0.9], [1.0, 0.3]])
        np.testing.assert_array_equal(dist, 0.0)

    def test_outside_edge_and_corner(self):
        dist = distance_to_hull(self.SQUARE, [[2.0, 0.5], [0.5, -0.25], [2.0, 2.0]])
        np.testing.assert_allclose(dist, [1.0, 0.25, np.sqrt(2.0)], atol=1e-5)

    def test_ring_outside_ball(self):
        inner = sample_locations(200, 3, 2, "ball", radius=4.0)
        ring = sample_locations(20, 3, 2, "shell", radius=6.0, inner_radius=4.0)
        dist = distance_to_hull(inner, ring.X)
        radii = np.linalg.norm(ring.X, axis=1)
        assert (dist > 0).all()
        assert (dist >= radii - 4.0 - 1e-6).all()
        assert (dist <= radii).all()
        assert distance_to_hull(inner, [[0.0, 0.0, 0.0]])[0] == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            distance_to_hull(self.SQUARE, [[0.0, 0.0, 0.0]])



class TestLocations:
    """Box, ball and shell designs."""

    def test_box(self):
        locs = sample_locations(200, 3, 1, "box", (0.0, 10.0))
        assert locs.X.min() >= 0.0 and locs.X.max() <= 10.0

    def test_ball_and_shell(self):
        ball = np.linalg.norm(sample_locations(200, 2, 1, "ball", radius=3.0).X, axis=1)
        assert ball.max() <= 3.0 + 1e-12
        shell = np.linalg.norm(sample_locations(200, 2, 1, "shell", radius=4.5, inner_radius=3.0).X, axis=1)
        assert shell.min() >= 3.0 - 1e-12 and shell.max() <= 4.5 + 1e-12

    def test_unknown_design(self):
        with pytest.raises(InvalidParameterError):
            sample_locations(5, 2, 0, "torus")


class TestCsv:
    """Dataset and query files."""

    def test_dataset_round_trip(self, tmp_path, rng):
        ds = sample_grf(random_locations(rng, 15, d=3), CovarianceParams(
            KernelFamily(KernelTag.EXPONENTIAL), (2.0,), 1.0, 0.1), 4, seed=5)
        path = tmp_path / "data.csv"
        write_dataset(ds, path)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == "x1,x2,x3,y1,y2,y3,y4"
        again = read_dataset(path)
        np.testing.assert_array_equal(again.locs.X, ds.locs.X)
        np.testing.assert_array_equal(again.Y, ds.Y)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(DimensionMismatchError):
            read_dataset(path)

    def test_query_dimension_checked(self, tmp_path):
        path = tmp_path / "q.csv"
        write_queries(np.array([[1.0, 2.0]]), path)
        np.testing.assert_array_equal(read_queries(path, 2), [[1.0, 2.0]])
        with pytest.raises(DimensionMismatchError):
            read_queries(path, 3)
