import math

import numpy as np
import pytest

import mcdl
from mcdl.sampler import sweep_transition_matrix
from conftest import joint_table, iter_configs

# two spins coupled at 0.4 agree with probability e^0.8 / (1 + e^0.8),
# from enumerating the four configurations
TWO_NODE_AGREE = 1.0 / (1.0 + math.exp(-0.8))


def two_node_model(edge=0.4):
    g = mcdl.make_graph(2, [(0, 1)])
    return mcdl.PairwiseModel(graph=g, node_params=np.zeros(2), edge_params=np.array([edge]))


class TestGibbsSweep:
    def test_deterministic(self, grid3):
        model = mcdl.homogeneous_model(grid3, 0.4)
        x = np.ones(9, dtype=np.int8)
        a = mcdl.gibbs_sweep(model, x, np.random.default_rng(123))
        b = mcdl.gibbs_sweep(model, x, np.random.default_rng(123))
        assert np.array_equal(a, b)

    def test_zero_model_mean_spin(self):
        g = mcdl.build_grid(4, 4)
        model = mcdl.homogeneous_model(g, 0.0)
        samples = mcdl.sample_sequence(model, mcdl.resolve_subset(g, "all"),
                                       n=500, burn_in=20, spacing=1, seed=5)
        draws = samples.configs.size
        mean = float(samples.configs.astype(float).mean())
        assert abs(mean) < 4.0 / math.sqrt(draws)

    def test_two_node_agreement_frequency(self):
        model = two_node_model(0.4)
        geo = mcdl.subset_geometry(model.graph, [0, 1])
        samples = mcdl.sample_sequence(model, geo, n=4000, burn_in=50, spacing=3, seed=17)
        agree = (samples.configs[:, 0] == samples.configs[:, 1]).astype(float)
        freq = float(agree.mean())
        se = float(agree.std(ddof=1)) / math.sqrt(agree.size)
        assert abs(freq - TWO_NODE_AGREE) < 3 * se

    def test_moment_stability_across_halves(self):
        g = mcdl.build_grid(4, 4)
        model = mcdl.homogeneous_model(g, 0.3)
        geo = mcdl.resolve_subset(g, "all")
        samples = mcdl.sample_sequence(model, geo, n=2000, burn_in=100, spacing=2, seed=23)
        x = samples.configs.astype(float)
        # empirical moment of one bulk edge, first half vs second half
        u, v = g.edges[len(g.edges) // 2]
        prod = x[:, u] * x[:, v]
        half = prod.size // 2
        a, b = prod[:half], prod[half:]
        pooled_se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        assert abs(a.mean() - b.mean()) < 4 * pooled_se


class TestDetailedBalance:
    @pytest.mark.parametrize("edges,n", [([(0, 1)], 2), ([(0, 1), (1, 2)], 3)])
    def test_site_kernels_preserve_joint(self, edges, n):
        rng = np.random.default_rng(31)
        g = mcdl.make_graph(n, edges)
        model = mcdl.PairwiseModel(graph=g,
                                   node_params=rng.uniform(-0.8, 0.8, n),
                                   edge_params=rng.uniform(-0.8, 0.8, len(edges)))
        table = joint_table(model)
        pi = np.array([table[x] for x in iter_configs(n)])
        for K in sweep_transition_matrix(model, per_site=True):
            np.testing.assert_allclose(pi @ K, pi, atol=1e-10)

    def test_full_sweep_preserves_joint(self):
        rng = np.random.default_rng(32)
        g = mcdl.make_graph(3, [(0, 1), (1, 2), (0, 2)])
        model = mcdl.PairwiseModel(graph=g,
                                   node_params=rng.uniform(-0.5, 0.5, 3),
                                   edge_params=rng.uniform(-0.5, 0.5, 3))
        table = joint_table(model)
        pi = np.array([table[x] for x in iter_configs(3)])
        K = sweep_transition_matrix(model)
        np.testing.assert_allclose(pi @ K, pi, atol=1e-10)


class TestSampleSequence:
    def test_shapes_and_provenance(self, small_row_samples):
        model, geometry, samples = small_row_samples
        assert samples.n == 80
        assert samples.configs.shape == (80, geometry.closure_nodes.size)
        prov = samples.provenance
        assert prov["seed"] == 11
        assert prov["burn_in_sweeps"] == 300
        assert prov["spacing_sweeps"] == 5
        assert prov["sampler_scan_order"] == "raster"
        assert prov["rng"] == "numpy-pcg64"

    def test_n1_burnin0_is_uniform_initializer(self, grid3):
        model = mcdl.homogeneous_model(grid3, 5.0)  # strong coupling, but no sweeps run
        geo = mcdl.resolve_subset(grid3, "all")
        samples = mcdl.sample_sequence(model, geo, n=1, burn_in=0, spacing=1, seed=9)
        rng = np.random.default_rng(9)
        expected = (2 * rng.integers(0, 2, size=9) - 1).astype(np.int8)
        assert np.array_equal(samples.configs[0], expected)

    def test_reproducible(self, grid3):
        model = mcdl.homogeneous_model(grid3, 0.4)
        geo = mcdl.resolve_subset(grid3, "middle-row")
        a = mcdl.sample_sequence(model, geo, n=10, burn_in=5, spacing=2, seed=4)
        b = mcdl.sample_sequence(model, geo, n=10, burn_in=5, spacing=2, seed=4)
        assert np.array_equal(a.configs, b.configs)
        c = mcdl.sample_sequence(model, geo, n=10, burn_in=5, spacing=2, seed=5)
        assert not np.array_equal(a.configs, c.configs)

    def test_validation(self, grid3):
        model = mcdl.homogeneous_model(grid3, 0.1)
        geo = mcdl.resolve_subset(grid3, "all")
        with pytest.raises(ValueError):
            mcdl.sample_sequence(model, geo, n=0)
        with pytest.raises(ValueError):
            mcdl.sample_sequence(model, geo, n=1, spacing=0)


class TestSampleFile:
    def test_roundtrip(self, small_row_samples, tmp_path):
        model, geometry, samples = small_row_samples
        path = tmp_path / "run.smp"
        mcdl.write_samples(path, samples, subset_spec="middle-row")
        loaded = mcdl.read_samples(path, model.graph)
        assert np.array_equal(loaded.configs, samples.configs)
        assert np.array_equal(loaded.geometry.subset_nodes, geometry.subset_nodes)
        assert loaded.provenance["subset"] == "middle-row"

    def test_byte_identical_rewrites(self, small_row_samples, tmp_path):
        _, _, samples = small_row_samples
        p1, p2 = tmp_path / "a.smp", tmp_path / "b.smp"
        mcdl.write_samples(p1, samples, subset_spec="middle-row")
        mcdl.write_samples(p2, samples, subset_spec="middle-row")
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path, grid3):
        path = tmp_path / "junk.smp"
        path.write_text("NOT-A-SAMPLE-FILE\n")
        with pytest.raises(ValueError):
            mcdl.read_samples(path, grid3)
