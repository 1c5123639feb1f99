import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import toy_prior
from hypersmc.experiments import baselines, study
from hypersmc.experiments.baselines import (baseline_eb_toy, baseline_fb_clg, baseline_fb_toy,
                                            grid_theta_posterior)
from hypersmc.experiments.metrics import (DipoleEstimate, dipole_estimators, ospa,
                                          weighted_kmeans)
from hypersmc.experiments.study import (StudySpec, data_digest, error_columns,
                                        replicate_seeds, run_study, summarize)
from hypersmc.hyper import HyperPrior
from hypersmc.models.clg import ClgModel, VoxelGrid, generate_clg_data
from hypersmc.models.toy import generate_toy_data

points3 = st.lists(st.tuples(*[st.floats(-10, 10)] * 3), min_size=0, max_size=5)


def cube_positions(n_side=10):
    ax = np.arange(n_side) - (n_side - 1) / 2
    gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def voxel_at(positions, xyz):
    return int(np.argmin(np.linalg.norm(positions - np.asarray(xyz), axis=1)))


class TestOspa:
    def test_identical_sets_any_order(self):
        a = [(0, 0, 0), (1, 2, 3), (-4, 0, 1)]
        assert ospa(a, a[::-1]) == 0.0

    def test_single_best_match(self):
        assert ospa([(0, 0, 0)], [(3, 0, 0), (100, 0, 0)]) == pytest.approx(3.0, abs=1e-12)

    def test_empty_sets(self):
        assert ospa([], [(1, 2, 3)]) == 0.0
        assert ospa([(1, 2, 3)], []) == 0.0
        assert ospa([], []) == 0.0

    def test_random_four_against_all_permutations(self, rng):
        for _ in range(20):
            a, b = rng.normal(size=(4, 3)) * 3, rng.normal(size=(4, 3)) * 3
            np.testing.assert_allclose(ospa(a, b), oracles.brute_force_ospa(a, b), rtol=1e-12)

    @given(points3, points3)
    @settings(max_examples=60, deadline=None)
    def test_matches_enumeration_and_is_symmetric(self, a, b):
        ref = oracles.brute_force_ospa(a, b)
        np.testing.assert_allclose(ospa(a, b), ref, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(ospa(b, a), ref, rtol=1e-9, atol=1e-9)

    @given(points3, st.randoms(use_true_random=False))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariant_and_zero_on_self(self, a, r):
        b = list(a)
        r.shuffle(b)
        assert ospa(a, a) == 0.0
        np.testing.assert_allclose(ospa(a, b), 0.0, atol=1e-12)

    @given(st.floats(0.1, 5.0), st.floats(0.0, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_monotone_when_matched_point_moves_away(self, gap, extra):
        truth = [(0.0, 0.0, 0.0), (50.0, 0.0, 0.0)]
        near = ospa([(gap, 0.0, 0.0)], truth)
        far = ospa([(gap + extra, 0.0, 0.0)], truth)
        assert far >= near - 1e-12


class TestWeightedKmeans:
    def test_separated_blobs(self, rng):
        pts = np.vstack([rng.normal(0, 0.3, (20, 3)), rng.normal(10, 0.3, (20, 3))])
        labels, centres = weighted_kmeans(pts, np.ones(40), 2)
        assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1
        assert labels[0] != labels[-1]
        np.testing.assert_allclose(np.sort(centres[:, 0]), [0, 10], atol=0.3)

    def test_heaviest_point_seeds_first_cluster(self):
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [9, 0, 0]])
        labels, _ = weighted_kmeans(pts, np.array([1.0, 5.0, 1.0]), 1)
        np.testing.assert_array_equal(labels, 0)

    def test_deterministic(self, rng):
        pts = rng.normal(size=(30, 3))
        w = rng.random(30)
        a = weighted_kmeans(pts, w, 3)
        b = weighted_kmeans(pts, w, 3)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_too_many_clusters(self):
        with pytest.raises(ValueError):
            weighted_kmeans(np.zeros((2, 3)), np.ones(2), 3)


class TestDipoleEstimators:
    positions = cube_positions()

    def test_identical_single_dipole_particles(self):
        v = 437
        d = np.ones(25, dtype=int)
        locs = np.full((25, 10), -1)
        locs[:, 0] = v
        est = dipole_estimators(d, locs, np.full(25, 1 / 25), self.positions)
        assert est.d_hat == 1
        assert est.voxels == [v]
        np.testing.assert_array_equal(est.locations, self.positions[[v]])

    def test_two_clusters_against_enumeration(self, rng):
        pos = self.positions
        left = [voxel_at(pos, c) for c in ([-3.5, 0.5, 0.5], [-3.5, 1.5, 0.5],
                                           [-2.5, 0.5, 0.5], [-3.5, 0.5, 1.5])]
        right = [voxel_at(pos, c) for c in ([3.5, -0.5, 0.5], [3.5, -1.5, 0.5],
                                            [2.5, -0.5, -0.5])]
        n = 10
        locs = np.full((n, 10), -1)
        locs[:, 0] = rng.choice(left, n)
        locs[:, 1] = rng.choice(right, n)
        w = rng.random(n)
        w /= w.sum()
        est = dipole_estimators(np.full(n, 2), locs, w, pos)
        vox = locs[:, :2].ravel()
        mass = np.bincount(vox, weights=np.repeat(w, 2), minlength=len(pos))
        support = np.flatnonzero(mass > 0)
        modes = oracles.two_cluster_modes(pos[support], mass[support])
        assert est.d_hat == 2
        assert sorted(est.voxels) == sorted(int(support[k]) for k in modes)

    def test_tie_in_number_of_dipoles_prefers_smaller(self):
        d = np.array([1, 2])
        locs = np.full((2, 10), -1)
        locs[0, 0] = 5
        locs[1, :2] = [5, 900]
        est = dipole_estimators(d, locs, np.array([0.5, 0.5]), self.positions)
        assert est.d_hat == 1

    def test_empty_configuration_wins(self):
        d = np.array([0, 0, 1])
        locs = np.full((3, 10), -1)
        locs[2, 0] = 3
        est = dipole_estimators(d, locs, np.array([0.4, 0.4, 0.2]), self.positions)
        assert est.d_hat == 0
        assert est.voxels == []
        assert est.locations.shape == (0, 3)

    def test_number_of_locations_matches_count(self):
        with pytest.raises(ValueError):
            DipoleEstimate(2, [1], np.zeros((1, 3)))


@pytest.fixture(scope="module")
def fb_runs(toy_data):
    toy, _ = toy_data
    return [baseline_fb_toy(toy, toy_prior(), seed=s)[1] for s in range(10)]


class TestBaselineFbToy:
    def test_noise_free_data_concentrates_at_truth(self):
        toy, truth = generate_toy_data(3, noise=False)
        prior = HyperPrior.gamma(1.0, 0.005, (0.05, 10.0))
        _, snap = baseline_fb_toy(toy, prior, seed=1)
        assert truth["mu_true"] == 0.0
        assert abs(np.dot(snap.weights, snap.particles.mu)) < 0.05

    def test_theta_mean_matches_quadrature(self, fb_runs, toy_data):
        toy, _ = toy_data
        ref = oracles.toy_joint_posterior(toy.times, toy.data, 2.0, 0.2, (0.05, 10.0))
        pm = np.array([np.dot(s.weights, np.exp(s.particles.log_theta)) for s in fb_runs])
        se = pm.std(ddof=1) / math.sqrt(len(pm))
        assert abs(pm.mean() - ref["mean_theta"]) < 3 * se

    def test_same_seed_identical_trace(self, toy_data):
        toy, _ = toy_data
        a, _ = baseline_fb_toy(toy, toy_prior(), n_iterations=50, seed=4)
        b, _ = baseline_fb_toy(toy, toy_prior(), n_iterations=50, seed=4)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_theta_stays_in_support(self, fb_runs):
        for snap in fb_runs:
            th = np.exp(snap.particles.log_theta)
            assert np.all((th >= 0.05) & (th <= 10.0))


class TestBaselineEbToy:
    def test_planted_peak_found_within_one_step(self, toy_data, monkeypatch):
        toy, truth = toy_data
        peak = 0.7321

        def planted(toy, prior, grid, n_mu=100):
            return -((grid - peak) / 1e-3) ** 2

        monkeypatch.setattr(baselines, "grid_theta_posterior", planted)
        res = baseline_eb_toy(toy, toy_prior(), truth["theta_true"], n_iterations=20)
        step = res.theta_grid[1] - res.theta_grid[0]
        assert abs(res.theta_map - peak) <= step

    def test_grid_average_against_loop(self, toy_data):
        toy, truth = toy_data
        grid = np.linspace(0.05, 50 * truth["theta_true"], 500)
        ref = oracles.grid_average_log_posterior(toy.times, toy.data, grid, 2.0, 0.2)
        got = grid_theta_posterior(toy, toy_prior(), grid)
        diff = got - ref
        # equal up to the normalizing constant of the truncated prior
        np.testing.assert_allclose(diff, diff[0], atol=1e-9)

    def test_map_within_one_step_of_quadrature_map(self, toy_data):
        toy, truth = toy_data
        res = baseline_eb_toy(toy, toy_prior(), truth["theta_true"], n_iterations=20)
        ref = oracles.toy_joint_posterior(toy.times, toy.data, 2.0, 0.2, (0.05, 10.0))
        step = res.theta_grid[1] - res.theta_grid[0]
        assert abs(res.theta_map - ref["map_theta"]) <= step
        assert res.theta_grid[0] == pytest.approx(toy.theta_star)
        assert res.theta_grid[-1] == pytest.approx(50 * truth["theta_true"])
        assert len(res.theta_grid) == 500

    def test_conditional_run_matches_quadrature(self, toy_data):
        toy, truth = toy_data
        pms, theta_map = [], None
        for s in range(10):
            res = baseline_eb_toy(toy, toy_prior(), truth["theta_true"], seed=s)
            snap = res.trace.records[-1].snapshot
            pms.append(np.dot(snap.weights, snap.particles.mu))
            theta_map = res.theta_map
            assert res.trace.records[-1].theta == pytest.approx(theta_map)
        ref = oracles.toy_posterior_mean_mu(toy.times, toy.data, theta_map)
        pms = np.array(pms)
        assert abs(pms.mean() - ref) < 3 * pms.std(ddof=1) / math.sqrt(len(pms))

    def test_ties_resolve_to_smaller_theta(self, toy_data, monkeypatch):
        toy, truth = toy_data
        monkeypatch.setattr(baselines, "grid_theta_posterior",
                            lambda toy, prior, grid, n_mu=100: np.zeros_like(grid))
        res = baseline_eb_toy(toy, toy_prior(), truth["theta_true"], n_iterations=5)
        assert res.theta_map == res.theta_grid[0]

    def test_input_model_keeps_its_ladder(self, toy_data):
        toy, truth = toy_data
        before = toy.theta_star
        baseline_eb_toy(toy, toy_prior(), truth["theta_true"], n_iterations=5)
        assert toy.theta_star == before


class TestBaselineFbClg:
    def test_runs_and_counts_evaluations(self):
        grid = VoxelGrid.desk(n_side=4, n_sensors=12, sensor_radius=8.0, gain=100.0)
        data, truth = generate_clg_data(1, grid, n_dipoles=1, min_separation=0.0)
        model = ClgModel(grid, data, 0.025)
        prior = HyperPrior.gamma(2.0, 0.1, (0.025, 2.0))
        trace, snap = baseline_fb_clg(model, prior, n_particles=20, n_iterations=10)
        assert len(trace.records) == 11
        assert model.n_evals > 0
        th = np.exp(snap.particles.log_theta)
        assert np.all((th >= 0.025) & (th <= 2.0))
        np.testing.assert_allclose(snap.weights.sum(), 1.0)


class TestStudySpec:
    def test_defaults(self):
        toy = StudySpec()
        assert toy.methods == ["PropEB", "PropFB", "BaselineEB", "BaselineFB"]
        assert toy.n_iterations == 500
        assert toy.alpha1 == pytest.approx(2.5e-5)
        clg = StudySpec(model="clg")
        assert clg.methods == ["PropEB", "PropFB", "BaselineFB"]
        assert clg.n_iterations == 100
        assert clg.theta_star == 0.025

    def test_json_round_trip(self):
        spec = StudySpec(n_replicates=3, base_seed=9, methods=["PropFB"])
        again = StudySpec.from_json(json.loads(json.dumps(spec.to_json())))
        assert again == spec

    @pytest.mark.parametrize("bad", [{"model": "nope"}, {"methods": ["BaselineEB"],
                                                          "model": "clg"},
                                     {"n_replicates": 0}, {"n_particles": 1},
                                     {"theta_star": 11.0}, {"unknown_key": 1}])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            StudySpec.from_json(bad)

    def test_hyper_prior_is_shape_scale_gamma(self):
        prior = StudySpec().hyper_prior()
        assert prior.support == (0.05, 10.0)
        th = np.array([0.1, 0.2, 0.4])
        diff = prior.logpdf(th) - oracles.gamma_logpdf(th, 2.0, 0.2)
        np.testing.assert_allclose(diff, diff[0], atol=1e-12)

    def test_replicate_seeds_distinct(self):
        seeds = [s for i in range(200) for s in replicate_seeds(0, i)]
        assert len(set(seeds)) == len(seeds)
        assert replicate_seeds(3, 7) == replicate_seeds(3, 7)


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def toy_study(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    spec = StudySpec(n_replicates=2, base_seed=5, output_dir=str(out))
    return spec, run_study(spec)


class TestRunStudy:
    def test_summary_schema(self, toy_study):
        spec, res = toy_study
        cols = error_columns(spec)
        assert len(cols) == 16
        rows = _read(f"{spec.output_dir}/summary.csv")
        assert list(rows[0]) == ["stat"] + cols
        assert [r["stat"] for r in rows] == ["q1", "median", "q3", "n"]
        assert all(int(v) == 2 for k, v in rows[3].items() if k != "stat")

    def test_rows_complete(self, toy_study):
        spec, res = toy_study
        rows = _read(f"{spec.output_dir}/per_replicate.csv")
        assert len(rows) == 2
        for r in rows:
            assert r["status"] == "ok"
            assert int(r["prop_extra_evals"]) == 0
            for c in error_columns(spec):
                assert float(r[c]) >= 0
        times = _read(f"{spec.output_dir}/timings.csv")
        assert all(float(t[m]) > 0 for t in times for m in spec.methods)

    def test_every_method_sees_the_generated_dataset(self, toy_study):
        spec, res = toy_study
        for row in res.rows:
            toy, _ = generate_toy_data(row["data_seed"], theta_star=spec.theta_star)
            assert row["data_digest"] == data_digest(toy.data)

    def test_proposed_estimates_share_one_run(self, toy_study):
        _, res = toy_study
        for row in res.rows:
            assert row["PropEB_theta_map"] == row["PropFB_theta_map"]

    def test_single_replicate_deterministic(self, tmp_path):
        rows = []
        for k in range(2):
            spec = StudySpec(n_replicates=1, base_seed=11, output_dir=str(tmp_path / str(k)))
            run_study(spec)
            rows.append((tmp_path / str(k) / "per_replicate.csv").read_bytes())
        assert rows[0] == rows[1]
        assert len(_read(tmp_path / "0" / "per_replicate.csv")) == 1

    def test_failed_replicate_recorded(self, tmp_path, monkeypatch):
        real = study.toy_replicate

        def flaky(spec, i):
            if i == 1:
                raise RuntimeError("boom")
            return real(spec, i)

        monkeypatch.setattr(study, "toy_replicate", flaky)
        spec = StudySpec(n_replicates=3, n_iterations=30, output_dir=str(tmp_path))
        res = run_study(spec)
        status = [r["status"] for r in res.rows]
        assert status[0] == status[2] == "ok"
        assert status[1].startswith("error: RuntimeError")
        n_row = res.summary[-1]
        assert all(v == 2 for k, v in n_row.items() if k != "stat")

    def test_replicate_subset_and_jobs(self, tmp_path):
        a = StudySpec(n_replicates=3, n_iterations=30, output_dir=str(tmp_path / "a"))
        b = StudySpec(n_replicates=3, n_iterations=30, output_dir=str(tmp_path / "b"), jobs=2)
        run_study(a, replicates=[2])
        run_study(b, replicates=[2])
        assert ((tmp_path / "a" / "per_replicate.csv").read_bytes()
                == (tmp_path / "b" / "per_replicate.csv").read_bytes())

    def test_clg_replicate_schema(self, tmp_path):
        spec = StudySpec(model="clg", n_replicates=1, n_iterations=20, n_particles=30,
                         output_dir=str(tmp_path))
        res = run_study(spec)
        row = res.rows[0]
        assert row["status"] == "ok"
        assert row["prop_extra_evals"] == 0
        for m in spec.methods:
            assert row[f"{m}_ospa"] >= 0
            assert row[f"{m}_d_hat"] == len(row[f"{m}_voxels"].split())
        assert len(res.columns) == 12


class TestSummarize:
    def test_quartiles(self):
        rows = [{"status": "ok", "x": float(v)} for v in range(1, 6)]
        rows.append({"status": "error: X"})
        out = summarize(rows, ["x"])
        assert [r["x"] for r in out] == [2.0, 3.0, 4.0, 5]

    def test_all_failed(self):
        out = summarize([{"status": "error: X"}], ["x"])
        assert math.isnan(out[1]["x"])
        assert out[3]["x"] == 0
