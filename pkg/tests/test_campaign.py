import math

import numpy as np
import pytest

from vitfault import campaign as cp
from vitfault import faultinject as fi
from vitfault import toy, vit

Z95 = 1.959964  # two-sided normal quantile at 95%


def zero_fault_ber(model):
    """Largest-ish BER that still rounds to zero faults on this model."""
    return 1.0 / (100 * 32 * model.param_count)


def one_fault_ber(model):
    return 1.0 / (32 * model.param_count)


class TestIterations:
    def test_closed_form_97(self):
        assert cp.iterations_for_std(0.05, 0.95, 0.01) == 97
        assert math.ceil((Z95 * 0.05 / 0.01) ** 2) == 97

    def test_zero_std_stops_immediately(self):
        assert cp.iterations_for_std(0.0, 0.95, 0.01) == 0

    def test_doubling_half_width_quarters(self):
        assert cp.iterations_for_std(0.05, 0.95, 0.02) == 25  # ceil(97/4 - eps)

    def test_from_samples(self):
        samples = [0.9, 1.0]  # sample std = 0.0707...
        est = cp.required_iterations(samples, 0.95, 0.01)
        s = np.std(samples, ddof=1)
        assert est == math.ceil((Z95 * s / 0.01) ** 2)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            cp.required_iterations([1.0], 0.95, 0.01)

    def test_validation(self):
        with pytest.raises(ValueError):
            cp.iterations_for_std(0.1, 1.5, 0.01)
        with pytest.raises(ValueError):
            cp.iterations_for_std(0.1, 0.95, 0.0)


class TestConfig:
    def test_defaults_valid(self):
        cfg = cp.CampaignConfig()
        assert cfg.ber_grid[0] == pytest.approx(1e-9)
        assert cfg.ber_grid[-1] == pytest.approx(1e-1)
        assert len(cfg.ber_grid) == 25  # 3 per decade inclusive

    def test_grid_must_ascend(self):
        with pytest.raises(ValueError):
            cp.CampaignConfig(ber_grid=(1e-3, 1e-4))

    def test_enum_validation(self):
        with pytest.raises(ValueError):
            cp.CampaignConfig(protection="sometimes")
        with pytest.raises(ValueError):
            cp.CampaignConfig(accuracy_metric="vibes")
        with pytest.raises(ValueError):
            cp.CampaignConfig(injection_mode=fi.FIXED_BIT)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="bogus"):
            cp.CampaignConfig.from_dict({"bogus": 1})

    def test_round_trip_dict(self):
        cfg = cp.CampaignConfig(ber_grid=(1e-6, 1e-5), protection="parity",
                                excluded_bits=frozenset({30}))
        again = cp.CampaignConfig.from_dict(cfg.to_dict())
        assert again == cfg


class TestRunTrial:
    def test_zero_faults_equals_baseline(self, tiny_model, tiny_batch):
        ber = zero_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber,), n_initial=2, n_max=2)
        acc, det = cp.run_trial(tiny_model, tiny_batch, cfg, ber, seed=1)
        assert acc == 1.0
        assert det == 0

    def test_parity_single_flip_detected(self, tiny_model, tiny_batch):
        ber = one_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber,), protection="parity",
                                n_initial=2, n_max=2)
        for seed in range(5):
            acc, det = cp.run_trial(tiny_model, tiny_batch, cfg, ber, seed=seed)
            assert det == 1

    def test_deterministic(self, tiny_model, tiny_batch):
        cfg = cp.CampaignConfig(ber_grid=(1e-4,), protection="parity",
                                n_initial=2, n_max=2)
        a = cp.run_trial(tiny_model, tiny_batch, cfg, 1e-4, seed=7)
        b = cp.run_trial(tiny_model, tiny_batch, cfg, 1e-4, seed=7)
        assert a == b

    def test_trial_isolation_weights_untouched(self, tiny_model, tiny_batch):
        before = {n: w.tobytes() for n, w in tiny_model.weights.items()}
        cfg = cp.CampaignConfig(ber_grid=(1e-3,), protection="parity",
                                n_initial=2, n_max=2)
        cp.run_trial(tiny_model, tiny_batch, cfg, 1e-3, seed=3)
        cfg_off = cp.CampaignConfig(ber_grid=(1e-3,), n_initial=2, n_max=2)
        cp.run_trial(tiny_model, tiny_batch, cfg_off, 1e-3, seed=3)
        for n, w in tiny_model.weights.items():
            assert w.tobytes() == before[n]

    def test_detection_accounting_matches_plan(self, tiny_model, tiny_batch):
        # detections equal the number of words hit an odd number of times
        ber, base_seed = 2e-4, 99
        cfg = cp.CampaignConfig(ber_grid=(ber,), protection="parity",
                                n_initial=2, n_max=2, base_seed=base_seed)
        ctx = cp.prepare_context(tiny_model, tiny_batch, cfg)
        seed = fi.derive_seed(base_seed, 0, 0)
        acc, det = cp._run_trial(ctx, ber, seed)
        plan = fi.plan_faults(ctx.layout, ber, seed,
                              excluded_bits=cfg.excluded_bits)
        keys = plan.flips[:, 0].astype(np.int64) * (2**40) + plan.flips[:, 1]
        _, counts = np.unique(keys, return_counts=True)
        assert det == int((counts % 2 == 1).sum())
        assert det <= plan.num_flips

    def test_labeled_metric_needs_labels(self, tiny_model, tiny_batch):
        cfg = cp.CampaignConfig(ber_grid=(1e-6,), accuracy_metric="labeled",
                                n_initial=2, n_max=2)
        batch = vit.Batch(images=tiny_batch.images)
        with pytest.raises(ValueError):
            cp.run_trial(tiny_model, batch, cfg, 1e-6, seed=0)

    def test_labeled_metric_baseline(self, tiny_model, tiny_batch):
        # toy labels are the clean predictions, so labeled baseline is 1.0
        ber = zero_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber,), accuracy_metric="labeled",
                                n_initial=2, n_max=2)
        acc, _ = cp.run_trial(tiny_model, tiny_batch, cfg, ber, seed=0)
        assert acc == 1.0


class TestRunCampaign:
    def test_zero_fault_grid(self, tiny_model, tiny_batch):
        ber = zero_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber,), n_initial=5, n_max=10)
        result = cp.run_campaign(tiny_model, tiny_batch, cfg)
        rec = result.records[0]
        assert rec.mean == result.baseline_accuracy == 1.0
        assert rec.std == 0.0
        assert rec.n_used == 5
        assert rec.samples == [1.0] * 5
        assert rec.detections_mean == 0.0

    def test_rerun_identical(self, tiny_model, tiny_batch):
        cfg = cp.CampaignConfig(ber_grid=(1e-5, 1e-4), protection="parity",
                                n_initial=4, n_max=6, base_seed=5)
        a = cp.run_campaign(tiny_model, tiny_batch, cfg)
        b = cp.run_campaign(tiny_model, tiny_batch, cfg)
        assert cp.result_to_dict(a) == cp.result_to_dict(b)

    def test_worker_count_does_not_change_results(self, tiny_model, tiny_batch):
        cfg = cp.CampaignConfig(ber_grid=(1e-4,), protection="parity",
                                n_initial=6, n_max=6, base_seed=3)
        a = cp.run_campaign(tiny_model, tiny_batch, cfg, workers=1)
        b = cp.run_campaign(tiny_model, tiny_batch, cfg, workers=3)
        assert cp.result_to_dict(a) == cp.result_to_dict(b)

    def test_adaptive_extension(self, tiny_model, tiny_batch):
        # a noisy BER level must extend past n_initial up to n_max
        cfg = cp.CampaignConfig(ber_grid=(1e-6,), n_initial=4, n_max=12,
                                base_seed=1)
        result = cp.run_campaign(tiny_model, tiny_batch, cfg)
        rec = result.records[0]
        assert rec.n_used == 12
        assert rec.hit_n_max
        assert len(rec.samples) == rec.n_used
        assert rec.ci_low <= rec.mean <= rec.ci_high

    def test_ci_matches_formula(self, tiny_model, tiny_batch):
        cfg = cp.CampaignConfig(ber_grid=(2e-5,), n_initial=6, n_max=6)
        rec = cp.run_campaign(tiny_model, tiny_batch, cfg).records[0]
        s = np.std(rec.samples, ddof=1)
        hw = Z95 * s / math.sqrt(len(rec.samples))
        assert rec.ci_high == pytest.approx(rec.mean + hw, abs=1e-9)


class TestCoverageCalibration:
    def test_normal_ci_covers_true_mean(self):
        # synthetic samples from a known normal; the CI should cover the
        # true mean at roughly the configured rate
        rng = np.random.Generator(np.random.Philox(key=np.uint64(77)))
        true_mean, sigma, n = 0.8, 0.05, 30
        covered = 0
        resamples = 1000
        for _ in range(resamples):
            samples = rng.normal(true_mean, sigma, size=n)
            mean = samples.mean()
            hw = Z95 * samples.std(ddof=1) / math.sqrt(n)
            covered += (mean - hw <= true_mean <= mean + hw)
        assert abs(covered / resamples - 0.95) <= 0.05


class TestBerzad:
    def test_bit30_below_grid_minimum(self, tiny_model, tiny_batch):
        # the first grid point already injects ten faults and bit 30 explodes
        ber = 10 * one_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber, 1e-4), n_initial=4, n_max=4)
        (est,) = cp.compute_berzad(tiny_model, tiny_batch, cfg, [30])
        assert est.status == "below_grid_min"
        assert est.berzad is None
        assert len(est.records) == 1

    def test_bit0_at_or_above_grid_max(self, tiny_model, tiny_batch):
        cfg = cp.CampaignConfig(ber_grid=(1e-6, 1e-5), n_initial=4, n_max=4)
        (est,) = cp.compute_berzad(tiny_model, tiny_batch, cfg, [0])
        assert est.status == "at_or_above_grid_max"
        assert est.berzad == pytest.approx(1e-5)

    def test_bit30_within_grid_via_zero_fault_floor(self, tiny_model, tiny_batch):
        low = zero_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(low, 1e-4), n_initial=4, n_max=4)
        (est,) = cp.compute_berzad(tiny_model, tiny_batch, cfg, [30])
        assert est.status == "within_grid"
        assert est.berzad == pytest.approx(low)

    def test_all_target_uses_random_mode(self, tiny_model, tiny_batch):
        ber = zero_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber,), n_initial=3, n_max=3)
        (est,) = cp.compute_berzad(tiny_model, tiny_batch, cfg, ["all"])
        assert est.status == "at_or_above_grid_max"
        assert est.baseline == 1.0

    def test_fixed_bit_feasibility_cap(self, tiny_model, tiny_batch):
        # on one bit position only param_count flips exist, so BER levels
        # above 1/32 are skipped rather than attempted
        cfg = cp.CampaignConfig(ber_grid=(1e-6, 0.25), n_initial=3, n_max=3)
        (est,) = cp.compute_berzad(tiny_model, tiny_batch, cfg, [0])
        assert len(est.records) == 1
        assert est.status == "at_or_above_grid_max"
        assert est.berzad == pytest.approx(1e-6)


class TestExports:
    def _result(self, tiny_model, tiny_batch):
        ber = zero_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber, 2e-5), n_initial=4, n_max=4)
        return cp.run_campaign(tiny_model, tiny_batch, cfg)

    def test_csv(self, tmp_path, tiny_model, tiny_batch):
        result = self._result(tiny_model, tiny_batch)
        path = tmp_path / "r.csv"
        cp.export_report(result, path, kind="csv")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == cp.CSV_HEADER
        assert len(lines) == 3

    def test_empty_result_header_only(self, tmp_path):
        cfg = cp.CampaignConfig(ber_grid=(1e-6,), n_initial=2, n_max=2)
        empty = cp.CampaignResult(config=cfg, baseline_accuracy=1.0, records=[])
        path = tmp_path / "empty.csv"
        cp.export_report(empty, path, kind="csv")
        assert path.read_text() == cp.CSV_HEADER + "\n"

    def test_histogram_conservation(self, tmp_path, tiny_model, tiny_batch):
        result = self._result(tiny_model, tiny_batch)
        path = tmp_path / "hist.csv"
        cp.export_report(result, path, kind="histogram_csv")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == cp.HIST_HEADER
        assert len(lines) == 1 + 100 * len(result.records)
        for rec in result.records:
            rows = [l for l in lines[1:] if l.startswith(f"{rec.ber:.9g},")]
            total = sum(int(r.split(",")[3]) for r in rows)
            assert total == rec.n_used

    def test_histogram_includes_exact_one(self):
        counts = cp.accuracy_histogram([1.0, 1.0, 0.995, 0.0])
        assert counts.sum() == 4
        assert counts[-1] == 3  # 1.0 and 0.995 land in [0.99, 1.0]
        assert counts[0] == 1

    def test_json_round_trip_samples(self, tmp_path, tiny_model, tiny_batch):
        result = self._result(tiny_model, tiny_batch)
        path = tmp_path / "r.json"
        cp.export_report(result, path, kind="json")
        loaded = cp.load_report(path)
        assert loaded["version"]
        assert loaded["rng"] == "philox"
        assert loaded["config"] == result.config.to_dict()
        for rec, lrec in zip(result.records, loaded["records"]):
            assert lrec["samples"] == rec.samples
            assert lrec["detections"] == rec.detections

    def test_berzad_export(self, tmp_path, tiny_model, tiny_batch):
        ber = zero_fault_ber(tiny_model)
        cfg = cp.CampaignConfig(ber_grid=(ber,), n_initial=3, n_max=3)
        ests = cp.compute_berzad(tiny_model, tiny_batch, cfg, [0, 30])
        csv_path = tmp_path / "b.csv"
        cp.export_berzad(ests, csv_path, kind="csv")
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == cp.BERZAD_CSV_HEADER
        assert len(lines) == 3
        json_path = tmp_path / "b.json"
        cp.export_berzad(ests, json_path, kind="json")
        assert json_path.read_text().startswith("[")

    def test_unknown_kind(self, tmp_path, tiny_model, tiny_batch):
        result = self._result(tiny_model, tiny_batch)
        with pytest.raises(ValueError):
            cp.export_report(result, tmp_path / "x", kind="parquet")
