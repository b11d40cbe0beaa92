import json

import numpy as np
import pytest

from vitfault import bitcodec as bc
from vitfault import faultinject as fi
from vitfault import modelio, toy, vit
from vitfault.cli import main


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    code = main(["gen-toy", "--out-dir", str(out), "--config", "toy-tiny",
                 "--seed", "0", "--data-seed", "1", "--images", "16",
                 "--pool-factor", "10"])
    assert code == 0
    return out


def read_json(path):
    return json.loads(path.read_text())


class TestGenToy:
    def test_outputs_loadable(self, toy_dir):
        model = modelio.load_checkpoint(toy_dir / "model.vtft")
        batch = modelio.load_dataset(toy_dir / "dataset.vtft")
        assert model.param_count == 214_218
        assert len(batch) == 16

    def test_prints_param_count(self, toy_dir, capsys, tmp_path):
        code = main(["gen-toy", "--out-dir", str(tmp_path), "--images", "8",
                     "--pool-factor", "5"])
        assert code == 0
        out = capsys.readouterr().out
        assert "params=214218" in out

    def test_unknown_preset(self, tmp_path):
        assert main(["gen-toy", "--out-dir", str(tmp_path),
                     "--config", "toy-giant"]) == 1


class TestProtectVerifyScrub:
    def test_all_zero_checkpoint_unchanged(self, tmp_path, tiny_config):
        shapes = tiny_config.weight_shapes()
        zero_model = vit.ViTModel(tiny_config, {
            n: np.zeros(s, dtype=np.float32) for n, s in shapes.items()})
        src = tmp_path / "zero.vtft"
        modelio.save_checkpoint(zero_model, src)
        dst = tmp_path / "zero_enc.vtft"
        assert main(["protect", str(src), str(dst)]) == 0
        assert dst.read_bytes() == src.read_bytes()

    def test_random_words_flip_about_half(self, tmp_path, tiny_config, capsys):
        # random bit patterns have odd parity with probability 1/2
        shapes = tiny_config.weight_shapes()
        rng = np.random.Generator(np.random.Philox(key=np.uint64(4)))
        weights = {
            n: rng.integers(0, 2**32, size=s, dtype=np.uint64)
                 .astype(np.uint32).view(np.float32)
            for n, s in shapes.items()
        }
        model = vit.ViTModel(tiny_config, weights)
        src = tmp_path / "rand.vtft"
        modelio.save_checkpoint(model, src)
        dst = tmp_path / "rand_enc.vtft"
        assert main(["protect", str(src), str(dst)]) == 0
        out = capsys.readouterr().out
        flipped = int(out.split("flipped_lsbs=")[1].split()[0])
        n = model.param_count
        # binomial 4-sigma window around n/2
        assert abs(flipped - n / 2) < 4 * 0.5 * np.sqrt(n)

    def test_protect_then_verify_clean(self, toy_dir, tmp_path, capsys):
        enc = tmp_path / "enc.vtft"
        assert main(["protect", str(toy_dir / "model.vtft"), str(enc)]) == 0
        out = capsys.readouterr().out
        assert "max_ulp_perturbation=1" in out or "max_ulp_perturbation=0" in out
        assert main(["verify", str(enc)]) == 0
        assert "mismatches=0" in capsys.readouterr().out

    def test_verify_counts_corruptions(self, toy_dir, tmp_path, capsys):
        enc = tmp_path / "enc.vtft"
        main(["protect", str(toy_dir / "model.vtft"), str(enc)])
        model = modelio.load_checkpoint(enc)
        for name, elem, bit in (("head.weight", 3, 12), ("cls_token", 0, 30),
                                ("pos_embed", 17, 5)):
            words = model.weights[name].reshape(-1).view(np.uint32)
            words[elem] = bc.flip_bit(int(words[elem]), bit)
        bad = tmp_path / "bad.vtft"
        modelio.save_checkpoint(model, bad)
        capsys.readouterr()
        assert main(["verify", str(bad)]) == 3
        assert "mismatches=3" in capsys.readouterr().out

    def test_scrub_idempotent_and_report(self, toy_dir, tmp_path, capsys):
        enc = tmp_path / "enc.vtft"
        main(["protect", str(toy_dir / "model.vtft"), str(enc)])
        model = modelio.load_checkpoint(enc)
        words = model.weights["head.weight"].reshape(-1).view(np.uint32)
        words[5] = bc.flip_bit(int(words[5]), 22)
        bad = tmp_path / "bad.vtft"
        modelio.save_checkpoint(model, bad)
        once = tmp_path / "scrub1.vtft"
        report = tmp_path / "scrub.json"
        assert main(["scrub", str(bad), str(once), "--report", str(report)]) == 0
        rep = read_json(report)
        assert rep["detected"] == 1
        assert rep["detected_indices"] == [{"tensor": "head.weight", "element": 5}]
        twice = tmp_path / "scrub2.vtft"
        assert main(["scrub", str(once), str(twice)]) == 0
        assert twice.read_bytes() == once.read_bytes()
        scrubbed = modelio.load_checkpoint(once)
        assert scrubbed.weights["head.weight"].reshape(-1)[5] == 0.0


class TestInject:
    def test_plan_written_and_applied_exactly(self, toy_dir, tmp_path):
        out = tmp_path / "faulted.vtft"
        plan_path = tmp_path / "plan.jsonl"
        assert main(["inject", str(toy_dir / "model.vtft"), str(out),
                     "--ber", "1e-4", "--seed", "3",
                     "--plan-out", str(plan_path)]) == 0
        (plan,) = fi.load_plans(plan_path)
        assert plan.seed == 3 and plan.ber == 1e-4
        assert not (plan.flips[:, 2] == 30).any()
        clean = modelio.load_checkpoint(toy_dir / "model.vtft")
        faulted = modelio.load_checkpoint(out)
        names = clean.tensor_names()
        arrays = fi.apply_faults([clean.weights[n] for n in names], plan)
        for name, arr in zip(names, arrays):
            assert faulted.weights[name].tobytes() == arr.tobytes()

    def test_fixed_bit_30_allowed(self, toy_dir, tmp_path):
        out = tmp_path / "f30.vtft"
        plan_path = tmp_path / "p30.jsonl"
        assert main(["inject", str(toy_dir / "model.vtft"), str(out),
                     "--ber", "1e-5", "--seed", "0", "--fixed-bit", "30",
                     "--plan-out", str(plan_path)]) == 0
        (plan,) = fi.load_plans(plan_path)
        assert (plan.flips[:, 2] == 30).all()


class TestGolden:
    def test_matches_library_predictions(self, toy_dir, tmp_path):
        out = tmp_path / "golden.vtft"
        assert main(["golden", str(toy_dir / "model.vtft"),
                     str(toy_dir / "dataset.vtft"), str(out)]) == 0
        cache = modelio.load_golden(out)
        model = modelio.load_checkpoint(toy_dir / "model.vtft")
        batch = modelio.load_dataset(toy_dir / "dataset.vtft")
        assert np.array_equal(cache.predictions, vit.predict(model, batch))
        assert cache.logits is not None
        assert cache.valid_for(model)


class TestCampaignCommand:
    def _spec(self, toy_dir, tmp_path, **overrides):
        spec = {
            "command": "campaign",
            "checkpoint": str(toy_dir / "model.vtft"),
            "dataset": str(toy_dir / "dataset.vtft"),
            "output_dir": str(tmp_path / "out"),
            "ber_grid": [1e-9],
            "n_initial": 2,
            "n_max": 2,
            "base_seed": 0,
        }
        spec.update(overrides)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        return path, spec

    def test_minimal_single_ber(self, toy_dir, tmp_path):
        path, spec = self._spec(toy_dir, tmp_path)
        assert main(["campaign", str(path), "--quiet", "--workers", "1"]) == 0
        outdir = tmp_path / "out"
        lines = (outdir / "campaign.csv").read_text().strip().split("\n")
        assert len(lines) == 2  # header + one BER row
        report = read_json(outdir / "campaign.json")
        assert report["config"]["ber_grid"] == [1e-9]
        assert report["runspec"] == spec
        assert report["version"]

    def test_deterministic_outputs(self, toy_dir, tmp_path):
        path, _ = self._spec(toy_dir, tmp_path, ber_grid=[1e-6], n_initial=3,
                             n_max=3, protection="parity")
        assert main(["campaign", str(path), "--quiet", "--workers", "2"]) == 0
        first = (tmp_path / "out" / "campaign.json").read_text()
        assert main(["campaign", str(path), "--quiet", "--workers", "1"]) == 0
        assert (tmp_path / "out" / "campaign.json").read_text() == first

    def test_unknown_key_named(self, toy_dir, tmp_path, capsys):
        path, _ = self._spec(toy_dir, tmp_path, typo_knob=5)
        assert main(["campaign", str(path), "--quiet"]) == 1
        assert "typo_knob" in capsys.readouterr().err

    def test_wrong_command_rejected(self, toy_dir, tmp_path):
        path, _ = self._spec(toy_dir, tmp_path)
        assert main(["berzad", str(path), "--quiet"]) == 1

    def test_missing_checkpoint_is_io_error(self, toy_dir, tmp_path):
        path, _ = self._spec(toy_dir, tmp_path, checkpoint=str(tmp_path / "no.vtft"))
        assert main(["campaign", str(path), "--quiet"]) == 2


class TestBerzadCommand:
    def test_two_targets_two_rows(self, toy_dir, tmp_path):
        model = modelio.load_checkpoint(toy_dir / "model.vtft")
        low = 10 / (32 * model.param_count)
        spec = {
            "command": "berzad",
            "checkpoint": str(toy_dir / "model.vtft"),
            "dataset": str(toy_dir / "dataset.vtft"),
            "output_dir": str(tmp_path / "out"),
            "targets": [0, 30],
            "ber_grid": [low, 1e-4],
            "n_initial": 3,
            "n_max": 3,
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        assert main(["berzad", str(path), "--quiet", "--workers", "1"]) == 0
        lines = (tmp_path / "out" / "berzad.csv").read_text().strip().split("\n")
        assert len(lines) == 3
        report = read_json(tmp_path / "out" / "berzad.json")
        by_target = {e["target"]: e for e in report["estimates"]}
        assert by_target[0]["status"] == "at_or_above_grid_max"
        assert by_target[30]["status"] == "below_grid_min"


class TestOverheadCommand:
    def test_table_reproduction(self, tmp_path):
        spec = {
            "command": "overhead",
            "output_dir": str(tmp_path / "out"),
            "num_params": 86_000_000,
            "abft": {"multiplies": 124.85e9, "adds": 126.66e6,
                     "memory_overhead_fraction": 0.25},
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        assert main(["overhead", str(path)]) == 0
        report = read_json(tmp_path / "out" / "overhead.json")
        assert report["parity"]["xor_count"] == pytest.approx(2.666e9, rel=5e-3)
        assert report["parity"]["memory_overhead_fraction"] == 0.0
        assert report["memory"] == "0% vs 25%"
        assert 460 < report["comparison"]["factor_low"] < 475
        assert 2300 < report["comparison"]["factor_high"] < 2360

    def test_bad_abft_keys(self, tmp_path):
        spec = {
            "command": "overhead",
            "output_dir": str(tmp_path / "out"),
            "num_params": 100,
            "abft": {"multiplies": 1.0},
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        assert main(["overhead", str(path)]) == 1


class TestMisc:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "vitfault" in capsys.readouterr().out

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["verify", str(tmp_path / "ghost.vtft")]) == 2

    def test_invalid_spec_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        assert main(["campaign", str(path), "--quiet"]) == 1
