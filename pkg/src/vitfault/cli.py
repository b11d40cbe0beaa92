"""Command-line front door.

Subcommands: protect, verify, scrub, inject, golden, campaign, berzad,
overhead, gen-toy. Campaign-style commands take a JSON run spec with a
"command" discriminator; unknown keys are rejected by name. All
randomness is seeded through the run spec or flags, so every command is
deterministic, and JSON reports embed the tool version and the resolved
configuration.

Exit codes: 0 ok, 1 validation error, 2 I/O or file-format error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, bitcodec, campaign, faultinject, modelio, overhead, toy

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_VERIFY = 3


def _fail_validation(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_VALIDATION


# -- simple checkpoint commands -------------------------------------------

def cmd_protect(args) -> int:
    model = modelio.load_checkpoint(args.checkpoint_in)
    names = model.tensor_names()
    protected = bitcodec.encode_params([(n, model.weights[n]) for n in names])
    flipped = 0
    max_ulp = 0.0
    for name, words in zip(names, protected.words):
        orig = model.weights[name].reshape(-1)
        orig_words = orig.view(np.uint32)
        changed = words != orig_words
        flipped += int(changed.sum())
        if changed.any():
            # NaN/Inf words are encoded like any pattern but have no ulp
            with np.errstate(invalid="ignore"):
                delta = np.abs(words.view(np.float32)[changed].astype(np.float64)
                               - orig[changed].astype(np.float64))
                ulp = bitcodec.ulp32(orig[changed]).astype(np.float64)
            finite = np.isfinite(delta) & np.isfinite(ulp) & (ulp > 0)
            if finite.any():
                max_ulp = max(max_ulp, float((delta[finite] / ulp[finite]).max()))
    encoded_model = modelio.ViTModel(model.config, protected.values())
    modelio.save_checkpoint(encoded_model, args.checkpoint_out)
    print(f"flipped_lsbs={flipped} total_words={protected.total_words} "
          f"max_ulp_perturbation={max_ulp:g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    model = modelio.load_checkpoint(args.checkpoint)
    mismatches = 0
    total = 0
    for name in model.tensor_names():
        words = bitcodec.words_view(model.weights[name])
        mismatches += int((~bitcodec.check_word(words)).sum())
        total += words.size
    print(f"mismatches={mismatches} total_words={total}")
    return EXIT_OK if mismatches == 0 else EXIT_VERIFY


def cmd_scrub(args) -> int:
    model = modelio.load_checkpoint(args.checkpoint_in)
    names = model.tensor_names()
    words = [bitcodec.words_view(model.weights[n]).copy() for n in names]
    report = bitcodec.scrub_words(words)
    weights = {
        n: w.view(np.float32).reshape(model.weights[n].shape)
        for n, w in zip(names, words)
    }
    modelio.save_checkpoint(modelio.ViTModel(model.config, weights),
                            args.checkpoint_out)
    if args.report:
        payload = {
            "version": __version__,
            "detected": report.detected,
            "total_words": report.total_words,
            "detected_indices": [
                {"tensor": names[t], "element": e}
                for t, e in report.detected_indices
            ],
        }
        Path(args.report).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"detected={report.detected} total_words={report.total_words}")
    return EXIT_OK


def cmd_inject(args) -> int:
    model = modelio.load_checkpoint(args.checkpoint_in)
    names = model.tensor_names()
    excluded = frozenset() if args.include_bit_30 else faultinject.DEFAULT_EXCLUDED_BITS
    mode = faultinject.FIXED_BIT if args.fixed_bit is not None else faultinject.RANDOM_BIT
    plan = faultinject.plan_faults(
        model.layout(), args.ber, args.seed, excluded_bits=excluded, mode=mode,
        fixed_bit=args.fixed_bit, ber_denominator=args.denominator)
    arrays = faultinject.apply_faults([model.weights[n] for n in names], plan)
    modelio.save_checkpoint(modelio.ViTModel(model.config, dict(zip(names, arrays))),
                            args.checkpoint_out)
    if args.plan_out:
        faultinject.save_plans(args.plan_out, [plan])
    print(f"flips={plan.num_flips} ber={args.ber:g} seed={args.seed}")
    return EXIT_OK


def cmd_golden(args) -> int:
    model = modelio.load_checkpoint(args.checkpoint)
    batch = modelio.load_dataset(args.dataset)
    cache = modelio.compute_golden(model, batch, keep_logits=not args.no_logits)
    modelio.save_golden(cache, args.out)
    print(f"model_hash={cache.model_hash} predictions={len(cache.predictions)}")
    return EXIT_OK


def cmd_gen_toy(args) -> int:
    if args.config not in toy.PRESETS:
        raise ValueError(f"unknown config preset {args.config!r}; "
                         f"choose from {sorted(toy.PRESETS)}")
    config = toy.PRESETS[args.config]
    model = toy.make_toy_model(config, seed=args.seed,
                               weight_scale=args.weight_scale,
                               heavy_fraction=args.heavy_fraction)
    batch = toy.make_synthetic_batch(config, n=args.images, seed=args.data_seed,
                                     model=model, pool_factor=args.pool_factor)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    model_path = outdir / "model.vtft"
    data_path = outdir / "dataset.vtft"
    modelio.save_checkpoint(model, model_path)
    modelio.save_dataset(batch, data_path, num_classes=config.num_classes)
    print(f"config={args.config} params={model.param_count} images={len(batch)}")
    print(f"checkpoint={model_path}")
    print(f"dataset={data_path}")
    return EXIT_OK


# -- run-spec commands ------------------------------------------------------

_CAMPAIGN_KEYS = set(campaign.CampaignConfig.__dataclass_fields__)


def _load_runspec(path, command: str, required: set, optional: set) -> dict:
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"run spec is not valid JSON: {e}") from None
    if not isinstance(spec, dict):
        raise ValueError("run spec must be a JSON object")
    if spec.get("command") != command:
        raise ValueError(f"run spec command is {spec.get('command')!r}, "
                         f"expected {command!r}")
    allowed = {"command"} | required | optional
    unknown = sorted(set(spec) - allowed)
    if unknown:
        raise ValueError(f"unknown run spec keys: {unknown}")
    missing = sorted(required - set(spec))
    if missing:
        raise ValueError(f"missing run spec keys: {missing}")
    return spec


def _campaign_config(spec: dict) -> campaign.CampaignConfig:
    cfg = {k: spec[k] for k in _CAMPAIGN_KEYS if k in spec}
    return campaign.CampaignConfig.from_dict(cfg)


def _workers(args, spec: dict) -> int:
    if args.workers is not None:
        return args.workers
    if spec.get("workers") is not None:
        return int(spec["workers"])
    return os.cpu_count() or 1


def cmd_campaign(args) -> int:
    spec = _load_runspec(args.spec, "campaign",
                         required={"checkpoint", "dataset", "output_dir"},
                         optional=_CAMPAIGN_KEYS | {"workers"})
    config = _campaign_config(spec)
    model = modelio.load_checkpoint(spec["checkpoint"])
    batch = modelio.load_dataset(spec["dataset"])
    result = campaign.run_campaign(model, batch, config,
                                   workers=_workers(args, spec),
                                   progress=not args.quiet)
    outdir = Path(spec["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    campaign.export_report(result, outdir / "campaign.csv", kind="csv")
    campaign.export_report(result, outdir / "campaign_hist.csv", kind="histogram_csv")
    payload = campaign.result_to_dict(result)
    payload["runspec"] = spec
    (outdir / "campaign.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {outdir / 'campaign.csv'}")
    print(f"wrote {outdir / 'campaign_hist.csv'}")
    print(f"wrote {outdir / 'campaign.json'}")
    return EXIT_OK


def _validate_targets(raw) -> list:
    if not isinstance(raw, list) or not raw:
        raise ValueError("targets must be a non-empty list of bit positions or 'all'")
    targets = []
    for t in raw:
        if t == "all":
            targets.append("all")
        elif isinstance(t, int) and 0 <= t <= 31:
            targets.append(t)
        else:
            raise ValueError(f"invalid berzad target: {t!r}")
    return targets


def cmd_berzad(args) -> int:
    spec = _load_runspec(args.spec, "berzad",
                         required={"checkpoint", "dataset", "output_dir", "targets"},
                         optional=_CAMPAIGN_KEYS | {"workers"})
    config = _campaign_config(spec)
    targets = _validate_targets(spec["targets"])
    model = modelio.load_checkpoint(spec["checkpoint"])
    batch = modelio.load_dataset(spec["dataset"])
    estimates = campaign.compute_berzad(model, batch, config, targets,
                                        workers=_workers(args, spec),
                                        progress=not args.quiet)
    outdir = Path(spec["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    campaign.export_berzad(estimates, outdir / "berzad.csv", kind="csv")
    payload = {
        "version": __version__,
        "rng": faultinject.RNG_NAME,
        "config": config.to_dict(),
        "runspec": spec,
        "estimates": [campaign.berzad_to_dict(e) for e in estimates],
    }
    (outdir / "berzad.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {outdir / 'berzad.csv'}")
    print(f"wrote {outdir / 'berzad.json'}")
    return EXIT_OK


def cmd_overhead(args) -> int:
    spec = _load_runspec(args.spec, "overhead",
                         required={"output_dir", "num_params", "abft"},
                         optional={"cost_model"})
    abft_d = spec["abft"]
    if not isinstance(abft_d, dict) or set(abft_d) != {
            "multiplies", "adds", "memory_overhead_fraction"}:
        raise ValueError("abft must have exactly the keys multiplies, adds, "
                         "memory_overhead_fraction")
    abft = overhead.AbftCost(**abft_d)
    model_d = spec.get("cost_model", {})
    unknown = sorted(set(model_d) - set(overhead.CostModel.__dataclass_fields__))
    if unknown:
        raise ValueError(f"unknown cost_model keys: {unknown}")
    if "mul_to_xor_range" in model_d:
        model_d = dict(model_d, mul_to_xor_range=tuple(model_d["mul_to_xor_range"]))
    cost_model = overhead.CostModel(**model_d)
    parity = overhead.parity_cost(int(spec["num_params"]), cost_model)
    comparison = overhead.compare(parity, abft, cost_model)
    payload = {
        "version": __version__,
        "runspec": spec,
        "num_params": int(spec["num_params"]),
        "parity": {"xor_count": parity.xor_count,
                   "memory_overhead_fraction": parity.memory_overhead_fraction},
        "abft": {"multiplies": abft.multiplies, "adds": abft.adds,
                 "memory_overhead_fraction": abft.memory_overhead_fraction},
        "comparison": {"factor_low": comparison.factor_low,
                       "factor_high": comparison.factor_high,
                       "memory_delta": comparison.memory_delta},
        "memory": f"{parity.memory_overhead_fraction:.0%} vs "
                  f"{abft.memory_overhead_fraction:.0%}",
    }
    outdir = Path(spec["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "overhead.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {outdir / 'overhead.json'}")
    print(f"xor_count={parity.xor_count:g} factor_low={comparison.factor_low:.1f} "
          f"factor_high={comparison.factor_high:.1f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vitfault",
        description="Parity-protect ViT checkpoints and run bit-flip "
                    "fault-injection campaigns.")
    p.add_argument("--version", action="version", version=f"vitfault {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("protect", help="parity-encode a checkpoint (LSB as parity bit)")
    sp.add_argument("checkpoint_in")
    sp.add_argument("checkpoint_out")
    sp.set_defaults(func=cmd_protect)

    sp = sub.add_parser("verify", help="count parity mismatches; exit 3 if any")
    sp.add_argument("checkpoint")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("scrub", help="zero-mask odd-parity words")
    sp.add_argument("checkpoint_in")
    sp.add_argument("checkpoint_out")
    sp.add_argument("--report", help="write a scrub report JSON here")
    sp.set_defaults(func=cmd_scrub)

    sp = sub.add_parser("inject", help="apply a seeded fault plan to a checkpoint")
    sp.add_argument("checkpoint_in")
    sp.add_argument("checkpoint_out")
    sp.add_argument("--ber", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--fixed-bit", type=int, default=None,
                    help="pin every flip to this bit position (0..31)")
    sp.add_argument("--include-bit-30", action="store_true",
                    help="lift the default exclusion of the exponent MSB")
    sp.add_argument("--denominator", choices=("bits", "params"), default="bits")
    sp.add_argument("--plan-out", help="write the plan as JSON lines here")
    sp.set_defaults(func=cmd_inject)

    sp = sub.add_parser("golden", help="record fault-free predictions for a dataset")
    sp.add_argument("checkpoint")
    sp.add_argument("dataset")
    sp.add_argument("out")
    sp.add_argument("--no-logits", action="store_true")
    sp.set_defaults(func=cmd_golden)

    sp = sub.add_parser("gen-toy", help="emit a seeded toy checkpoint and dataset")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--config", default="toy-tiny",
                    help=f"preset name, one of {sorted(toy.PRESETS)}")
    sp.add_argument("--seed", type=int, default=0, help="weight seed")
    sp.add_argument("--data-seed", type=int, default=1, help="dataset seed")
    sp.add_argument("--images", type=int, default=64)
    sp.add_argument("--weight-scale", type=float, default=toy.DEFAULT_WEIGHT_SCALE)
    sp.add_argument("--heavy-fraction", type=float, default=toy.DEFAULT_HEAVY_FRACTION,
                    help="fraction of MLP weights drawn at large magnitude")
    sp.add_argument("--pool-factor", type=int, default=60,
                    help="candidate images screened per kept image")
    sp.set_defaults(func=cmd_gen_toy)

    for name, fn, hlp in (
        ("campaign", cmd_campaign, "run a BER sweep from a JSON run spec"),
        ("berzad", cmd_berzad, "estimate BERZAD per bit target from a JSON run spec"),
    ):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("spec", help="JSON run spec path")
        sp.add_argument("--workers", type=int, default=None,
                        help="parallel trials (default: available parallelism)")
        sp.add_argument("--quiet", action="store_true",
                        help="suppress progress lines on stderr")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("overhead", help="emit the parity vs ABFT overhead comparison")
    sp.add_argument("spec", help="JSON run spec path")
    sp.set_defaults(func=cmd_overhead)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, TypeError) as e:
        return _fail_validation(str(e))
    except modelio.ModelIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
