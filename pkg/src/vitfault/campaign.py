"""Fault-injection campaigns: adaptive BER sweeps with and without
parity protection, BERZAD estimation, and report export.

Each trial samples a fresh fault plan, injects it into a private copy of
the parameter words, optionally scrubs (protection on), runs the forward
pass, and scores accuracy against the fault-free reference. Trial seeds
are derived from (base seed, grid index, trial index), so campaigns are
reproducible bit for bit and independent of worker count.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import __version__
from .bitcodec import encode_params, scrub_words
from .faultinject import (DEFAULT_EXCLUDED_BITS, FIXED_BIT, RANDOM_BIT,
                          RNG_NAME, derive_seed, num_faults, plan_faults,
                          apply_faults)
from .modelio import GoldenCache
from .vit import INVALID_LABEL, Batch, ViTModel, argmax_labels, forward

PROTECTION_OFF = "off"
PROTECTION_PARITY = "parity"
METRIC_AGREEMENT = "agreement"
METRIC_LABELED = "labeled"

_ALL_BITS = "all"  # berzad target meaning random-bit injection


def make_ber_grid(start_exp: int = -9, stop_exp: int = -1,
                  per_decade: int = 3) -> tuple:
    """Log-spaced BER grid, `per_decade` points per decade, inclusive."""
    if stop_exp <= start_exp or per_decade < 1:
        raise ValueError("grid must span at least one decade")
    n = (stop_exp - start_exp) * per_decade + 1
    return tuple(float(10.0 ** (start_exp + i / per_decade)) for i in range(n))


@dataclass(frozen=True)
class CampaignConfig:
    ber_grid: tuple = make_ber_grid()
    protection: str = PROTECTION_OFF
    confidence: float = 0.95
    ci_half_width_target: float = 0.01
    n_initial: int = 30
    n_max: int = 1000
    base_seed: int = 0
    accuracy_metric: str = METRIC_AGREEMENT
    excluded_bits: frozenset = DEFAULT_EXCLUDED_BITS
    injection_mode: str = RANDOM_BIT
    fixed_bit: Optional[int] = None
    ber_denominator: str = "bits"

    def __post_init__(self):
        grid = tuple(float(b) for b in self.ber_grid)
        object.__setattr__(self, "ber_grid", grid)
        object.__setattr__(self, "excluded_bits", frozenset(int(b) for b in self.excluded_bits))
        if not grid or any(not 0.0 < b <= 1.0 for b in grid):
            raise ValueError("ber_grid values must lie in (0, 1]")
        if any(a >= b for a, b in zip(grid, grid[1:])):
            raise ValueError("ber_grid must be strictly ascending")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must be in (0, 1): {self.confidence}")
        if self.ci_half_width_target <= 0:
            raise ValueError("ci_half_width_target must be positive")
        if not 2 <= self.n_initial <= self.n_max:
            raise ValueError(f"need 2 <= n_initial <= n_max, got "
                             f"{self.n_initial}, {self.n_max}")
        if self.protection not in (PROTECTION_OFF, PROTECTION_PARITY):
            raise ValueError(f"protection must be 'off' or 'parity': {self.protection}")
        if self.accuracy_metric not in (METRIC_AGREEMENT, METRIC_LABELED):
            raise ValueError(f"unknown accuracy_metric: {self.accuracy_metric}")
        if self.injection_mode not in (RANDOM_BIT, FIXED_BIT):
            raise ValueError(f"unknown injection_mode: {self.injection_mode}")
        if self.injection_mode == FIXED_BIT and self.fixed_bit is None:
            raise ValueError("fixed_bit injection needs a bit position")
        if self.ber_denominator not in ("bits", "params"):
            raise ValueError(f"ber_denominator must be 'bits' or 'params': "
                             f"{self.ber_denominator}")

    def to_dict(self) -> dict:
        return {
            "ber_grid": list(self.ber_grid),
            "protection": self.protection,
            "confidence": self.confidence,
            "ci_half_width_target": self.ci_half_width_target,
            "n_initial": self.n_initial,
            "n_max": self.n_max,
            "base_seed": self.base_seed,
            "accuracy_metric": self.accuracy_metric,
            "excluded_bits": sorted(self.excluded_bits),
            "injection_mode": self.injection_mode,
            "fixed_bit": self.fixed_bit,
            "ber_denominator": self.ber_denominator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown campaign config keys: {unknown}")
        kw = dict(d)
        if "ber_grid" in kw:
            kw["ber_grid"] = tuple(kw["ber_grid"])
        if "excluded_bits" in kw:
            kw["excluded_bits"] = frozenset(kw["excluded_bits"])
        return cls(**kw)


@dataclass
class BerRecord:
    ber: float
    samples: list
    detections: list
    mean: float
    std: float
    ci_low: float
    ci_high: float
    n_used: int
    detections_mean: float
    hit_n_max: bool = False


@dataclass
class CampaignResult:
    config: CampaignConfig
    baseline_accuracy: float
    records: list
    rng: str = RNG_NAME
    version: str = __version__


@dataclass
class BerzadEstimate:
    target: Union[str, int]  # "all" or a bit position
    berzad: Optional[float]  # grid BER, or None when even the smallest fails
    status: str  # "within_grid" | "below_grid_min" | "at_or_above_grid_max"
    baseline: float
    records: list


def iterations_for_std(std: float, confidence: float,
                       half_width_target: float) -> int:
    """ceil((z * s / E)^2): trials needed for a CI of half-width E."""
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1): {confidence}")
    if half_width_target <= 0:
        raise ValueError("half_width_target must be positive")
    if std < 0:
        raise ValueError("std must be non-negative")
    if std == 0.0:
        return 0
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    return int(math.ceil((z * std / half_width_target) ** 2))


def required_iterations(samples: Sequence[float], confidence: float,
                        half_width_target: float) -> int:
    """Adaptive stopping estimate from the sample standard deviation."""
    if len(samples) < 2:
        raise ValueError("need at least two samples to estimate the spread")
    return iterations_for_std(float(np.std(samples, ddof=1)), confidence,
                              half_width_target)


# -- trial machinery ------------------------------------------------------

@dataclass
class _TrialContext:
    config: CampaignConfig
    model_config: object
    names: list
    shapes: list
    layout: tuple
    pristine_words: list  # flat uint32 per tensor; encoded when protection on
    batch: Batch
    reference: np.ndarray  # golden predictions (agreement) or labels (labeled)
    baseline_accuracy: float


def _score(preds: np.ndarray, reference: np.ndarray) -> float:
    # the invalid sentinel never counts as a match, even against itself
    hits = (preds == reference) & (preds != INVALID_LABEL)
    return float(np.mean(hits))


def _model_from_words(ctx: _TrialContext, words: list) -> ViTModel:
    weights = {
        name: w.view(np.float32).reshape(shape)
        for name, shape, w in zip(ctx.names, ctx.shapes, words)
    }
    return ViTModel(ctx.model_config, weights)


def prepare_context(model: ViTModel, batch: Batch, config: CampaignConfig,
                    golden: Optional[GoldenCache] = None) -> _TrialContext:
    """Encode once (protection on), fix the reference predictions, and
    freeze the pristine parameter words trials will copy from."""
    names = model.tensor_names()
    shapes = [tuple(model.weights[n].shape) for n in names]
    if config.protection == PROTECTION_PARITY:
        protected = encode_params([(n, model.weights[n]) for n in names])
        pristine = protected.words
    else:
        pristine = [model.weights[n].reshape(-1).view(np.uint32).copy() for n in names]

    ctx = _TrialContext(
        config=config, model_config=model.config, names=names, shapes=shapes,
        layout=tuple(w.size for w in pristine), pristine_words=pristine,
        batch=batch, reference=np.empty(0), baseline_accuracy=0.0,
    )
    # the arm's fault-free model is the one it deploys: encoded under parity
    baseline_model = _model_from_words(ctx, pristine)
    if config.accuracy_metric == METRIC_AGREEMENT:
        preds = golden.predictions if golden is not None else argmax_labels(
            forward(baseline_model, batch))
        reference = np.asarray(preds, dtype=np.int64)
    else:
        if batch.labels is None:
            raise ValueError("labeled accuracy needs a dataset with labels")
        reference = batch.labels
    ctx.reference = reference
    baseline_preds = argmax_labels(forward(baseline_model, batch)) \
        if config.accuracy_metric == METRIC_LABELED else reference
    ctx.baseline_accuracy = _score(baseline_preds, reference)
    return ctx


def _run_trial(ctx: _TrialContext, ber: float, seed: int):
    cfg = ctx.config
    plan = plan_faults(ctx.layout, ber, seed, excluded_bits=cfg.excluded_bits,
                       mode=cfg.injection_mode, fixed_bit=cfg.fixed_bit,
                       ber_denominator=cfg.ber_denominator)
    words = [w.copy() for w in ctx.pristine_words]
    apply_faults(words, plan, inplace=True)
    detections = 0
    if cfg.protection == PROTECTION_PARITY:
        detections = scrub_words(words).detected
    preds = argmax_labels(forward(_model_from_words(ctx, words), ctx.batch))
    return _score(preds, ctx.reference), detections


def run_trial(model: ViTModel, batch: Batch, config: CampaignConfig,
              ber: float, seed: int, golden: Optional[GoldenCache] = None):
    """One injection trial: returns (accuracy, detections).

    The model is never mutated; faults land on a private copy, so the
    pre-trial state is trivially restored.
    """
    ctx = prepare_context(model, batch, config, golden=golden)
    return _run_trial(ctx, ber, seed)


def _adaptive_samples(ctx: _TrialContext, ber: float, seed_for_trial,
                      workers: int = 1):
    """Run n_initial trials then extend until the CI half-width target is
    met (required_iterations) or n_max is reached."""
    cfg = ctx.config
    samples, detections = [], []

    def trial(t: int):
        return _run_trial(ctx, ber, seed_for_trial(t))

    target = cfg.n_initial
    estimate = cfg.n_initial
    while len(samples) < target:
        idxs = list(range(len(samples), target))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(trial, idxs))
        else:
            results = [trial(t) for t in idxs]
        for acc, det in results:
            samples.append(acc)
            detections.append(det)
        estimate = required_iterations(samples, cfg.confidence,
                                       cfg.ci_half_width_target)
        target = min(cfg.n_max, max(cfg.n_initial, estimate))
    return samples, detections, estimate > cfg.n_max


def _make_record(ber: float, samples: list, detections: list,
                 confidence: float, hit_n_max: bool) -> BerRecord:
    n = len(samples)
    mean = float(np.mean(samples))
    std = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    hw = z * std / math.sqrt(n) if n else 0.0
    return BerRecord(
        ber=float(ber), samples=list(samples), detections=list(detections),
        mean=mean, std=std, ci_low=mean - hw, ci_high=mean + hw, n_used=n,
        detections_mean=float(np.mean(detections)) if detections else 0.0,
        hit_n_max=hit_n_max,
    )


def run_campaign(model: ViTModel, batch: Batch, config: CampaignConfig,
                 workers: int = 1, progress: bool = False) -> CampaignResult:
    """Full BER sweep under one protection arm."""
    ctx = prepare_context(model, batch, config)
    records = []
    for bi, ber in enumerate(config.ber_grid):
        samples, detections, hit = _adaptive_samples(
            ctx, ber, lambda t: derive_seed(config.base_seed, bi, t), workers)
        rec = _make_record(ber, samples, detections, config.confidence, hit)
        records.append(rec)
        if progress:
            hw = rec.ci_high - rec.mean
            print(f"BER={ber:g} n={rec.n_used} mean={rec.mean:.4f} ci=±{hw:.4f}",
                  file=sys.stderr)
    return CampaignResult(config=config, records=records,
                          baseline_accuracy=ctx.baseline_accuracy)


def _target_code(target) -> int:
    return 32 if target == _ALL_BITS else int(target)


def compute_berzad(model: ViTModel, batch: Batch, config: CampaignConfig,
                   targets: Sequence, workers: int = 1,
                   progress: bool = False) -> list:
    """BERZAD per target: the largest grid BER whose accuracy CI still
    reaches the baseline (drop not significant at the configured level).

    Targets are bit positions (fixed-bit injection; bit 30 allowed) or
    "all" (random-bit injection under the configured exclusions). The
    sweep walks the grid upward and stops at the first failing BER; in
    fixed-bit mode it also stops where the fault count would exceed the
    number of parameters (only one bit per word is targetable).
    """
    estimates = []
    for target in targets:
        if target == _ALL_BITS:
            cfg = replace(config, injection_mode=RANDOM_BIT, fixed_bit=None)
        else:
            cfg = replace(config, injection_mode=FIXED_BIT, fixed_bit=int(target))
        ctx = prepare_context(model, batch, cfg)
        total_elems = sum(ctx.layout)
        denom = 32 * total_elems if cfg.ber_denominator == "bits" else total_elems
        code = _target_code(target)
        records = []
        last_pass = None
        failed = False
        for bi, ber in enumerate(cfg.ber_grid):
            if cfg.injection_mode == FIXED_BIT and num_faults(denom, ber) > total_elems:
                break  # BER not realizable on a single bit position
            samples, detections, hit = _adaptive_samples(
                ctx, ber, lambda t: derive_seed(cfg.base_seed, code, bi, t),
                workers)
            rec = _make_record(ber, samples, detections, cfg.confidence, hit)
            records.append(rec)
            if progress:
                print(f"target={target} BER={ber:g} n={rec.n_used} "
                      f"mean={rec.mean:.4f} ci=±{rec.ci_high - rec.mean:.4f}",
                      file=sys.stderr)
            if rec.ci_high >= ctx.baseline_accuracy:
                last_pass = float(ber)
            else:
                failed = True
                break
        if last_pass is None:
            status = "below_grid_min"
        elif failed:
            status = "within_grid"
        else:
            status = "at_or_above_grid_max"
        estimates.append(BerzadEstimate(
            target=target, berzad=last_pass, status=status,
            baseline=ctx.baseline_accuracy, records=records,
        ))
    return estimates


# -- report export ---------------------------------------------------------

def _record_dict(rec: BerRecord) -> dict:
    return {
        "ber": rec.ber, "samples": rec.samples, "detections": rec.detections,
        "mean": rec.mean, "std": rec.std, "ci_low": rec.ci_low,
        "ci_high": rec.ci_high, "n_used": rec.n_used,
        "detections_mean": rec.detections_mean, "hit_n_max": rec.hit_n_max,
    }


def result_to_dict(result: CampaignResult) -> dict:
    return {
        "version": result.version,
        "rng": result.rng,
        "baseline_accuracy": result.baseline_accuracy,
        "config": result.config.to_dict(),
        "records": [_record_dict(r) for r in result.records],
    }


CSV_HEADER = "ber,mean,std,ci_low,ci_high,n,detections"
HIST_HEADER = "ber,bin_low,bin_high,count"
HIST_BIN_WIDTH = 0.01


def accuracy_histogram(samples: Sequence[float]) -> np.ndarray:
    """Counts over 100 fixed bins of width 0.01 spanning [0, 1]."""
    edges = np.linspace(0.0, 1.0, 101)
    counts, _ = np.histogram(np.asarray(samples, dtype=float), bins=edges)
    return counts


def export_report(result: CampaignResult, path, kind: str = "csv") -> None:
    """kind: csv (one row per BER), histogram_csv (per-BER accuracy
    distributions), or json (full samples and provenance)."""
    if kind == "csv":
        lines = [CSV_HEADER]
        for r in result.records:
            lines.append(f"{r.ber:.9g},{r.mean:.9g},{r.std:.9g},"
                         f"{r.ci_low:.9g},{r.ci_high:.9g},{r.n_used},"
                         f"{r.detections_mean:.9g}")
        text = "\n".join(lines) + "\n"
    elif kind == "histogram_csv":
        lines = [HIST_HEADER]
        for r in result.records:
            counts = accuracy_histogram(r.samples)
            for i, c in enumerate(counts):
                lines.append(f"{r.ber:.9g},{i * HIST_BIN_WIDTH:.2f},"
                             f"{(i + 1) * HIST_BIN_WIDTH:.2f},{int(c)}")
        text = "\n".join(lines) + "\n"
    elif kind == "json":
        text = json.dumps(result_to_dict(result), indent=2, sort_keys=True) + "\n"
    else:
        raise ValueError(f"unknown report kind: {kind}")
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def load_report(path) -> dict:
    """Load a JSON report written by export_report(kind='json')."""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def berzad_to_dict(est: BerzadEstimate) -> dict:
    return {
        "target": est.target,
        "berzad": est.berzad,
        "status": est.status,
        "baseline": est.baseline,
        "records": [_record_dict(r) for r in est.records],
    }


BERZAD_CSV_HEADER = "target,berzad,status,baseline"


def export_berzad(estimates: list, path, kind: str = "csv") -> None:
    if kind == "csv":
        lines = [BERZAD_CSV_HEADER]
        for e in estimates:
            ber = "" if e.berzad is None else f"{e.berzad:.9g}"
            lines.append(f"{e.target},{ber},{e.status},{e.baseline:.9g}")
        text = "\n".join(lines) + "\n"
    elif kind == "json":
        text = json.dumps([berzad_to_dict(e) for e in estimates],
                          indent=2, sort_keys=True) + "\n"
    else:
        raise ValueError(f"unknown report kind: {kind}")
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
