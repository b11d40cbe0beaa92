"""Numerical cross-validation of the engine's forward pass.

The engine is driven purely through its command line: `vitfault golden`
computes fault-free logits for a checkpoint/dataset pair and stores them
in a golden container, which we read back and compare elementwise with
the torch forward pass on the same inputs.
"""

from __future__ import annotations

import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container, torchvit

DEFAULT_TOLERANCE = 1e-4


def engine_command() -> list:
    """Locate the engine binary; fall back to module invocation."""
    binary = shutil.which("vitfault")
    if binary:
        return [binary]
    return [sys.executable, "-m", "vitfault"]


def run_engine(args: list) -> subprocess.CompletedProcess:
    return subprocess.run(engine_command() + args, capture_output=True, text=True)


@dataclass
class CrosscheckReport:
    passed: bool
    tolerance: float
    max_abs_diff: float
    worst_image: int
    worst_class: int
    reference_value: float
    engine_value: float

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max |diff| = {self.max_abs_diff:.3e} "
                f"(tolerance {self.tolerance:g}) at image {self.worst_image}, "
                f"class {self.worst_class}: reference "
                f"{self.reference_value:.6f} vs engine {self.engine_value:.6f}")


def crosscheck_forward(checkpoint, dataset, tolerance: float = DEFAULT_TOLERANCE,
                       workdir=None, reference_model=None) -> CrosscheckReport:
    """Compare torch logits against engine logits for the same files.

    reference_model overrides the torch side (normally loaded from the
    checkpoint); that is how a deliberate discrepancy is staged when
    testing that mismatches are caught and located.
    """
    checkpoint, dataset = Path(checkpoint), Path(dataset)
    model = reference_model if reference_model is not None \
        else torchvit.load_model_from_container(checkpoint)
    tensors, meta = container.read_container(dataset)
    if meta.get("kind") != "dataset" or "images" not in tensors:
        raise ValueError(f"{dataset} is not a dataset container")
    reference = torchvit.reference_logits(model, tensors["images"])

    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        golden_path = Path(tmp) / "golden.vtft"
        proc = run_engine(["golden", str(checkpoint), str(dataset),
                           str(golden_path)])
        if proc.returncode != 0:
            raise RuntimeError(f"engine golden failed ({proc.returncode}): "
                               f"{proc.stderr.strip()}")
        golden_tensors, golden_meta = container.read_container(golden_path)
    if golden_meta.get("kind") != "golden" or "logits" not in golden_tensors:
        raise RuntimeError("engine golden output is missing logits")
    engine = golden_tensors["logits"]
    if engine.shape != reference.shape:
        raise RuntimeError(f"logit shapes differ: engine {engine.shape} "
                           f"vs reference {reference.shape}")

    diff = np.abs(engine.astype(np.float64) - reference.astype(np.float64))
    flat = int(np.argmax(diff))
    image, cls = np.unravel_index(flat, diff.shape)
    return CrosscheckReport(
        passed=bool(diff.max() <= tolerance),
        tolerance=tolerance,
        max_abs_diff=float(diff.max()),
        worst_image=int(image),
        worst_class=int(cls),
        reference_value=float(reference[image, cls]),
        engine_value=float(engine[image, cls]),
    )
