"""End-to-end orchestration: fit -> abnormality map -> candidate -> level set.

Everything an invocation needs lives in a PipelineConfig; a flat
``key = value`` text file (comments with #, unknown keys rejected) can
populate it and command-line flags override file values.  The run writes
its artifacts into output_dir:

    model.txt             fitted (or copied) mixture model
    gbbm.mvol             abnormality map, scalar32
    candidate.mvol        candidate mask after morphological cleanup
    candidate_report.txt  per-step voxel counts
    segmentation.mvol     final zero-level mask
    evolution.log         one line per reinitialization checkpoint
    report.txt            key=value summary (tm=, iterations=, ...)

All files go through atomic writes, so a crashed run never leaves a
truncated artifact under a final name.  Results are a pure function of
the config: reruns produce byte-identical artifacts.  Wall time is
returned in the report dict (and printed by the CLI) but deliberately
kept out of report.txt so the file stays deterministic.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, fields

import numpy as np

from . import fvf3d
from .brainmap import GbbmParams, ProbabilisticAtlas, build_gbbm
from .candidate import CandidateParams, CandidateRegion, extract_candidate
from .errors import NoCandidateError
from .metrics import tanimoto
from .mvol import atomic_write_text, read_volume, write_volume
from .ngmm import (
    TissueMixtureModel,
    fit_em,
    load_model,
    normalize_intensity,
    sample_masked_intensities,
    save_model,
)
from .phantom import load_atlas_dir
from .volume import BinaryMask, ScalarVolume, require_same_grid

MODEL_FILE = "model.txt"
GBBM_FILE = "gbbm.mvol"
CANDIDATE_FILE = "candidate.mvol"
CANDIDATE_REPORT_FILE = "candidate_report.txt"
SEGMENTATION_FILE = "segmentation.mvol"
EVOLUTION_LOG_FILE = "evolution.log"
REPORT_FILE = "report.txt"


@dataclass
class PipelineConfig:
    # paths
    input: str | None = None
    atlas_dir: str | None = None
    model: str | None = None
    output_dir: str | None = None
    ground_truth: str | None = None
    # mixture fit
    em_tol: float = 1e-6
    em_max_iters: int = 500
    max_samples: int = 2_000_000
    seed: int = 0
    # abnormality map + candidate
    omega: float = 255.0
    psi: float | None = None  # None -> 0.6 * omega
    strip_depth: int = 2
    erode_iters: int = 2
    dilate_iters: int = 2
    connectivity: int = 26
    # level set
    alpha: float = 0.2
    beta: float = 1.0
    dt: float | None = None
    max_iters: int = 300
    reinit_every: int = 20
    stop_tol: float = 1e-3
    band_halfwidth: float = 6.0
    edge_sigma: float = 1.0

    def resolved_psi(self) -> float:
        return 0.6 * self.omega if self.psi is None else self.psi

    def candidate_params(self) -> CandidateParams:
        return CandidateParams(
            psi=self.resolved_psi(),
            strip_depth=self.strip_depth,
            erode_iters=self.erode_iters,
            dilate_iters=self.dilate_iters,
            connectivity=self.connectivity,
        )

    def evolution_params(self) -> fvf3d.EvolutionParams:
        return fvf3d.EvolutionParams(
            alpha=self.alpha,
            beta=self.beta,
            dt=self.dt,
            max_iters=self.max_iters,
            reinit_every=self.reinit_every,
            stop_tol=self.stop_tol,
            band_halfwidth=self.band_halfwidth,
        )


_PATH_KEYS = {"input", "atlas_dir", "model", "output_dir", "ground_truth"}
_INT_KEYS = {
    "em_max_iters",
    "max_samples",
    "seed",
    "strip_depth",
    "erode_iters",
    "dilate_iters",
    "connectivity",
    "max_iters",
    "reinit_every",
}
_FLOAT_KEYS = {
    "em_tol",
    "omega",
    "psi",
    "alpha",
    "beta",
    "dt",
    "stop_tol",
    "band_halfwidth",
    "edge_sigma",
}
CONFIG_KEYS = _PATH_KEYS | _INT_KEYS | _FLOAT_KEYS
assert CONFIG_KEYS == {f.name for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    if key in _PATH_KEYS:
        return raw
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        kind = "an integer" if key in _INT_KEYS else "a number"
        raise ValueError(f"config key {key!r} needs {kind}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat key=value parser; # comments and blank lines allowed."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in CONFIG_KEYS:
            raise ValueError(
                f"{source}:{lineno}: unknown config key {key!r}"
                f" (known keys: {', '.join(sorted(CONFIG_KEYS))})"
            )
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Config file values, then overrides (e.g. CLI flags) on top."""
    values = {}
    if path is not None:
        with open(path, encoding="ascii") as fh:
            values.update(parse_config_text(fh.read(), source=path))
    for key, val in (overrides or {}).items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        if val is not None:
            values[key] = val
    return PipelineConfig(**values)


def _read_scalar(path: str) -> ScalarVolume:
    vol = read_volume(path)
    if not isinstance(vol, ScalarVolume):
        raise ValueError(f"{path} holds a mask, expected a scalar volume")
    return vol


def _read_mask(path: str) -> BinaryMask:
    vol = read_volume(path)
    if not isinstance(vol, BinaryMask):
        raise ValueError(f"{path} holds a scalar volume, expected a mask")
    return vol


def fit_stage(patient: ScalarVolume, atlas: ProbabilisticAtlas, config: PipelineConfig):
    """Normalize the patient over the brain mask and fit the mixture."""
    require_same_grid(patient, atlas.template, "patient and atlas")
    normalized, record = normalize_intensity(patient, atlas.brain_mask)
    samples = sample_masked_intensities(
        normalized, atlas.brain_mask, max_samples=config.max_samples, seed=config.seed
    )
    model = fit_em(
        samples, k=3, tol=config.em_tol, max_iters=config.em_max_iters, seed=config.seed
    )
    return normalized, record, model


def segment_stage(
    patient: ScalarVolume,
    region: CandidateRegion,
    config: PipelineConfig,
    log: list | None = None,
) -> fvf3d.LevelSetField:
    """Seed a distance field on the candidate and evolve it."""
    ctx = fvf3d.make_force_context(patient, region, sigma=config.edge_sigma)
    ls = fvf3d.signed_distance_init(region, band_halfwidth=config.band_halfwidth)
    return fvf3d.evolve(ls, ctx, config.evolution_params(), log=log)


def _candidate_report_text(region: CandidateRegion) -> str:
    names = ("binarize", "erode", "component", "dilate", "resample")
    lines = [
        f"{name}_voxels={count}"
        for name, count in zip(names, region.step_voxels)
    ]
    lines.append(f"final_voxels={region.voxel_count}")
    lines.append(
        "centroid=" + ",".join(format(c, ".17g") for c in region.centroid)
    )
    return "\n".join(lines) + "\n"


def _evolution_log_text(records: list) -> str:
    lines = []
    for rec in records:
        parts = [f"iter={rec['iteration']}", f"inside={rec['inside']}"]
        parts.append(f"max_update={format(rec['max_update'], '.17g')}")
        if "cos_gamma_mean" in rec:
            parts.append(f"cos_gamma_mean={format(rec['cos_gamma_mean'], '.17g')}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute every stage and write all artifacts.

    Returns the report as a dict.  A NoCandidateError still writes
    report.txt (status=no-candidate) before propagating, so callers can
    map it to a distinct exit code while keeping the run inspectable.
    """
    for key in ("input", "atlas_dir", "output_dir"):
        if getattr(config, key) is None:
            raise ValueError(f"pipeline config is missing required key {key!r}")
    t0 = time.perf_counter()
    out = config.output_dir
    os.makedirs(out, exist_ok=True)

    atlas = load_atlas_dir(config.atlas_dir)
    patient = _read_scalar(config.input)
    truth = _read_mask(config.ground_truth) if config.ground_truth else None
    if truth is not None:
        require_same_grid(truth, patient, "ground truth and patient")

    normalized, _, model = (
        fit_stage(patient, atlas, config)
        if config.model is None
        else _fit_with_fixed_model(patient, atlas, config)
    )
    save_model(model, os.path.join(out, MODEL_FILE))

    gbbm = build_gbbm(normalized, atlas, model, GbbmParams(omega=config.omega))
    write_volume(gbbm, os.path.join(out, GBBM_FILE))

    report: dict = {}
    try:
        region = extract_candidate(gbbm, atlas.brain_mask, config.candidate_params())
    except NoCandidateError as err:
        report["status"] = "no-candidate"
        report["candidate_voxels"] = 0
        report["iterations"] = 0
        if truth is not None:
            empty = BinaryMask(np.zeros_like(truth.data), truth.spacing)
            report["tm"] = tanimoto(empty, truth).tanimoto
        report["runtime_seconds"] = time.perf_counter() - t0
        _write_report(os.path.join(out, REPORT_FILE), report)
        raise err

    write_volume(region.mask, os.path.join(out, CANDIDATE_FILE))
    atomic_write_text(
        os.path.join(out, CANDIDATE_REPORT_FILE), _candidate_report_text(region)
    )

    log: list = []
    final = segment_stage(patient, region, config, log=log)
    atomic_write_text(os.path.join(out, EVOLUTION_LOG_FILE), _evolution_log_text(log))
    seg = fvf3d.zero_level_mask(final)
    write_volume(seg, os.path.join(out, SEGMENTATION_FILE))

    report["status"] = "ok"
    report["candidate_voxels"] = region.voxel_count
    report["iterations"] = final.iteration
    if truth is not None:
        report["tm"] = tanimoto(seg, truth).tanimoto
    report["runtime_seconds"] = time.perf_counter() - t0
    _write_report(os.path.join(out, REPORT_FILE), report)
    return report


def _fit_with_fixed_model(patient, atlas, config):
    normalized, record = normalize_intensity(patient, atlas.brain_mask)
    model = load_model(config.model)
    return normalized, record, model


# runtime_seconds is reported to the caller but never written: artifacts
# must be byte-identical across reruns of the same config
_FILE_REPORT_KEYS = ("status", "tm", "iterations", "candidate_voxels")


def _write_report(path: str, report: dict) -> None:
    lines = []
    for key in _FILE_REPORT_KEYS:
        if key in report:
            val = report[key]
            lines.append(f"{key}={format(val, '.17g') if isinstance(val, float) else val}")
    atomic_write_text(path, "\n".join(lines) + "\n")
