"""Atlas-guided Bayesian abnormality mapping.

For every brain voxel we hold two tissue-probability triples (CSF, GM, WM):

* the *prior* read off a probabilistic atlas at that location, and
* the *posterior* obtained by reweighting the prior with the Gaussian
  likelihood of the voxel's normalized intensity under each mixture
  component.

Healthy tissue leaves the two triples strongly correlated.  The Pearson
correlation CC between them is therefore a per-voxel normality score, which
a conflict mapping turns into an abnormality score CM:

    CM = 1 - CC   if CC > 0
    CM = -CC      otherwise

The mapping is deliberately discontinuous at CC = 0: zero correlation maps
to 0, while any infinitesimally positive correlation maps to nearly 1.
Scaling CM by omega (0..255 by default) yields the abnormality volume used
for candidate extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ngmm import TissueMixtureModel, gaussian_pdf
from .volume import BinaryMask, ScalarVolume, require_same_grid

BAYES_DENOMINATOR_FLOOR = 1e-300
CC_VARIANCE_FLOOR = 1e-12


class TissueTriple(NamedTuple):
    csf: float
    gm: float
    wm: float


@dataclass
class ProbabilisticAtlas:
    """Intensity template plus per-tissue probability maps on one grid."""

    template: ScalarVolume
    prob_csf: ScalarVolume
    prob_gm: ScalarVolume
    prob_wm: ScalarVolume
    brain_mask: BinaryMask

    # Probability maps travel through float32 files, so the unit-interval
    # and unit-sum checks get slack well above float32 rounding (~1e-7).
    _PROB_TOL = 1e-6

    def __post_init__(self):
        for name in ("prob_csf", "prob_gm", "prob_wm"):
            require_same_grid(self.template, getattr(self, name), f"template and {name}")
        require_same_grid(self.template, self.brain_mask, "template and brain mask")
        total = np.zeros(self.template.dims)
        for name in ("prob_csf", "prob_gm", "prob_wm"):
            p = getattr(self, name).data
            if p.min() < -self._PROB_TOL or p.max() > 1 + self._PROB_TOL:
                raise ValueError(f"{name} has values outside [0, 1]")
            total += p
        if total.max() > 1 + self._PROB_TOL:
            raise ValueError("tissue probabilities sum to more than 1 somewhere")

    @property
    def dims(self):
        return self.template.dims

    @property
    def spacing(self):
        return self.template.spacing

    def probability_stack(self) -> np.ndarray:
        """(3, nx, ny, nz) array in CSF, GM, WM order."""
        return np.stack(
            [self.prob_csf.data, self.prob_gm.data, self.prob_wm.data]
        ).astype(np.float64)


@dataclass
class GbbmParams:
    omega: float = 255.0

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValueError(f"omega must be positive and finite, got {self.omega}")


def spatial_prior(atlas: ProbabilisticAtlas, voxel) -> TissueTriple:
    """Normalized tissue prior at one voxel index.

    Voxels where all three maps read zero get the uninformative prior
    (1/3, 1/3, 1/3).
    """
    i, j, k = (int(v) for v in voxel)
    nx, ny, nz = atlas.dims
    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
        raise ValueError(f"voxel {voxel!r} outside grid {atlas.dims}")
    xi = (
        float(atlas.prob_csf.data[i, j, k]),
        float(atlas.prob_gm.data[i, j, k]),
        float(atlas.prob_wm.data[i, j, k]),
    )
    s = xi[0] + xi[1] + xi[2]
    if s <= 0.0:
        return TissueTriple(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    return TissueTriple(xi[0] / s, xi[1] / s, xi[2] / s)


def posterior_triple(model: TissueMixtureModel, prior, x: float) -> TissueTriple:
    """Bayes update of a tissue prior with the intensity likelihoods.

    p(k | x) = prior_k * N(x; mu_k, sigma_k) / sum_j prior_j * N(x; mu_j, sigma_j)

    When every weighted likelihood underflows (denominator below 1e-300)
    the intensity carries no usable evidence and the prior is returned
    unchanged.
    """
    if model.n_components != 3:
        raise ValueError(f"posterior needs a 3-component model, got K={model.n_components}")
    if not math.isfinite(x):
        raise ValueError(f"intensity must be finite, got {x}")
    p = tuple(float(v) for v in prior)
    if len(p) != 3 or any(not math.isfinite(v) or v < 0 for v in p):
        raise ValueError(f"prior must be three nonnegative finite values, got {prior!r}")
    numer = tuple(
        p[j] * gaussian_pdf(x, model.means[j], model.stds[j]) for j in range(3)
    )
    denom = numer[0] + numer[1] + numer[2]
    if denom < BAYES_DENOMINATOR_FLOOR:
        return TissueTriple(*p)
    return TissueTriple(numer[0] / denom, numer[1] / denom, numer[2] / denom)


def pearson_cc(a, b) -> float:
    """Pearson correlation of two 3-vectors, 0.0 when either is (near)
    constant (variance below 1e-12)."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != (3,) or bv.shape != (3,):
        raise ValueError("pearson_cc expects two length-3 vectors")
    if not (np.isfinite(av).all() and np.isfinite(bv).all()):
        raise ValueError("pearson_cc inputs must be finite")
    ac = av - av.mean()
    bc = bv - bv.mean()
    var_a = float(ac @ ac) / 3.0
    var_b = float(bc @ bc) / 3.0
    if var_a < CC_VARIANCE_FLOOR or var_b < CC_VARIANCE_FLOOR:
        return 0.0
    cc = (float(ac @ bc) / 3.0) / math.sqrt(var_a * var_b)
    return min(1.0, max(-1.0, cc))


def cc_to_cm(cc: float) -> float:
    """Conflict mapping: positive correlation folds to 1-CC, the rest to -CC."""
    if not (math.isfinite(cc) and -1.0 <= cc <= 1.0):
        raise ValueError(f"CC must lie in [-1, 1], got {cc}")
    return 1.0 - cc if cc > 0.0 else -cc


def build_gbbm(
    patient: ScalarVolume,
    atlas: ProbabilisticAtlas,
    model: TissueMixtureModel,
    params: GbbmParams | None = None,
    diagnostics: dict | None = None,
) -> ScalarVolume:
    """Whole-volume abnormality map: omega * CM at brain voxels, 0 elsewhere.

    ``patient`` must already be normalized and registered onto the atlas
    grid.  The computation is the vectorized equivalent of evaluating
    spatial_prior -> posterior_triple -> pearson_cc -> cc_to_cm voxel by
    voxel.  Optional ``diagnostics`` (a dict) receives counts of degenerate
    voxels.
    """
    params = params or GbbmParams()
    if model.n_components != 3:
        raise ValueError(f"abnormality map needs a 3-component model, got K={model.n_components}")
    require_same_grid(patient, atlas.template, "patient and atlas")

    xi = atlas.probability_stack()
    s = xi.sum(axis=0)
    prior = np.where(s > 0.0, np.divide(xi, s, where=s > 0.0), 1.0 / 3.0)

    x = np.asarray(patient.data, dtype=np.float64)
    like = np.stack([gaussian_pdf(x, model.means[j], model.stds[j]) for j in range(3)])
    numer = prior * like
    denom = numer.sum(axis=0)
    degenerate = denom < BAYES_DENOMINATOR_FLOOR
    posterior = np.where(degenerate, prior, np.divide(numer, denom, where=~degenerate))

    ac = posterior - posterior.mean(axis=0)
    bc = prior - prior.mean(axis=0)
    var_a = (ac * ac).sum(axis=0) / 3.0
    var_b = (bc * bc).sum(axis=0) / 3.0
    cov = (ac * bc).sum(axis=0) / 3.0
    cc_defined = (var_a >= CC_VARIANCE_FLOOR) & (var_b >= CC_VARIANCE_FLOOR)
    denom_cc = np.sqrt(var_a * var_b, where=cc_defined, out=np.ones_like(var_a))
    cc = np.where(cc_defined, cov / denom_cc, 0.0)
    cc = np.clip(cc, -1.0, 1.0)

    cm = np.where(cc > 0.0, 1.0 - cc, -cc)
    inside = atlas.brain_mask.data
    out = np.where(inside, params.omega * cm, 0.0)

    if diagnostics is not None:
        diagnostics["degenerate_bayes_voxels"] = int((degenerate & inside).sum())
        diagnostics["degenerate_cc_voxels"] = int((~cc_defined & inside).sum())
    return ScalarVolume(out, patient.spacing)
