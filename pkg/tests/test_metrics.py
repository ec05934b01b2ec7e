import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fvfseg.errors import GridMismatchError
from fvfseg.metrics import OverlapReport, tanimoto
from fvfseg.volume import BinaryMask

from .oracles import tanimoto_oracle

UNIT = (1.0, 1.0, 1.0)


def masks(side=6):
    return hnp.arrays(dtype=bool, shape=(side, side, side))


@given(masks(), masks())
def test_matches_loop_oracle(a, b):
    report = tanimoto(BinaryMask(a, UNIT), BinaryMask(b, UNIT))
    assert report.tanimoto == pytest.approx(tanimoto_oracle(a, b), abs=1e-15)


@given(masks())
def test_identical_masks_score_one(a):
    report = tanimoto(BinaryMask(a, UNIT), BinaryMask(a.copy(), UNIT))
    assert report.tanimoto == 1.0


@given(masks(), masks())
def test_symmetry(a, b):
    ab = tanimoto(BinaryMask(a, UNIT), BinaryMask(b, UNIT))
    ba = tanimoto(BinaryMask(b, UNIT), BinaryMask(a, UNIT))
    assert ab.tanimoto == ba.tanimoto


def test_two_empty_masks_match_perfectly():
    empty = BinaryMask(np.zeros((4, 4, 4), dtype=bool), UNIT)
    assert tanimoto(empty, empty).tanimoto == 1.0


def test_empty_versus_nonempty_scores_zero():
    empty = np.zeros((4, 4, 4), dtype=bool)
    full = np.ones((4, 4, 4), dtype=bool)
    report = tanimoto(BinaryMask(empty, UNIT), BinaryMask(full, UNIT))
    assert report.tanimoto == 0.0


def test_disjoint_masks_score_zero():
    a = np.zeros((4, 4, 4), dtype=bool)
    b = np.zeros((4, 4, 4), dtype=bool)
    a[0, 0, 0] = True
    b[3, 3, 3] = True
    assert tanimoto(BinaryMask(a, UNIT), BinaryMask(b, UNIT)).tanimoto == 0.0


def test_half_overlap():
    a = np.zeros((4, 4, 4), dtype=bool)
    b = np.zeros((4, 4, 4), dtype=bool)
    a[0:2, 0, 0] = True  # {0,1}
    b[1:3, 0, 0] = True  # {1,2}
    report = tanimoto(BinaryMask(a, UNIT), BinaryMask(b, UNIT))
    assert report.tanimoto == pytest.approx(1.0 / 3.0)
    assert report.n_intersection == 1
    assert report.n_union == 3


def test_report_counts(rng):
    a = rng.random((5, 5, 5)) > 0.5
    b = rng.random((5, 5, 5)) > 0.5
    report = tanimoto(BinaryMask(a, UNIT), BinaryMask(b, UNIT))
    assert report.n_x == a.sum()
    assert report.n_g == b.sum()
    assert report.n_intersection == (a & b).sum()
    assert isinstance(report, OverlapReport)


def test_grid_mismatch_rejected():
    a = BinaryMask(np.zeros((4, 4, 4), dtype=bool), UNIT)
    b = BinaryMask(np.zeros((4, 4, 5), dtype=bool), UNIT)
    with pytest.raises(GridMismatchError):
        tanimoto(a, b)
    c = BinaryMask(np.zeros((4, 4, 4), dtype=bool), (1, 1, 2))
    with pytest.raises(GridMismatchError):
        tanimoto(a, c)
