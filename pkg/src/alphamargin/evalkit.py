"""Verification scoring and diagnostics: trial scoring, FRR@FAR, DET curves
and the sparsity/misalignment statistics of trained models.

Tie handling: impostor scores equal to the threshold count as accepted
(>= comparison). FAR targets below 1/|impostor| raise UnattainableFARError
instead of extrapolating.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import losses
from .errors import UnattainableFARError


@dataclass
class TrialScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64)
        self.impostor = np.asarray(self.impostor, dtype=np.float64)
        if not (np.all(np.isfinite(self.genuine)) and np.all(np.isfinite(self.impostor))):
            raise ValueError("trial scores must be finite")


@dataclass
class SparsityReport:
    misaligned_identity_fraction: float
    misaligned_image_fraction: float
    posterior_sparsity: float
    onehot_fraction: float

    def to_dict(self):
        return {
            "misaligned_identity_fraction": self.misaligned_identity_fraction,
            "misaligned_image_fraction": self.misaligned_image_fraction,
            "posterior_sparsity": self.posterior_sparsity,
            "onehot_fraction": self.onehot_fraction,
        }


def make_trials(labels, n_genuine, n_impostor, seed):
    """Sample (i, j, is_genuine) index pairs from a label vector."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_id = {}
    for i, y in enumerate(labels):
        by_id.setdefault(int(y), []).append(i)
    multi = [v for v in by_id.values() if len(v) >= 2]
    if not multi:
        raise ValueError("no identity has >= 2 samples; cannot build genuine trials")
    trials = []
    for _ in range(n_genuine):
        grp = multi[rng.integers(len(multi))]
        i, j = rng.choice(len(grp), size=2, replace=False)
        trials.append((grp[i], grp[j], True))
    n = len(labels)
    made = 0
    while made < n_impostor:
        i, j = rng.integers(n, size=2)
        if labels[i] != labels[j]:
            trials.append((int(i), int(j), False))
            made += 1
    return trials


def score_trials(embeddings, trials) -> TrialScoreSet:
    """Cosine scores for (i, j, is_genuine) trials over unit-norm embeddings."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    genuine, impostor = [], []
    for i, j, same in trials:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"trial index ({i}, {j}) out of range for {n} embeddings")
        s = float(embeddings[i] @ embeddings[j])
        (genuine if same else impostor).append(s)
    return TrialScoreSet(genuine=np.array(genuine), impostor=np.array(impostor))


def frr_at_far(scores: TrialScoreSet, far_target: float):
    """Smallest threshold whose FAR is <= far_target, and the FRR there.

    FAR(t) = fraction of impostor scores >= t; FRR(t) = fraction of genuine
    scores < t. Thresholds are swept over the observed impostor scores, the
    points where FAR actually changes (resolution 1/|impostor|).
    """
    if len(scores.genuine) == 0 or len(scores.impostor) == 0:
        raise ValueError("both genuine and impostor score lists must be nonempty")
    if not 0.0 < far_target <= 1.0:
        raise ValueError(f"far_target must be in (0, 1], got {far_target}")
    n_imp = len(scores.impostor)
    if far_target < 1.0 / n_imp:
        raise UnattainableFARError(
            f"FAR target {far_target:g} is below the 1/{n_imp} resolution of the impostor set"
        )
    for t in np.unique(scores.impostor):
        far = np.mean(scores.impostor >= t)
        if far <= far_target:
            frr = float(np.mean(scores.genuine < t))
            return frr, float(t)
    # a duplicated maximum impostor score can leave every candidate above target
    raise UnattainableFARError(
        f"no impostor-score threshold reaches FAR <= {far_target:g} "
        "(tied scores at the top of the impostor list)"
    )


def det_points(scores: TrialScoreSet):
    """DET sweep: (far, frr, threshold) rows sorted by far ascending."""
    thresholds = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    rows = []
    for t in thresholds[::-1]:  # descending threshold -> ascending FAR
        far = float(np.mean(scores.impostor >= t))
        frr = float(np.mean(scores.genuine < t))
        rows.append((far, frr, float(t)))
    return rows


def write_det_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["far", "frr", "threshold"])
        for far, frr, t in rows:
            w.writerow([repr(far), repr(frr), repr(t)])


def avg_relative_improvement(det_ours, det_base, far_lo, far_hi, n_grid=50):
    """Trapezoidal average over log-FAR of (frr_base - frr_ours) / frr_base.

    Convention for the 'average improvement over a FAR interval' summary; the
    DET curves are interpolated on a shared log-spaced FAR grid.
    """

    def interp(det, grid):
        fars = np.array([r[0] for r in det])
        frrs = np.array([r[1] for r in det])
        order = np.argsort(fars)
        return np.interp(grid, fars[order], frrs[order])

    grid = np.logspace(np.log10(far_lo), np.log10(far_hi), n_grid)
    ours = interp(det_ours, grid)
    base = interp(det_base, grid)
    ok = base > 0
    rel = np.zeros_like(base)
    rel[ok] = (base[ok] - ours[ok]) / base[ok]
    return float(np.trapezoid(rel, np.log10(grid)) / (np.log10(far_hi) - np.log10(far_lo)))


def sparsity_report(embeddings, labels, prototypes, loss_cfg, params) -> SparsityReport:
    """Misalignment (p_y = 0) and sparsity statistics of the loss posterior.

    Zeros are exact zeros from the solver's clip; no epsilon pruning. For the
    dense baseline losses every statistic except onehot_fraction is zero by
    construction.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    C = embeddings @ prototypes.T
    P = losses.batch_posteriors(C, labels, loss_cfg, params)
    n, k = P.shape
    rows = np.arange(n)
    py_zero = P[rows, labels] == 0.0
    nnz = np.count_nonzero(P, axis=1)
    misaligned_images = float(np.mean(py_zero))
    ids = np.unique(labels)
    all_zero = [bool(np.all(py_zero[labels == y])) for y in ids]
    return SparsityReport(
        misaligned_identity_fraction=float(np.mean(all_zero)),
        misaligned_image_fraction=misaligned_images,
        posterior_sparsity=float(np.mean((k - nnz) / k)),
        onehot_fraction=float(np.mean(nnz == 1)),
    )
