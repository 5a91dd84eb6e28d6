"""Dice scoring and the continual-learning metric suite.

Everything reads off the DxD train-test matrix R, where R[i][j] is the mean
Dice on domain j after training through domain i: TL averages the diagonal,
REM penalizes sub-diagonal drops below the diagonal, BWT+ credits
sub-diagonal gains, CL_DSC averages the diagonal-and-below triangle, and FWT
averages the strictly-above triangle.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError, SegclError

METRIC_NAMES = ("CL_DSC", "REM", "BWT_plus", "TL", "FWT")


@dataclass
class TrainTestMatrix:
    R: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.R.ndim != 2 or self.R.shape[0] != self.R.shape[1]:
            raise SegclError(f"R must be square, got shape {self.R.shape}")
        if self.R.shape[0] < 2:
            raise SegclError("D must be >= 2")
        if np.isnan(self.R).any():
            raise SegclError("R has unpopulated entries")
        if self.R.min() < 0.0 or self.R.max() > 1.0:
            raise SegclError("R entries must lie in [0, 1]")

    @property
    def D(self):
        return self.R.shape[0]


@dataclass
class CLMetrics:
    TL: float
    REM: float
    BWT_plus: float
    CL_DSC: float
    FWT: float

    def to_dict(self):
        return {name: float(getattr(self, name)) for name in METRIC_NAMES}

    @classmethod
    def from_dict(cls, d):
        return cls(
            TL=float(d["TL"]),
            REM=float(d["REM"]),
            BWT_plus=float(d["BWT_plus"]),
            CL_DSC=float(d["CL_DSC"]),
            FWT=float(d["FWT"]),
        )


def dice_score(pred_labels, gt_labels, num_classes):
    """Per-class Dice 2|P∩G| / (|P|+|G|) plus the mean over present classes.

    Classes absent from both maps are excluded from the mean (their slot is
    NaN); a class predicted but absent from the ground truth scores 0.
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise SegclError(f"dice_score shape mismatch: {pred.shape} vs {gt.shape}")
    per_class = np.full(num_classes, np.nan)
    for c in range(num_classes):
        p = pred == c
        g = gt == c
        denom = int(p.sum()) + int(g.sum())
        if denom == 0:
            continue
        per_class[c] = 2.0 * int((p & g).sum()) / denom
    present = per_class[~np.isnan(per_class)]
    mean = float(present.mean()) if present.size else np.nan
    return per_class, mean


def foreground_mean_dice(pred_labels, gt_labels, num_classes):
    """Mean Dice over non-background classes present in the ground truth.

    This is the convention behind every R entry: background dominance must
    not mask forgetting of small structures.
    """
    per_class, _ = dice_score(pred_labels, gt_labels, num_classes)
    gt = np.asarray(gt_labels)
    scores = [per_class[c] for c in range(1, num_classes) if (gt == c).any()]
    if not scores:
        raise SegclError("ground truth contains no foreground class")
    return float(np.mean(scores))


def cl_metrics(matrix):
    """All five continual-learning metrics of a train-test matrix."""
    R = matrix.R if isinstance(matrix, TrainTestMatrix) else TrainTestMatrix(matrix).R
    D = R.shape[0]
    diag = np.diag(R)
    tl = float(diag.mean())

    sub_i, sub_j = np.tril_indices(D, k=-1)
    drops = R[sub_i, sub_j] - diag[sub_j]
    npairs = D * (D - 1) / 2
    rem = float((1.0 - np.abs(np.minimum(drops, 0.0))).sum() / npairs)
    bwt_plus = float(np.maximum(drops, 0.0).sum() / npairs)

    low_i, low_j = np.tril_indices(D)
    cl_dsc = float(R[low_i, low_j].mean())
    up_i, up_j = np.triu_indices(D, k=1)
    fwt = float(R[up_i, up_j].mean())
    return CLMetrics(TL=tl, REM=rem, BWT_plus=bwt_plus, CL_DSC=cl_dsc, FWT=fwt)


def write_matrix_csv(matrix, path):
    R = matrix.R if isinstance(matrix, TrainTestMatrix) else TrainTestMatrix(matrix).R
    D = R.shape[0]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"domain_{j + 1}" for j in range(D)])
        for row in R:
            writer.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    rows = [r for r in rows if r]
    if not rows:
        raise FileFormatError(f"{path}: empty matrix file")
    D = len(rows[0])
    if D < 2:
        raise FileFormatError(f"{path}: D must be >= 2, header has {D} columns")
    if len(rows) - 1 != D:
        raise FileFormatError(f"{path}: expected {D} data rows after the header, found {len(rows) - 1}")
    data = np.empty((D, D))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != D:
            raise FileFormatError(f"{path}: row {i} has {len(row)} values, expected {D}")
        try:
            data[i - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise FileFormatError(f"{path}: row {i}: {exc}")
    try:
        return TrainTestMatrix(data)
    except SegclError as exc:
        raise FileFormatError(f"{path}: {exc}")


def metrics_to_json(clm):
    return json.dumps(clm.to_dict(), sort_keys=True, indent=2) + "\n"


def write_metrics_json(clm, path):
    with open(path, "w") as f:
        f.write(metrics_to_json(clm))


def read_metrics_json(path):
    with open(path) as f:
        return CLMetrics.from_dict(json.load(f))
