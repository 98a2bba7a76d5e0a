"""Piece-wise linear confidence calibration.

A map is fitted on validation predictions by binning confidences over
[1/K, 1], taking each occupied bin's (mean confidence, accuracy) as a knot,
and pooling adjacent violators until the knot heights are non-decreasing.
Applying the map blends the interpolated value with a tiny multiple of the
raw confidence, which makes it strictly increasing, so confidence rankings
(and hence AUROC/AUPRC) are untouched.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ContractError, ParseError

__all__ = [
    "PiecewiseLinearMap",
    "fit_pwlm",
    "apply_pwlm",
    "map_records",
    "save_pwlm",
    "load_pwlm",
]

PWLM_FORMAT = "evconf-pwlm"
PWLM_VERSION = 1
DEFAULT_EPSILON = 1e-6


class PiecewiseLinearMap:
    """Knots (x, y) with strictly increasing x and non-decreasing y, plus
    the blend epsilon that enforces strict monotonicity on application."""

    __slots__ = ("xs", "ys", "epsilon")

    def __init__(self, xs, ys, epsilon: float = DEFAULT_EPSILON):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ContractError("a map needs >= 2 knots with matching x and y")
        if not np.all(np.diff(xs) > 0.0):
            raise ContractError("knot x values must be strictly increasing")
        if np.any(np.diff(ys) < 0.0):
            raise ContractError("knot y values must be non-decreasing")
        if np.any(ys < 0.0) or np.any(ys > 1.0):
            raise ContractError("knot y values must lie in [0, 1]")
        if not 0.0 < epsilon < 1.0:
            raise ContractError("epsilon must lie in (0, 1)")
        self.xs = xs.copy()
        self.ys = ys.copy()
        self.xs.setflags(write=False)
        self.ys.setflags(write=False)
        self.epsilon = float(epsilon)

    def knots(self):
        return list(zip(self.xs.tolist(), self.ys.tolist()))

    def __repr__(self) -> str:
        return f"PiecewiseLinearMap({self.knots()}, epsilon={self.epsilon})"


def fit_pwlm(val_records, num_bins: int = 10,
             num_classes: int | None = None) -> PiecewiseLinearMap:
    """Fit a map from validation predictions.

    Confidences are binned into ``num_bins`` equal-width bins over
    [1/K, 1]; each occupied bin contributes a knot at (mean confidence,
    accuracy).  Pool-adjacent-violators enforces monotone heights, and
    clamped endpoint knots at 1/K and 1 pin down extrapolation.  A single
    occupied bin degenerates to a flat two-knot map.
    """
    if not val_records:
        raise ContractError("fitting needs at least one validation record")
    if num_bins < 1:
        raise ContractError("num_bins must be >= 1")
    if num_classes is None:
        pi = getattr(val_records[0], "pi_hat", None)
        if pi is None:
            raise ContractError(
                "num_classes is required when records carry no pi_hat"
            )
        num_classes = len(pi)
    if num_classes < 2:
        raise ContractError("num_classes must be >= 2")

    lo = 1.0 / num_classes
    conf = np.array([r.confidence for r in val_records], dtype=float)
    correct = np.array([r.correct for r in val_records], dtype=float)
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise ContractError("confidences must lie in [0, 1]")

    edges = np.linspace(lo, 1.0, num_bins + 1)
    idx = np.searchsorted(edges, np.clip(conf, lo, 1.0), side="left") - 1
    idx = np.clip(idx, 0, num_bins - 1)

    xs, ys, weights = [], [], []
    for b in range(num_bins):
        members = idx == b
        count = int(members.sum())
        if count == 0:
            continue
        xs.append(float(conf[members].mean()))
        ys.append(float(correct[members].mean()))
        weights.append(float(count))

    # pool adjacent violators: merge blocks until heights are non-decreasing
    blocks = [[x, y, w] for x, y, w in zip(xs, ys, weights)]
    i = 0
    while i < len(blocks) - 1:
        if blocks[i][1] > blocks[i + 1][1]:
            x1, y1, w1 = blocks[i]
            x2, y2, w2 = blocks[i + 1]
            merged_y = (y1 * w1 + y2 * w2) / (w1 + w2)
            blocks[i : i + 2] = [[x2, merged_y, w1 + w2]]
            # a merge can create a new violation on the left
            i = max(i - 1, 0)
        else:
            i += 1
    # pooled blocks keep their rightmost x; expand back so every original
    # knot x maps onto its block height
    pooled_y = []
    bi = 0
    for x in xs:
        while bi < len(blocks) - 1 and x > blocks[bi][0]:
            bi += 1
        pooled_y.append(blocks[bi][1])
    ys = pooled_y

    if len(xs) == 1:
        return PiecewiseLinearMap([lo, 1.0], [ys[0], ys[0]])

    if xs[0] > lo:
        xs.insert(0, lo)
        ys.insert(0, ys[0])
    if xs[-1] < 1.0:
        xs.append(1.0)
        ys.append(ys[-1])
    return PiecewiseLinearMap(xs, ys)


def apply_pwlm(pwlm: PiecewiseLinearMap, p):
    """Strictly monotone remap: (1 - eps) * interp(p) + eps * p, in [0, 1]."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ContractError("confidences must lie in [0, 1]")
    mapped = np.interp(arr, pwlm.xs, pwlm.ys)
    out = np.clip((1.0 - pwlm.epsilon) * mapped + pwlm.epsilon * arr, 0.0, 1.0)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def map_records(pwlm: PiecewiseLinearMap, records):
    """Copies of prediction records with calibrated confidences; every
    other field (including pi_hat) is left as-is."""
    return [
        dataclasses.replace(r, confidence=apply_pwlm(pwlm, r.confidence))
        for r in records
    ]


def save_pwlm(pwlm: PiecewiseLinearMap, path, comments=()) -> None:
    lines = [f"# {c}" for c in comments]
    lines += [f"{PWLM_FORMAT} {PWLM_VERSION}", f"epsilon {repr(pwlm.epsilon)}"]
    for x, y in zip(pwlm.xs, pwlm.ys):
        lines.append(f"{repr(float(x))} {repr(float(y))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_pwlm(path) -> PiecewiseLinearMap:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    first = 0
    while first < len(lines) and lines[first].lstrip().startswith("#"):
        first += 1
    if first >= len(lines):
        raise ParseError("empty calibration file", line=first + 1)
    header = lines[first].split()
    if len(header) != 2 or header[0] != PWLM_FORMAT:
        raise ParseError(f"not a {PWLM_FORMAT} file", line=first + 1)
    if header[1] != str(PWLM_VERSION):
        raise ParseError(f"unsupported calibration version {header[1]}", line=first + 1)
    if first + 1 >= len(lines) or not lines[first + 1].startswith("epsilon "):
        raise ParseError("missing epsilon line", line=first + 2)
    try:
        epsilon = float(lines[first + 1].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed epsilon: {exc}", line=first + 2) from exc
    xs, ys = [], []
    for i, line in enumerate(lines[first + 2:], start=first + 3):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected 'x y' knot line", line=i)
        try:
            xs.append(float(parts[0]))
            ys.append(float(parts[1]))
        except ValueError as exc:
            raise ParseError(f"malformed knot: {exc}", line=i) from exc
    return PiecewiseLinearMap(xs, ys, epsilon=epsilon)
