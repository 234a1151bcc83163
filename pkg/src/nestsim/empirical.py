"""Piecewise-constant likelihood ratios estimated from binned sample counts.

Bins are right-closed intervals ``(b[a-1], b[a]]`` whose boundaries are
reference order statistics (quantile partition) or evenly spaced between the
reference extremes (equidistant partition).  The ratio in each bin is the
target count over the reference count, scaled by the sample sizes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from nestsim.errors import EmptyReferenceBinError, ParameterDomainError

DEFAULT_BINS = 5


@dataclass(frozen=True)
class EmpiricalRatio:
    breakpoints: np.ndarray
    ratios: np.ndarray
    ref_counts: np.ndarray
    target_counts: np.ndarray
    m: int

    @property
    def l(self) -> int:  # noqa: E743
        return self.ratios.shape[0]

    def __call__(self, y):
        return evaluate_empirical_ratio(self, y)

    def to_csv(self, path):
        """Write one row per bin: left and right boundary, counts and ratio."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["left", "right", "ref_count", "target_count", "ratio"])
            for a in range(self.l):
                out.writerow([
                    repr(float(self.breakpoints[a])), repr(float(self.breakpoints[a + 1])),
                    int(self.ref_counts[a]), int(self.target_counts[a]), repr(float(self.ratios[a])),
                ])


def bin_index(breakpoints, y):
    """Bin of each y under right-closed bins; values outside the range go to the end bins."""
    return np.searchsorted(breakpoints[1:-1], np.asarray(y, dtype=float), side="left")


def _quantile_breakpoints(ref_sorted, l):
    m = ref_sorted.shape[0]
    idx = np.rint(np.arange(1, l) * m / l).astype(int) - 1
    bp = np.empty(l + 1)
    bp[0] = ref_sorted[0]
    bp[1:-1] = ref_sorted[idx]
    bp[-1] = ref_sorted[-1]
    return bp


def build_empirical_ratio(ref_samples, target_samples, l=DEFAULT_BINS, partition="quantile",
                          outside="clamp") -> EmpiricalRatio:
    """Estimate p_target / p_ref as a step function on ``l`` bins.

    ``outside`` controls target samples beyond the reference range:
    ``"clamp"`` counts them in the end bins, ``"drop"`` discards them.
    """
    ref = np.sort(np.asarray(ref_samples, dtype=float).reshape(-1))
    tgt = np.asarray(target_samples, dtype=float).reshape(-1)
    m = ref.shape[0]
    if l < 1:
        raise ParameterDomainError(f"need at least one bin, got {l}")
    if m < l:
        raise ParameterDomainError(f"need at least l={l} reference samples, got {m}")
    if tgt.shape[0] == 0:
        raise ParameterDomainError("need target samples")
    if partition == "quantile":
        bp = _quantile_breakpoints(ref, l)
    elif partition == "equidistant":
        bp = np.linspace(ref[0], ref[-1], l + 1)
    else:
        raise ParameterDomainError(f"unknown partition {partition!r}")
    # the first bin may collapse onto the reference minimum when m / l is small
    if np.any(np.diff(bp[1:]) <= 0) or bp[1] < bp[0] or bp[-1] <= bp[0]:
        raise EmptyReferenceBinError("reference samples have ties at bin boundaries; use fewer bins")

    if outside == "drop":
        tgt = tgt[(tgt >= bp[0]) & (tgt <= bp[-1])]
    elif outside != "clamp":
        raise ParameterDomainError(f"unknown outside policy {outside!r}")

    ref_counts = np.bincount(bin_index(bp, ref), minlength=l)
    tgt_counts = np.bincount(bin_index(bp, tgt), minlength=l)
    if np.any(ref_counts == 0):
        empty = int(np.flatnonzero(ref_counts == 0)[0])
        raise EmptyReferenceBinError(f"reference bin {empty} is empty")
    n_target = np.asarray(target_samples).size
    ratios = (tgt_counts / n_target) / (ref_counts / m)
    return EmpiricalRatio(bp, ratios, ref_counts, tgt_counts, m)


def evaluate_empirical_ratio(ratio: EmpiricalRatio, y):
    return ratio.ratios[bin_index(ratio.breakpoints, y)]
