"""Singular-value-band clutter filter: drop leading (tissue) components, keep a band."""

from dataclasses import dataclass

import numpy as np

from .casorati import svd


@dataclass
class SvdCutoffs:
    """Kept band of singular components; high_cut None means full rank."""

    low_cut: int
    high_cut: int | None = None


def svd_clutter_filter(d_mat, cut):
    """Reconstruct d_mat from singular components low_cut+1 .. high_cut (1-indexed)."""
    d_mat = np.asarray(d_mat)
    rank = min(d_mat.shape)
    hi = rank if cut.high_cut is None else cut.high_cut
    if not 0 <= cut.low_cut < hi <= rank:
        raise ValueError(f"cutoff band ({cut.low_cut}, {hi}] invalid for rank {rank}")
    u, s, v = svd(d_mat)
    band = slice(cut.low_cut, hi)
    return (u[:, band] * s[band]) @ v[:, band].conj().T


def estimate_low_cut(singular_values, fraction=0.01):
    """Count of leading components to drop: first spot the spectrum falls below fraction*s1."""
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        raise ValueError("empty singular value list")
    if s.size == 1:
        raise ValueError("need at least two singular values to split a band")
    if not s[0] > 0:
        raise ValueError("leading singular value must be positive")
    if np.any(np.diff(s) > 1e-12 * s[0]):
        raise ValueError("singular values must be non-increasing")
    below = np.nonzero(s[1:] < fraction * s[0])[0]
    k = int(below[0] + 1) if below.size else s.size - 1
    return min(max(k, 1), s.size - 1)
