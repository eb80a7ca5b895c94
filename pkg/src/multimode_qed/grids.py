"""Feature-adapted frequency grids.

Each feature (center c, half-width w, density q) asks for uniform spacing
w/q within +-10 w of c; beyond that the spacing grows linearly with the
distance at rate 1/q, capped by the background spacing.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .model import FrequencyGrid, NumericalPreconditionError

WINDOW = 10.0
MAX_POINTS = 10_000_000


@njit(cache=True)
def _march(start, stop, centers, hws, qs, h_bg, window, max_points):
    reach = window * hws + qs * h_bg
    lo_edge = centers - reach
    hi_edge = centers + reach
    nf = centers.size
    out = np.empty(min(max_points, 1 << 16))
    n = 0
    w = start
    first = 0
    while True:
        if n >= out.size:
            if out.size >= max_points:
                return out[:0]
            bigger = np.empty(min(max_points, 2 * out.size))
            bigger[:n] = out[:n]
            out = bigger
        out[n] = w
        n += 1
        if w >= stop:
            break
        while first < nf and hi_edge[first] < w:
            first += 1
        h = h_bg
        j = first
        while j < nf and lo_edge[j] <= w:
            if hi_edge[j] >= w:
                excess = abs(w - centers[j]) - window * hws[j]
                hj = hws[j] / qs[j]
                if excess > 0:
                    hj += excess / qs[j]
                if hj < h:
                    h = hj
            j += 1
        rem = stop - w
        if rem <= h * (1.0 + 1e-12):
            w = stop
        elif rem < 1.5 * h:
            # two equal steps rather than a stretched or a sliver interval
            w += 0.5 * rem
        else:
            w += h
    return out[:n]


def _prepare(centers, half_widths, qs, start, stop, window):
    centers = np.asarray(centers, dtype=float).ravel()
    hws = np.asarray(half_widths, dtype=float).ravel()
    qs = np.broadcast_to(np.asarray(qs, dtype=float), centers.shape).copy()
    keep = (hws > 0) & (centers + window * hws > start) & (centers - window * hws < stop)
    return centers[keep], hws[keep], qs[keep]


def march_nodes(start: float, stop: float, centers, half_widths, qs, spacing: float,
                window: float = WINDOW, max_points: int = MAX_POINTS) -> np.ndarray:
    centers, hws, qs = _prepare(centers, half_widths, qs, start, stop, window)
    order = np.argsort(centers - (window * hws + qs * spacing))
    nodes = _march(float(start), float(stop), centers[order], hws[order], qs[order],
                   float(spacing), float(window), int(max_points))
    if nodes.size == 0:
        raise NumericalPreconditionError(
            f"frequency grid exceeds {max_points} points; reduce t_end or raise the tolerance")
    return nodes


def feature_grid(omega_max: float, centers, half_widths, spacing: float, q=20,
                 window: float = WINDOW, max_points: int = MAX_POINTS) -> FrequencyGrid:
    """Grid on [0, omega_max] resolving all (center, half-width) features.

    ``q`` is the number of nodes per half-width, scalar or per feature.
    """
    return FrequencyGrid(march_nodes(0.0, omega_max, centers, half_widths, q, spacing,
                                     window, max_points))


def merge_nodes(*node_sets, omega_max: float, max_points: int = MAX_POINTS) -> FrequencyGrid:
    """Union of node sets on [0, omega_max] with near-duplicates removed."""
    nodes = np.unique(np.concatenate([np.asarray(s, dtype=float) for s in node_sets]))
    nodes = nodes[(nodes >= 0) & (nodes <= omega_max)]
    if nodes.size > max_points:
        raise NumericalPreconditionError(
            f"frequency grid exceeds {max_points} points; reduce t_end or raise the tolerance")
    scale = 1e-12 * max(1.0, omega_max)
    keep = np.concatenate([[True], np.diff(nodes) > scale])
    return FrequencyGrid(nodes[keep])
