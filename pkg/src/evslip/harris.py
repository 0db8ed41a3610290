"""Event-by-event e-Harris scoring on a binarized SAE patch.

Two code paths compute the same score:

* :func:`harris_score` / :func:`label_stream` work on single events and are
  easy to read;
* :meth:`EHarrisDetector.label_batch` runs a compiled kernel over an
  :class:`~evslip.events.EventBatch` for offline replay and the simulator.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Iterable, Iterator, Protocol

import numba
import numpy as np

from .events import (
    EMPTY,
    BinaryPatch,
    Event,
    EventBatch,
    SurfaceOfActiveEvents,
    binarized_patch,
    patch_priority,
)


class FeatureClass(enum.IntEnum):
    FLAT = 0
    EDGE = 1
    CORNER = 2


@dataclass(frozen=True)
class HarrisParams:
    patch_side: int = 9
    n_latest: int = 20
    corner_threshold: float = 10.0
    edge_threshold: float = -0.01
    harris_k: float = 0.04
    gaussian_sigma: float = 1.5

    def __post_init__(self) -> None:
        if self.patch_side % 2 != 1 or self.patch_side < 3:
            raise ValueError("patch_side must be odd and >= 3")
        if not 1 <= self.n_latest <= self.patch_side**2:
            raise ValueError("n_latest must lie in [1, patch_side**2]")
        if not self.edge_threshold < 0 < self.corner_threshold:
            raise ValueError("thresholds must satisfy edge < 0 < corner")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")


@dataclass(frozen=True, slots=True)
class LabeledEvent:
    event: Event
    label: FeatureClass
    score: float


# Sobel kernels, x increases along columns and y along rows.
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.int64)
SOBEL_Y = SOBEL_X.T.copy()


def gaussian_weights(side: int, sigma: float) -> np.ndarray:
    """Normalized Gaussian over the (side-2)^2 grid of valid Sobel responses."""
    g = side - 2
    r = np.arange(g) - g // 2
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def structure_tensor(bits: np.ndarray, sigma: float) -> tuple[float, float, float]:
    b = bits.astype(np.int64)
    # valid-mode correlation with the 3x3 kernels
    gx = (
        -b[:-2, :-2] + b[:-2, 2:]
        - 2 * b[1:-1, :-2] + 2 * b[1:-1, 2:]
        - b[2:, :-2] + b[2:, 2:]
    )
    gy = (
        -b[:-2, :-2] - 2 * b[:-2, 1:-1] - b[:-2, 2:]
        + b[2:, :-2] + 2 * b[2:, 1:-1] + b[2:, 2:]
    )
    w = gaussian_weights(bits.shape[0], sigma)
    return float((w * gx * gx).sum()), float((w * gy * gy).sum()), float((w * gx * gy).sum())


def harris_score(patch: BinaryPatch, params: HarrisParams = HarrisParams()) -> float:
    """det(M) - k * trace(M)^2 of the Gaussian-weighted structure tensor."""
    if patch.side != params.patch_side:
        raise ValueError(f"patch side {patch.side} != configured {params.patch_side}")
    sxx, syy, sxy = structure_tensor(patch.bits, params.gaussian_sigma)
    return sxx * syy - sxy * sxy - params.harris_k * (sxx + syy) ** 2


def classify_event(score: float, params: HarrisParams = HarrisParams()) -> FeatureClass:
    if score >= params.corner_threshold:
        return FeatureClass.CORNER
    if score <= params.edge_threshold:
        return FeatureClass.EDGE
    return FeatureClass.FLAT


# --------------------------------------------------------------------------
# compiled batch path


@numba.njit(cache=True, nogil=True, inline="always")
def _kth_newest(vals, kth, lo, hi):
    """Threshold selecting the ``kth`` newest stamps of ``vals``.

    Bisection on the value range with the invariant
    ``count(vals >= lo) > kth > count(vals >= hi)``.  Returns ``(thr, exact)``:
    when ``exact`` is true exactly ``kth`` stamps are ``>= thr``; otherwise
    ``thr`` is the kth newest stamp itself and ties at it must be broken by
    the caller.  Counting stays branch-free and vectorizes, which beats
    quickselect on these short arrays.  Empty cells (-1) never count since
    ``lo`` starts at the oldest valid stamp.
    """
    while hi - lo > 1:
        mid = lo + (hi - lo) // 2
        c = 0
        for j in range(vals.shape[0]):
            c += vals[j] >= mid
        if c == kth:
            return mid, True
        if c > kth:
            lo = mid
        else:
            hi = mid
    return lo, False


@numba.njit(cache=True, nogil=True, fastmath=True)
def _patch_score(bits, wgrid, side, k):
    """Harris response of a flattened binary patch.

    ``wgrid`` holds the Gaussian weight of each valid Sobel position at the
    index of its top-left cell and zero in the two wrap-around columns, so a
    single flat loop covers every valid position.
    """
    sxx = 0.0
    syy = 0.0
    sxy = 0.0
    s2 = 2 * side
    for i in range(wgrid.shape[0]):
        gx = (bits[i + 2] - bits[i]) + 2.0 * (bits[i + side + 2] - bits[i + side]) + (bits[i + s2 + 2] - bits[i + s2])
        gy = (bits[i + s2] - bits[i]) + 2.0 * (bits[i + s2 + 1] - bits[i + 1]) + (bits[i + s2 + 2] - bits[i + 2])
        wt = wgrid[i]
        sxx += wt * gx * gx
        syy += wt * gy * gy
        sxy += wt * gx * gy
    return sxx * syy - sxy * sxy - k * (sxx + syy) * (sxx + syy)


def _flat_weights(side: int, sigma: float) -> np.ndarray:
    g = side - 2
    grid = np.zeros((g, side))
    grid[:, :g] = gaussian_weights(side, sigma)
    # the last row needs no padding: index (g-1)*side + g-1 is the final valid one
    return grid.ravel()[: (g - 1) * side + g].copy()


@functools.lru_cache(maxsize=None)
def _label_kernel(side: int):
    """Compiled labeler for one patch side.

    The side is baked in as a constant so the patch loops unroll; that alone
    is worth about a quarter of the per-event cost.
    """
    r = side // 2
    ncell = side * side

    @numba.njit(cache=True, nogil=True)
    def kernel(ts, xs, ys, sae, n_latest, prio, wgrid, k, c_th, e_th, labels, scores):
        _label_events(ts, xs, ys, sae, side, r, ncell, n_latest, prio, wgrid, k, c_th, e_th, labels, scores)

    return kernel


@numba.njit(cache=True, nogil=True, inline="always")
def _label_events(ts, xs, ys, sae, side, r, ncell, n_latest, prio, wgrid, k, c_th, e_th, labels, scores):
    h, w = sae.shape
    vals = np.empty(ncell, np.int64)
    bits = np.zeros(ncell, np.float64)
    for i in range(ts.shape[0]):
        t = ts[i]
        cx = xs[i]
        cy = ys[i]
        sae[cy, cx] = t

        if r <= cx < w - r and r <= cy < h - r:
            for dy in range(side):
                row = sae[cy - r + dy]
                o = dy * side
                for dx in range(side):
                    vals[o + dx] = row[cx - r + dx]
        else:
            cell = 0
            for dy in range(-r, r + 1):
                yy = cy + dy
                for dx in range(-r, r + 1):
                    xx = cx + dx
                    v = EMPTY
                    if 0 <= yy < h and 0 <= xx < w:
                        v = sae[yy, xx]
                    vals[cell] = v
                    cell += 1

        cnt = 0
        oldest = t
        for j in range(ncell):
            v = vals[j]
            cnt += v != EMPTY
            oldest = min(oldest, t if v == EMPTY else v)

        if cnt <= n_latest:
            for j in range(ncell):
                bits[j] = vals[j] != EMPTY
        else:
            thr, exact = _kth_newest(vals, n_latest, oldest, t + 1)
            if exact:
                for j in range(ncell):
                    bits[j] = vals[j] >= thr
            else:
                taken = 0
                for j in range(ncell):
                    b = vals[j] > thr
                    bits[j] = b
                    taken += b
                # ties at the threshold: nearest to the centre first
                for j in range(ncell):
                    if taken >= n_latest:
                        break
                    cell = prio[j]
                    if vals[cell] == thr:
                        bits[cell] = 1.0
                        taken += 1

        s = _patch_score(bits, wgrid, side, k)
        scores[i] = s
        if s >= c_th:
            labels[i] = 2
        elif s <= e_th:
            labels[i] = 1
        else:
            labels[i] = 0


class FeatureDetector(Protocol):
    """Anything that can label an event given the SAE already containing it."""

    def classify(self, event: Event, sae: SurfaceOfActiveEvents) -> tuple[FeatureClass, float]: ...

    def label_batch(self, batch: EventBatch, sae: SurfaceOfActiveEvents) -> tuple[np.ndarray, np.ndarray]: ...


class EHarrisDetector:
    def __init__(self, params: HarrisParams = HarrisParams()):
        self.params = params
        self._prio = patch_priority(params.patch_side)
        self._weights = _flat_weights(params.patch_side, params.gaussian_sigma)

    def classify(self, event: Event, sae: SurfaceOfActiveEvents) -> tuple[FeatureClass, float]:
        p = self.params
        patch = binarized_patch(sae, event.x, event.y, p.patch_side, p.n_latest)
        score = harris_score(patch, p)
        return classify_event(score, p), score

    def label_batch(self, batch: EventBatch, sae: SurfaceOfActiveEvents) -> tuple[np.ndarray, np.ndarray]:
        """Update ``sae`` with every event of ``batch`` and label each one.

        Returns ``(labels, scores)``; labels hold :class:`FeatureClass` values.
        """
        n = len(batch)
        labels = np.empty(n, np.int8)
        scores = np.empty(n, np.float64)
        if n:
            p = self.params
            _label_kernel(p.patch_side)(
                batch.t, batch.x, batch.y, sae.last_ts, p.n_latest, self._prio,
                self._weights, p.harris_k, p.corner_threshold, p.edge_threshold, labels, scores,
            )
        return labels, scores


class _ExternalDetector:
    name = ""

    def classify(self, event, sae):
        raise NotImplementedError(f"{self.name} is not implemented; use EHarrisDetector")

    def label_batch(self, batch, sae):
        raise NotImplementedError(f"{self.name} is not implemented; use EHarrisDetector")


class EFastDetector(_ExternalDetector):
    name = "e-FAST"


class ArcStarDetector(_ExternalDetector):
    name = "ARC*"


DETECTORS = {"eharris": EHarrisDetector, "efast": EFastDetector, "arcstar": ArcStarDetector}


def label_stream(
    events: Iterable[Event],
    sae: SurfaceOfActiveEvents,
    params: HarrisParams = HarrisParams(),
    detector: FeatureDetector | None = None,
) -> Iterator[LabeledEvent]:
    """Update the SAE with each event, then score and classify it."""
    detector = detector or EHarrisDetector(params)
    for e in events:
        sae.update(e)
        label, score = detector.classify(e, sae)
        yield LabeledEvent(e, FeatureClass(label), score)


def format_labeled_csv(batch: EventBatch, labels: np.ndarray, scores: np.ndarray) -> str:
    names = np.array([c.name.lower() for c in FeatureClass])
    lines = ["t_us,x,y,pol,label,score"]
    for t, x, y, p, lab, s in zip(
        batch.t.tolist(), batch.x.tolist(), batch.y.tolist(), batch.pol.tolist(),
        names[labels.astype(np.int64)].tolist(), scores.tolist(),
    ):
        lines.append(f"{t},{x},{y},{p},{lab},{s!r}")
    return "\n".join(lines) + "\n"
