"""Synthetic event camera looking at a marker on the grasped object.

Each marker contour point is tracked with sub-pixel precision. Whenever its
integer pixel changes between two emulator ticks the sensor fires one event
at the new pixel, timestamped at the moment the point crossed the pixel
border. Background activity is Poisson, uniform over the array, with rate
multipliers during illumination bursts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NoCorners
from ..events import DAVIS240, EventBatch, SensorGeometry, SurfaceOfActiveEvents
from ..harris import EHarrisDetector, FeatureClass

TICK_US = 50


@dataclass
class Marker:
    shape: str
    points: np.ndarray  # (n, 2) x, y at zero pose
    corner_like: np.ndarray  # (n,) bool
    pose: tuple[float, float] = (0.0, 0.0)

    def __len__(self) -> int:
        return len(self.points)

    def at(self, pose: tuple[float, float]) -> np.ndarray:
        return self.points + np.asarray(pose, dtype=float)

    def vertices(self, pose: tuple[float, float] | None = None) -> np.ndarray:
        pts = self.at(self.pose if pose is None else pose)
        return pts[self.corner_like]

    def fits(self, geometry: SensorGeometry) -> bool:
        p = self.at(self.pose)
        return bool(p.min() >= 0 and p[:, 0].max() < geometry.width and p[:, 1].max() < geometry.height)


def _polygon(vertices: np.ndarray, spacing: float, corner_radius: float) -> tuple[np.ndarray, np.ndarray]:
    pts = []
    for a, b in zip(vertices, np.roll(vertices, -1, axis=0)):
        n = max(int(math.ceil(np.linalg.norm(b - a) / spacing)), 1)
        s = np.arange(n)[:, None] / n
        pts.append(a + s * (b - a))
    pts = np.concatenate(pts)
    d = np.min(np.linalg.norm(pts[:, None, :] - vertices[None, :, :], axis=-1), axis=1)
    return pts, d <= corner_radius


def _offsets(line_width: float, spacing: float) -> np.ndarray:
    """Inward offsets of the parallel strokes that make up a groove."""
    if line_width <= 0:
        raise ValueError("line_width must be positive")
    return np.arange(0.0, line_width - 1e-9, spacing)


def rectangle_marker(
    center: tuple[float, float],
    width: float,
    height: float,
    tilt_deg: float = 3.0,
    line_width: float = 2.0,
    spacing: float = 1.0,
) -> Marker:
    """Rectangular groove of ``line_width`` px, rotated by ``tilt_deg``."""
    th = math.radians(tilt_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    pts, corner = [], []
    for off in _offsets(line_width, spacing):
        hw, hh = width / 2.0 - off, height / 2.0 - off
        if hw <= 0 or hh <= 0:
            raise ValueError("line_width too large for the marker size")
        verts = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]]) @ rot.T + np.asarray(center, float)
        p, c = _polygon(verts, spacing, corner_radius=2.0)
        pts.append(p)
        corner.append(c)
    shape = "square" if width == height else "rectangle"
    return Marker(shape, np.concatenate(pts), np.concatenate(corner))


def square_marker(
    center: tuple[float, float] = (120.0, 60.3), side: float = 40.0, tilt_deg: float = 3.0, line_width: float = 2.0
) -> Marker:
    return rectangle_marker(center, side, side, tilt_deg, line_width)


def circle_marker(
    center: tuple[float, float] = (120.0, 60.3), radius: float = 20.0, line_width: float = 2.0, spacing: float = 1.0
) -> Marker:
    pts = []
    for off in _offsets(line_width, spacing):
        r = radius - off
        if r <= 0:
            raise ValueError("line_width too large for the circle radius")
        n = max(int(2 * math.pi * r / spacing), 8)
        a = 2 * math.pi * np.arange(n) / n
        pts.append(np.column_stack([center[0] + r * np.cos(a), center[1] + r * np.sin(a)]))
    pts = np.concatenate(pts)
    return Marker("circle", pts, np.zeros(len(pts), dtype=bool))


def make_marker(spec: dict) -> Marker:
    shape = spec.get("shape", "square")
    center = tuple(spec.get("center", (120.0, 60.3)))
    tilt = float(spec.get("tilt_deg", 3.0))
    lw = float(spec.get("line_width", 2.0))
    if shape == "square":
        return square_marker(center, float(spec.get("size", 40.0)), tilt, lw)
    if shape == "rectangle":
        w, h = spec.get("size", (50.0, 30.0))
        return rectangle_marker(center, float(w), float(h), tilt, lw)
    if shape == "circle":
        return circle_marker(center, float(spec.get("size", 20.0)), lw)
    raise ValueError(f"unknown marker shape {shape!r}")


# --------------------------------------------------------------------------
# noise


@dataclass
class NoiseModel:
    """Background activity.

    ``flicker_schedule`` holds ``(t_start_us, t_end_us, multiplier)`` bursts
    that scale ``base_rate``; ``vibration`` is ``(amplitude_px, frequency_hz)``
    horizontal jitter of the rendered marker.
    """

    base_rate: float = 1000.0
    flicker_schedule: list[tuple[int, int, float]] = field(default_factory=list)
    vibration: tuple[float, float] = (0.0, 0.0)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.base_rate < 0 or any(m < 0 for *_, m in self.flicker_schedule):
            raise ValueError("noise rates must be non-negative")
        if self.vibration[0] < 0 or self.vibration[1] < 0:
            raise ValueError("vibration amplitude and frequency must be non-negative")

    def rate_segments(self, t0: int, t1: int) -> list[tuple[int, int, float]]:
        """Split [t0, t1) into pieces of constant rate (events per second)."""
        cuts = {t0, t1}
        for a, b, _ in self.flicker_schedule:
            cuts.update(c for c in (a, b) if t0 < c < t1)
        edges = sorted(cuts)
        out = []
        for a, b in zip(edges, edges[1:]):
            mult = 1.0
            for fa, fb, m in self.flicker_schedule:
                if fa <= a and b <= fb:
                    mult = max(mult, m)
            out.append((a, b, self.base_rate * mult))
        return out

    def jitter(self, t_us: np.ndarray) -> np.ndarray:
        amp, freq = self.vibration
        if amp == 0 or freq == 0:
            return np.zeros(len(t_us))
        return amp * np.sin(2 * math.pi * freq * np.asarray(t_us, float) * 1e-6)


def noise_events(
    noise: NoiseModel, t0: int, t1: int, rng: np.random.Generator, geometry: SensorGeometry = DAVIS240
) -> EventBatch:
    parts = []
    for a, b, rate in noise.rate_segments(t0, t1):
        n = rng.poisson(rate * (b - a) * 1e-6) if rate > 0 else 0
        if n == 0:
            continue
        t = np.sort(rng.integers(a, b, n))
        x = rng.integers(0, geometry.width, n)
        y = rng.integers(0, geometry.height, n)
        p = np.where(rng.random(n) < 0.5, 1, -1)
        parts.append(EventBatch(t, x, y, p))
    return EventBatch.concat(parts)


# --------------------------------------------------------------------------
# marker events


def marker_events(
    marker: Marker,
    poses: np.ndarray,
    times: np.ndarray,
    geometry: SensorGeometry = DAVIS240,
) -> EventBatch:
    """Events of the marker moving through ``poses`` at tick ``times``.

    ``poses`` is (T+1, 2) and ``times`` (T+1,) integer microseconds; one
    event fires for every contour point whose pixel differs between
    consecutive ticks, timestamped at the interpolated border crossing.
    """
    poses = np.asarray(poses, float)
    times = np.asarray(times, np.int64)
    pos = marker.points[None, :, :] + poses[:, None, :]  # (T+1, n, 2)
    pix = np.floor(pos).astype(np.int64)
    changed = np.any(pix[1:] != pix[:-1], axis=-1)  # (T, n)
    k, i = np.nonzero(changed)
    if len(k) == 0:
        return EventBatch.empty()
    p0, p1 = pos[k, i], pos[k + 1, i]
    q0, q1 = pix[k, i], pix[k + 1, i]
    frac = np.zeros(len(k))
    for axis in (0, 1):
        moved = q0[:, axis] != q1[:, axis]
        border = np.maximum(q0[:, axis], q1[:, axis]).astype(float)
        d = p1[:, axis] - p0[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(moved, (border - p0[:, axis]) / np.where(d == 0, 1.0, d), 0.0)
        frac = np.maximum(frac, np.clip(f, 0.0, 1.0))
    span = times[k + 1] - times[k]
    t = times[k] + np.minimum((frac * span).astype(np.int64), span - 1)
    dy = p1[:, 1] - p0[:, 1]
    dx = p1[:, 0] - p0[:, 0]
    pol = np.where((dy > 0) | ((dy == 0) & (dx > 0)), 1, -1)
    x, y = q1[:, 0], q1[:, 1]
    inside = (x >= 0) & (x < geometry.width) & (y >= 0) & (y < geometry.height)
    order = np.lexsort((i[inside], t[inside]))
    return EventBatch(t[inside][order], x[inside][order], y[inside][order], pol[inside][order])


def synthesize_events(
    marker: Marker,
    pose_prev: tuple[float, float],
    pose_next: tuple[float, float],
    noise: NoiseModel | None,
    interval: tuple[int, int],
    rng: np.random.Generator | None = None,
    geometry: SensorGeometry = DAVIS240,
    tick_us: int = TICK_US,
) -> EventBatch:
    """Marker events for a linear move between two poses plus background noise."""
    t0, t1 = interval
    if t1 - t0 < tick_us:
        raise ValueError(f"interval must span at least one tick ({tick_us} us)")
    times = np.arange(t0, t1 + 1, tick_us, dtype=np.int64)
    if times[-1] != t1:
        times = np.append(times, t1)
    s = (times - t0) / (t1 - t0)
    poses = np.asarray(pose_prev, float) + s[:, None] * (np.asarray(pose_next, float) - np.asarray(pose_prev, float))
    if noise is not None:
        poses = poses + np.column_stack([noise.jitter(times), np.zeros(len(times))])
    out = marker_events(marker, poses, times, geometry)
    if noise is not None:
        rng = rng if rng is not None else np.random.default_rng(noise.rng_seed)
        out = EventBatch.concat([out, noise_events(noise, t0, t1, rng, geometry)]).sorted()
    return out


# --------------------------------------------------------------------------
# event frames and the slip metric


@dataclass
class EventFrame:
    t_start: int
    t_end: int
    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray

    def corner_centroid(self) -> tuple[float, float]:
        sel = self.labels == FeatureClass.CORNER
        if not np.any(sel):
            raise NoCorners(f"no corner events in frame [{self.t_start}, {self.t_end})")
        return float(self.x[sel].mean()), float(self.y[sel].mean())


def flash_events(
    marker: Marker, pose: tuple[float, float], t_us: int, geometry: SensorGeometry = DAVIS240
) -> EventBatch:
    """A light flash: every contour pixel fires ON at ``t_us`` and OFF half a
    tick later."""
    pix = np.unique(np.floor(marker.at(pose)).astype(np.int64), axis=0)
    inside = (pix[:, 0] >= 0) & (pix[:, 0] < geometry.width) & (pix[:, 1] >= 0) & (pix[:, 1] < geometry.height)
    pix = pix[inside]
    n = len(pix)
    t = np.concatenate([np.full(n, t_us), np.full(n, t_us + TICK_US // 2)])
    return EventBatch(t, np.tile(pix[:, 0], 2), np.tile(pix[:, 1], 2), np.repeat([1, -1], n))


def flash_frame(
    marker: Marker,
    pose: tuple[float, float],
    t_us: int,
    detector: EHarrisDetector | None = None,
    geometry: SensorGeometry = DAVIS240,
) -> EventFrame:
    """Event frame of a flash, labeled on a fresh SAE.

    All contour pixels share one timestamp, so every patch sees the complete
    contour around it and the labels do not depend on processing order.
    """
    detector = detector or EHarrisDetector()
    batch = flash_events(marker, pose, t_us, geometry)
    on = batch[: len(batch) // 2]
    sae = SurfaceOfActiveEvents(geometry)
    sae.last_ts[on.y, on.x] = t_us
    labels, _ = detector.label_batch(on, sae)
    return EventFrame(t_us, t_us + TICK_US, on.x, on.y, labels)


def slip_metric(frame_a: EventFrame, frame_b: EventFrame, mm_per_px: float) -> float:
    """Distance between the corner-event centroids of two frames, in mm."""
    xa, ya = frame_a.corner_centroid()
    xb, yb = frame_b.corner_centroid()
    return math.hypot(xb - xa, yb - ya) * mm_per_px


def frame_from_labeled(t: np.ndarray, x: np.ndarray, y: np.ndarray, labels: np.ndarray, t_start: int, t_end: int) -> EventFrame:
    sel = (t >= t_start) & (t < t_end)
    return EventFrame(t_start, t_end, x[sel], y[sel], labels[sel])


def benchmark_stream(
    n_events: int,
    seed: int = 0,
    noise_rate: float = 200_000.0,
    amplitude_px: float = 20.0,
    frequency_hz: float = 5.0,
    geometry: SensorGeometry = DAVIS240,
    chunk_us: int = 100_000,
) -> EventBatch:
    """Replay workload: the marker oscillating vertically over dense noise.

    Generated chunk by chunk until ``n_events`` are available; the result is
    truncated to exactly ``n_events``.
    """
    if n_events < 0:
        raise ValueError("n_events must be non-negative")
    rng = np.random.default_rng(seed)
    marker = square_marker()
    noise = NoiseModel(noise_rate, rng_seed=seed)
    parts, total, t0 = [], 0, 0
    while total < n_events:
        times = np.arange(t0, t0 + chunk_us + 1, TICK_US, dtype=np.int64)
        y = amplitude_px * np.sin(2 * math.pi * frequency_hz * times * 1e-6)
        mev = marker_events(marker, np.column_stack([np.zeros(len(times)), y]), times, geometry)
        chunk = EventBatch.concat([mev, noise_events(noise, t0, t0 + chunk_us, rng, geometry)]).sorted()
        parts.append(chunk)
        total += len(chunk)
        t0 += chunk_us
    return EventBatch.concat(parts)[:n_events]
