"""Offline replay of event logs: label every event, tally windows, sample
noise thresholds and run both slip detectors.

This is the batch counterpart of the window-by-window loop in
:mod:`evslip.sim.closed_loop`; replaying a simulated log reproduces the
detections made online because labeling is strictly sequential either way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySample
from .events import EventBatch, SurfaceOfActiveEvents, WindowCounts, window_count_arrays
from .harris import EHarrisDetector, FeatureDetector
from .slip import (
    Approach,
    DetectorConfig,
    NoiseThresholds,
    SlipEvent,
    SlipKind,
    baseline_flags,
    feature_flags,
    thresholds_from_arrays,
)

APPROACHES = ("baseline", "feature")


@dataclass
class WindowSeries:
    """Raw / edge / corner counts for consecutive windows starting at
    ``first_window``."""

    first_window: int
    dt_us: int
    raw: np.ndarray
    edge: np.ndarray
    corner: np.ndarray

    def __len__(self) -> int:
        return len(self.raw)

    @property
    def index(self) -> np.ndarray:
        return np.arange(self.first_window, self.first_window + len(self), dtype=np.int64)

    def window(self, i: int) -> WindowCounts:
        k = self.first_window + i
        return WindowCounts(k, k * self.dt_us, int(self.raw[i]), int(self.edge[i]), int(self.corner[i]))

    def __iter__(self):
        return (self.window(i) for i in range(len(self)))

    def to_csv(self, flags: dict[str, np.ndarray] | None = None) -> str:
        flags = flags or {}
        names = [a for a in APPROACHES if a in flags]
        cols = [self.index, self.index * self.dt_us, self.raw, self.edge, self.corner] + [flags[a] for a in names]
        lines = [",".join(["window", "t_start", "c_raw", "c_edge", "c_corner", *names])]
        for row in zip(*(c.tolist() for c in cols)):
            lines.append(",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def label_log(
    batch: EventBatch, detector: FeatureDetector | None = None, sae: SurfaceOfActiveEvents | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Labels and scores for every event of an ordered log (SAE updated first)."""
    detector = detector or EHarrisDetector()
    sae = sae if sae is not None else SurfaceOfActiveEvents()
    return detector.label_batch(batch, sae)


def window_series(
    t: np.ndarray, labels: np.ndarray, dt_us: int, t_start: int = 0, t_end: int | None = None
) -> WindowSeries:
    """Tally events into every window overlapping ``[t_start, t_end)``.

    ``t_end`` defaults to just past the last event, so no window in between
    is ever skipped, empty or not.
    """
    first = t_start // dt_us
    if t_end is None:
        t_end = int(t[-1]) + 1 if len(t) else t_start
    stop = max(first, -(-t_end // dt_us))
    raw, edge, corner = window_count_arrays(t, labels, dt_us, first, stop - first)
    return WindowSeries(first, dt_us, raw, edge, corner)


def sample_thresholds(series: WindowSeries) -> NoiseThresholds:
    if len(series) == 0:
        raise EmptySample("no windows in the sampling interval")
    return thresholds_from_arrays(series.raw, series.edge, series.corner)


def flags_to_events(
    flags: np.ndarray, series: WindowSeries, approach: Approach, cfg: DetectorConfig
) -> list[SlipEvent]:
    """SlipEvents for the flagged windows, with incipient heads marked."""
    pos = np.flatnonzero(flags)
    if len(pos) == 0:
        return []
    idle = np.diff(pos, prepend=pos[0]) - 1
    head = (idle * cfg.dt_us >= cfg.episode_gap_us)
    head[0] = True
    out = []
    for i, h in zip(pos.tolist(), head.tolist()):
        w = series.window(i)
        kind = SlipKind.INCIPIENT if h else SlipKind.GROSS
        t_detect = w.t_start + cfg.dt_us
        if approach is Approach.BASELINE:
            out.append(SlipEvent(w.window_index, kind, approach, t_detect, s_r=w.c_raw))
        else:
            out.append(SlipEvent(w.window_index, kind, approach, t_detect, s_e=w.c_edge, s_c=w.c_corner))
    return out


@dataclass
class DetectionReport:
    thresholds: NoiseThresholds
    config: DetectorConfig
    n_events: int
    series: WindowSeries
    flags: dict[str, np.ndarray] = field(default_factory=dict)
    slip_events: dict[str, list[SlipEvent]] = field(default_factory=dict)

    def to_dict(self, verbose: bool = False) -> dict:
        d = {
            "thresholds": self.thresholds.to_dict(),
            "dt_us": self.config.dt_us,
            "s_bias": self.config.s_bias,
            "episode_gap_us": self.config.episode_gap_us,
            "n_events": self.n_events,
            "n_windows": len(self.series),
            "first_window": self.series.first_window,
            "slip_events": {k: [e.to_dict() for e in v] for k, v in self.slip_events.items()},
            "episodes": {k: sum(e.kind is SlipKind.INCIPIENT for e in v) for k, v in self.slip_events.items()},
        }
        if verbose:
            d["windows"] = {
                "c_raw": self.series.raw.tolist(),
                "c_edge": self.series.edge.tolist(),
                "c_corner": self.series.corner.tolist(),
            }
        return d

    def to_json(self, verbose: bool = False) -> str:
        return json.dumps(self.to_dict(verbose), sort_keys=True, indent=2) + "\n"


def detect_series(
    series: WindowSeries,
    thresholds: NoiseThresholds,
    cfg: DetectorConfig = DetectorConfig(),
    approaches: tuple[str, ...] = APPROACHES,
    n_events: int | None = None,
) -> DetectionReport:
    """Run the selected detectors over every window of ``series``."""
    rep = DetectionReport(thresholds, cfg, int(series.raw.sum()) if n_events is None else n_events, series)
    for name in approaches:
        if name == "baseline":
            f = baseline_flags(series.raw, thresholds, cfg.s_bias)
        elif name == "feature":
            f = feature_flags(series.edge, series.corner, thresholds, cfg.s_bias)
        else:
            raise ValueError(f"unknown approach {name!r}")
        rep.flags[name] = f
        rep.slip_events[name] = flags_to_events(f, series, Approach(name), cfg)
    return rep


def detect_log(
    batch: EventBatch,
    thresholds: NoiseThresholds,
    cfg: DetectorConfig = DetectorConfig(),
    detector: FeatureDetector | None = None,
    approaches: tuple[str, ...] = APPROACHES,
    t_start: int = 0,
    t_end: int | None = None,
) -> DetectionReport:
    """Label a whole log and detect slips in the windows of ``[t_start, t_end)``.

    Every event updates the SAE, including those before ``t_start``, so the
    surface matches what an online run would have seen.
    """
    labels, _ = label_log(batch, detector)
    series = window_series(batch.t, labels, cfg.dt_us, t_start, t_end)
    return detect_series(series, thresholds, cfg, approaches, n_events=len(batch))
