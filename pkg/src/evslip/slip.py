"""Threshold sampling, baseline and feature slip detectors, and the
three-stage sampling / grasping / monitoring protocol."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptySample, StageViolation
from .events import WindowCounts


@dataclass(frozen=True)
class NoiseThresholds:
    th_rmax: int
    th_emax: int
    th_cmax: int

    def to_dict(self) -> dict:
        return {"th_rmax": self.th_rmax, "th_emax": self.th_emax, "th_cmax": self.th_cmax}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseThresholds":
        return cls(int(d["th_rmax"]), int(d["th_emax"]), int(d["th_cmax"]))


@dataclass(frozen=True)
class DetectorConfig:
    dt_us: int = 500
    s_bias: float = 0.10
    episode_gap_us: int = 100_000
    sampling_us: int = 2_000_000

    def __post_init__(self) -> None:
        if self.dt_us <= 0:
            raise ConfigError("dt_us must be positive")
        if self.s_bias < 0:
            raise ConfigError("s_bias must be non-negative")
        if self.episode_gap_us < 0 or self.sampling_us <= 0:
            raise ConfigError("episode_gap_us must be >= 0 and sampling_us > 0")


class SlipKind(str, enum.Enum):
    INCIPIENT = "incipient"
    GROSS = "gross"


class Approach(str, enum.Enum):
    BASELINE = "baseline"
    FEATURE = "feature"


@dataclass(frozen=True)
class SlipEvent:
    window_index: int
    kind: SlipKind
    approach: Approach
    t_detect: int  # end of the triggering window, us
    s_r: int | None = None
    s_e: int | None = None
    s_c: int | None = None

    def to_dict(self) -> dict:
        d = {
            "window_index": self.window_index,
            "kind": self.kind.value,
            "approach": self.approach.value,
            "t_detect": self.t_detect,
        }
        if self.approach is Approach.BASELINE:
            d["s_r"] = self.s_r
        else:
            d["s_e"] = self.s_e
            d["s_c"] = self.s_c
        return d


def sample_noise_thresholds(windows: Sequence[WindowCounts]) -> NoiseThresholds:
    if not windows:
        raise EmptySample("noise sampling needs at least one window")
    return NoiseThresholds(
        max(w.c_raw for w in windows),
        max(w.c_edge for w in windows),
        max(w.c_corner for w in windows),
    )


def thresholds_from_arrays(raw: np.ndarray, edge: np.ndarray, corner: np.ndarray) -> NoiseThresholds:
    if len(raw) == 0:
        raise EmptySample("noise sampling needs at least one window")
    return NoiseThresholds(int(raw.max()), int(edge.max()), int(corner.max()))


def _exceeds(count, th: int, s_bias: float):
    # biased ">=" test plus a strict "> th" so a zero threshold needs >= 1 event
    return (count >= th + s_bias * th) & (count > th)


def detect_baseline(w: WindowCounts, th: NoiseThresholds, cfg: DetectorConfig = DetectorConfig()) -> int | None:
    """Slip magnitude ``s_r`` if the raw count clears the biased threshold."""
    if _exceeds(w.c_raw, th.th_rmax, cfg.s_bias):
        return w.c_raw
    return None


def detect_feature(
    w: WindowCounts, th: NoiseThresholds, cfg: DetectorConfig = DetectorConfig()
) -> tuple[int, int] | None:
    """``(s_e, s_c)`` if both edge and corner counts clear their thresholds."""
    if _exceeds(w.c_edge, th.th_emax, cfg.s_bias) and _exceeds(w.c_corner, th.th_cmax, cfg.s_bias):
        return w.c_edge, w.c_corner
    return None


def baseline_flags(raw: np.ndarray, th: NoiseThresholds, s_bias: float) -> np.ndarray:
    return _exceeds(np.asarray(raw), th.th_rmax, s_bias)


def feature_flags(edge: np.ndarray, corner: np.ndarray, th: NoiseThresholds, s_bias: float) -> np.ndarray:
    return _exceeds(np.asarray(edge), th.th_emax, s_bias) & _exceeds(np.asarray(corner), th.th_cmax, s_bias)


def extract_incipient(flags: Iterable[SlipEvent], cfg: DetectorConfig = DetectorConfig()) -> list[list[SlipEvent]]:
    """Group time-ordered detections into episodes.

    A detection opens a new episode (and becomes its incipient head) when at
    least ``episode_gap_us`` of unflagged time separates it from the previous
    detection; otherwise it is gross slip within the running episode.
    """
    episodes: list[list[SlipEvent]] = []
    prev: int | None = None
    for ev in flags:
        idle_us = None if prev is None else (ev.window_index - prev - 1) * cfg.dt_us
        if idle_us is None or idle_us >= cfg.episode_gap_us:
            episodes.append([_with_kind(ev, SlipKind.INCIPIENT)])
        else:
            episodes[-1].append(_with_kind(ev, SlipKind.GROSS))
        prev = ev.window_index
    return episodes


def _with_kind(ev: SlipEvent, kind: SlipKind) -> SlipEvent:
    if ev.kind is kind:
        return ev
    return SlipEvent(ev.window_index, kind, ev.approach, ev.t_detect, ev.s_r, ev.s_e, ev.s_c)


# --------------------------------------------------------------------------
# stage machine


class Stage(enum.IntEnum):
    SAMPLING = 0
    GRASPING = 1
    MONITORING = 2


@dataclass
class StageState:
    stage: Stage = Stage.SAMPLING
    thresholds: NoiseThresholds | None = None
    grip: float | None = None
    sampled: list[WindowCounts] = field(default_factory=list)
    last_flag: dict[Approach, int] = field(default_factory=dict)


class SlipMonitor:
    """Runs the sampling -> grasping -> monitoring protocol over window counts.

    Stages only move forward. Monitoring evaluates both detectors on every
    window and tags each detection as incipient or gross on the fly, so the
    output equals :func:`extract_incipient` applied afterwards.
    """

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        self.cfg = cfg
        self.state = StageState()

    @property
    def stage(self) -> Stage:
        return self.state.stage

    @property
    def thresholds(self) -> NoiseThresholds | None:
        return self.state.thresholds

    def _advance(self, to: Stage) -> None:
        if to < self.state.stage:
            raise StageViolation(f"cannot go back from {self.state.stage.name} to {to.name}")
        self.state.stage = to

    def grasp(self, g_min: float) -> None:
        """Freeze thresholds from the sampled windows and set the minimal grip."""
        if self.state.stage is Stage.SAMPLING:
            self.state.thresholds = sample_noise_thresholds(self.state.sampled)
        if not 0 <= g_min <= 100:
            raise ConfigError("grip percent must be in [0, 100]")
        self._advance(Stage.GRASPING)
        self.state.grip = g_min

    def set_thresholds(self, th: NoiseThresholds) -> None:
        """Skip sampling with thresholds computed elsewhere (e.g. a file)."""
        if self.state.stage is not Stage.SAMPLING:
            raise StageViolation("thresholds can only be injected before grasping")
        self.state.thresholds = th
        self._advance(Stage.GRASPING)

    def start_monitoring(self) -> None:
        if self.state.thresholds is None:
            raise StageViolation("monitoring requires sampled noise thresholds")
        self._advance(Stage.MONITORING)

    def command(self, stage: Stage, grip: float = 0.0) -> None:
        if stage is Stage.SAMPLING:
            self._advance(Stage.SAMPLING)
        elif stage is Stage.GRASPING:
            self.grasp(grip)
        else:
            self.start_monitoring()

    def feed(self, w: WindowCounts) -> list[SlipEvent]:
        st = self.state
        if st.stage is Stage.SAMPLING:
            st.sampled.append(w)
            return []
        if st.stage is Stage.GRASPING:
            return []
        if st.thresholds is None:  # pragma: no cover - guarded by start_monitoring
            raise StageViolation("monitoring requires sampled noise thresholds")
        out = []
        t_detect = w.t_start + self.cfg.dt_us
        s_r = detect_baseline(w, st.thresholds, self.cfg)
        if s_r is not None:
            out.append(SlipEvent(w.window_index, self._kind(Approach.BASELINE, w), Approach.BASELINE, t_detect, s_r=s_r))
        feat = detect_feature(w, st.thresholds, self.cfg)
        if feat is not None:
            out.append(
                SlipEvent(w.window_index, self._kind(Approach.FEATURE, w), Approach.FEATURE, t_detect, s_e=feat[0], s_c=feat[1])
            )
        return out

    def _kind(self, approach: Approach, w: WindowCounts) -> SlipKind:
        prev = self.state.last_flag.get(approach)
        self.state.last_flag[approach] = w.window_index
        if prev is None or (w.window_index - prev - 1) * self.cfg.dt_us >= self.cfg.episode_gap_us:
            return SlipKind.INCIPIENT
        return SlipKind.GROSS


def stage_controller(state: SlipMonitor, item: Stage | WindowCounts, grip: float = 0.0) -> list[SlipEvent]:
    """Functional wrapper: apply a stage command or a window to the monitor."""
    if isinstance(item, Stage):
        state.command(item, grip)
        return []
    return state.feed(item)
