"""Closed-loop grasp simulation: plant, emulated camera, detectors and the
fuzzy grip controller wired together window by window.

A scenario is a JSON document listing the plant, marker, noise and a
timeline of phases::

    sample -> grasp -> hold / lift / load / lower / place ...

During ``sample`` the object rests on the table and the monitor collects
noise statistics. ``grasp`` closes the fingers at the controller's minimum
grip, freezes the thresholds and takes the reference flash frame. Every
later phase is monitored: each window is labeled, counted and checked by
both detectors, and incipient feature detections drive the controller.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ConfigError, NoCorners
from ..events import DAVIS240, EventBatch, SensorGeometry, SurfaceOfActiveEvents, window_count_arrays, WindowCounts
from ..fuzzy import ControllerState, FuzzyConfig, default_config, suppress_step
from ..harris import EHarrisDetector, HarrisParams
from ..slip import Approach, DetectorConfig, NoiseThresholds, SlipEvent, SlipKind, SlipMonitor
from .emulator import TICK_US, Marker, NoiseModel, flash_events, flash_frame, make_marker, marker_events, noise_events, slip_metric
from .plant import G, Actuator, PlantState, add_load, step_plant

PHASE_KINDS = ("approach", "sample", "grasp", "hold", "lift", "load", "lower", "place")


# --------------------------------------------------------------------------
# scenario config


@dataclass(frozen=True)
class Phase:
    kind: str
    duration_us: int
    mass_kg: float = 0.0
    drop_height_m: tuple[float, float] = (0.0, 0.0)
    accel_mps2: float = 0.0
    impact_delay_ms: tuple[float, float] = (0.0, 0.0)


@dataclass
class Scenario:
    name: str
    seed: int
    phases: list[Phase]
    geometry: SensorGeometry = DAVIS240
    marker: dict = field(default_factory=lambda: {"shape": "square"})
    object_mass: float = 0.2
    mu: float = 0.4
    newtons_per_percent: float = 0.3
    drop_distance_mm: float = 5.0
    impact_coupling: float = 0.3
    actuator_tau_ms: float = 30.0
    actuator_delay_ms: float = 0.0
    actuator_overshoot: float = 0.0
    mm_per_px: float = 0.05
    latency_us: int = 0
    base_rate: float = 20000.0
    flicker: dict | list | None = None
    vibration: tuple[float, float] = (0.0, 0.0)
    reset_sae_between_stages: bool = False
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    harris: HarrisParams = field(default_factory=HarrisParams)
    fuzzy: FuzzyConfig = field(default_factory=default_config)

    @property
    def duration_us(self) -> int:
        return sum(p.duration_us for p in self.phases)

    def with_overrides(self, seed: int | None = None, dt_us: int | None = None, s_bias: float | None = None) -> "Scenario":
        sc = copy.copy(self)
        if seed is not None:
            sc.seed = int(seed)
        if dt_us is not None or s_bias is not None:
            d = self.detector
            sc.detector = replace(
                d,
                dt_us=d.dt_us if dt_us is None else int(dt_us),
                s_bias=d.s_bias if s_bias is None else float(s_bias),
            )
            _check_dt(sc.detector.dt_us)
        return sc


def _check_dt(dt_us: int) -> None:
    if dt_us % TICK_US:
        raise ConfigError(f"window width {dt_us} us must be a multiple of the {TICK_US} us emulator tick")


def _ms_to_ticks_us(ms: float, what: str) -> int:
    us = int(round(float(ms) * 1000.0 / TICK_US)) * TICK_US
    if us <= 0:
        raise ConfigError(f"{what} must be at least one tick ({TICK_US} us)")
    return us


def _range(v, what: str) -> tuple[float, float]:
    lo, hi = (v, v) if np.isscalar(v) else v
    lo, hi = float(lo), float(hi)
    if lo < 0 or hi < lo:
        raise ConfigError(f"{what} must be a non-negative value or [lo, hi] range")
    return lo, hi


def _parse_phase(d: dict) -> Phase:
    kind = d.get("kind")
    if kind not in PHASE_KINDS:
        raise ConfigError(f"unknown phase kind {kind!r}; expected one of {PHASE_KINDS}")
    dur = _ms_to_ticks_us(d.get("duration_ms", 0), f"{kind} phase duration")
    mass = float(d.get("mass_kg", 0.0))
    if mass < 0:
        raise ConfigError("load mass must be non-negative")
    if kind == "load" and mass == 0:
        raise ConfigError("load phase needs a positive mass_kg")
    accel = float(d.get("accel_mps2", 0.0))
    if accel < 0:
        raise ConfigError("accel_mps2 must be non-negative")
    delay = _range(d.get("impact_delay_ms", 0.0), "impact_delay_ms")
    if delay[1] * 1000 >= dur:
        raise ConfigError("impact_delay_ms must fall inside the load phase")
    return Phase(kind, dur, mass, _range(d.get("drop_height_m", 0.0), "drop_height_m"), accel, delay)


def scenario_from_dict(d: dict) -> Scenario:
    """Validate a scenario document; every problem raises :class:`ConfigError`."""
    try:
        phases = [_parse_phase(p) for p in d["phases"]]
        kinds = [p.kind for p in phases]
        lead = 1 if kinds[:1] == ["approach"] else 0
        if kinds[lead : lead + 2] != ["sample", "grasp"] or kinds.count("sample") != 1 or kinds.count("grasp") != 1:
            raise ConfigError("timeline must be an optional 'approach', then one 'sample' and one 'grasp' phase")
        if kinds.count("approach") > lead:
            raise ConfigError("'approach' may only open the timeline")
        if len(phases) < lead + 3:
            raise ConfigError("timeline needs at least one monitored phase after grasping")
        plant = d.get("plant", {})
        act = d.get("actuator", {})
        cam = d.get("camera", {})
        noise = d.get("noise", {})
        geo = SensorGeometry(**d.get("geometry", {}))
        det = dict(d.get("detector", {}))
        det.setdefault("sampling_us", phases[lead].duration_us)
        sc = Scenario(
            name=str(d.get("name", "scenario")),
            seed=int(d.get("seed", 0)),
            phases=phases,
            geometry=geo,
            marker=dict(d.get("marker", {"shape": "square"})),
            object_mass=float(plant.get("object_mass", 0.2)),
            mu=float(plant.get("mu", 0.4)),
            newtons_per_percent=float(plant.get("newtons_per_percent", 0.3)),
            drop_distance_mm=float(plant.get("drop_distance_mm", 5.0)),
            impact_coupling=float(plant.get("impact_coupling", 0.3)),
            actuator_tau_ms=float(act.get("tau_ms", 30.0)),
            actuator_delay_ms=float(act.get("delay_ms", 0.0)),
            actuator_overshoot=float(act.get("overshoot", 0.0)),
            mm_per_px=float(cam.get("mm_per_px", 0.05)),
            latency_us=int(cam.get("latency_us", 0)),
            base_rate=float(noise.get("base_rate", 20000.0)),
            flicker=noise.get("flicker"),
            vibration=tuple(float(v) for v in noise.get("vibration", (0.0, 0.0))),
            reset_sae_between_stages=bool(d.get("reset_sae_between_stages", False)),
            detector=DetectorConfig(**det),
            harris=HarrisParams(**d.get("harris", {})),
            fuzzy=FuzzyConfig.from_dict(d["fuzzy"]) if "fuzzy" in d else default_config(),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    if sc.object_mass <= 0:
        raise ConfigError("object_mass must be positive")
    if sc.mu <= 0 or sc.newtons_per_percent <= 0:
        raise ConfigError("mu and newtons_per_percent must be positive")
    if not 0 <= sc.impact_coupling <= 1:
        raise ConfigError("impact_coupling must lie in [0, 1]")
    if sc.actuator_tau_ms <= 0 or sc.actuator_delay_ms < 0 or sc.actuator_overshoot < 0:
        raise ConfigError("actuator needs tau_ms > 0, delay_ms >= 0, overshoot >= 0")
    if sc.mm_per_px <= 0 or sc.drop_distance_mm <= 0 or sc.latency_us < 0:
        raise ConfigError("mm_per_px and drop_distance_mm must be positive, latency_us >= 0")
    if sc.base_rate < 0 or min(sc.vibration) < 0 or len(sc.vibration) != 2:
        raise ConfigError("noise rates and vibration must be non-negative")
    _check_dt(sc.detector.dt_us)
    if sc.phases[0].kind == "approach" and sc.phases[0].duration_us % sc.detector.dt_us:
        raise ConfigError("approach duration must be a whole number of windows")
    try:
        marker = make_marker(sc.marker)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid marker: {exc}") from exc
    if not marker.fits(geo):
        raise ConfigError("marker contour does not fit on the sensor at its initial pose")
    return sc


def load_scenario(source: str | Path | dict) -> Scenario:
    """Scenario from a dict, a JSON file path or a bundled scenario name."""
    if isinstance(source, dict):
        return scenario_from_dict(source)
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    else:
        text = bundled_scenario_text(str(source))
    try:
        return scenario_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc


SCENARIO_ALIASES = {"load_drop": "load_drop_heavy"}


def bundled_scenarios() -> list[str]:
    root = resources.files("evslip.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_scenario_text(name: str) -> str:
    name = SCENARIO_ALIASES.get(name, name)
    res = resources.files("evslip.scenarios").joinpath(f"{name}.json")
    if not res.is_file():
        raise ConfigError(f"no bundled scenario {name!r}; available: {', '.join(bundled_scenarios())}")
    return res.read_text(encoding="utf-8")


def flicker_schedule(spec, t_from: int, t_to: int, rng: np.random.Generator) -> list[tuple[int, int, float]]:
    """Expand a flicker spec into ``(t_start, t_end, multiplier)`` bursts.

    ``spec`` is either an explicit list of ``[start_ms, end_ms, multiplier]``
    or a generator with ``interval_ms``, ``duration_ms`` and ``multiplier``
    ranges (plus optional ``start_ms`` / ``end_ms``, defaulting to the
    monitored part of the run).
    """
    if not spec:
        return []
    if isinstance(spec, list):
        out = []
        for item in spec:
            a, b, m = item
            if b <= a or m < 0:
                raise ConfigError(f"bad flicker burst {item}")
            out.append((int(a * 1000), int(b * 1000), float(m)))
        return out
    try:
        gap = _range(spec["interval_ms"], "interval_ms")
        dur = _range(spec["duration_ms"], "duration_ms")
        mult = _range(spec["multiplier"], "multiplier")
    except KeyError as exc:
        raise ConfigError(f"flicker generator is missing {exc}") from exc
    if gap[0] <= 0 or dur[0] <= 0:
        raise ConfigError("flicker interval and duration must be positive")
    t = int(spec["start_ms"] * 1000) if "start_ms" in spec else t_from
    end = int(spec["end_ms"] * 1000) if "end_ms" in spec else t_to
    out = []
    t += int(rng.uniform(*gap) * 1000)
    while t < end:
        d = int(rng.uniform(*dur) * 1000)
        out.append((t, min(t + d, end), float(rng.uniform(*mult))))
        t += d + int(rng.uniform(*gap) * 1000)
    return out


# --------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class SlipInterval:
    t_start: int
    t_end: int
    displacement_mm: float

    def to_dict(self) -> dict:
        return {"t_start": self.t_start, "t_end": self.t_end, "displacement_mm": round(self.displacement_mm, 6)}


@dataclass
class ApproachTally:
    flagged_windows: int
    episodes: int
    false_episodes: int
    detected: int  # visible true slips with at least one flagged window
    missed: int
    latency_us: list[int | None]  # incipient delay per visible slip, None if not incipient

    @property
    def success(self) -> bool:
        return self.missed == 0 and self.false_episodes == 0

    def to_dict(self) -> dict:
        return {
            "flagged_windows": self.flagged_windows,
            "episodes": self.episodes,
            "false_episodes": self.false_episodes,
            "detected": self.detected,
            "missed": self.missed,
            "latency_us": self.latency_us,
            "success": self.success,
        }


@dataclass
class SimulationReport:
    scenario: str
    seed: int
    dt_us: int
    s_bias: float
    thresholds: NoiseThresholds
    n_windows: int
    n_events: int
    slip_events: dict[str, list[SlipEvent]]
    commands: list[dict]
    slip_intervals: list[SlipInterval]
    tallies: dict[str, ApproachTally]
    q_sm_mm: float | None
    final_grip: float
    final_slipping: bool
    dropped: bool
    suppressed: bool
    flicker: list[tuple[int, int, float]]
    timeline: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "dt_us": self.dt_us,
            "s_bias": self.s_bias,
            "thresholds": self.thresholds.to_dict(),
            "n_windows": self.n_windows,
            "n_events": self.n_events,
            "slip_events": {k: [e.to_dict() for e in v] for k, v in self.slip_events.items()},
            "commands": self.commands,
            "ground_truth": {
                "slip_intervals": [s.to_dict() for s in self.slip_intervals],
                "final_slipping": self.final_slipping,
                "dropped": self.dropped,
            },
            "tallies": {k: v.to_dict() for k, v in self.tallies.items()},
            "q_sm_mm": None if self.q_sm_mm is None else round(self.q_sm_mm, 6),
            "final_grip": round(self.final_grip, 6),
            "suppressed": self.suppressed,
            "flicker": [list(b) for b in self.flicker],
            "timeline": self.timeline,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


@dataclass
class SimulationResult:
    """Report plus the bulky per-event and per-tick artifacts."""

    report: SimulationReport
    events: EventBatch
    labels: np.ndarray
    tick_t: np.ndarray
    tick_slipping: np.ndarray
    tick_y_pos: np.ndarray
    tick_grip: np.ndarray
    windows: dict[str, np.ndarray]

    def ground_truth_csv(self) -> str:
        lines = ["t_us,slipping,y_pos"]
        for t, s, y in zip(self.tick_t.tolist(), self.tick_slipping.tolist(), self.tick_y_pos.tolist()):
            lines.append(f"{t},{int(s)},{y:.9f}")
        return "\n".join(lines) + "\n"

    def force_trace_csv(self) -> str:
        lines = ["t_us,grip_percent"]
        for t, g in zip(self.tick_t.tolist(), self.tick_grip.tolist()):
            lines.append(f"{t},{g:.6f}")
        return "\n".join(lines) + "\n"

    def window_counts_csv(self) -> str:
        w = self.windows
        lines = ["window,t_start,c_raw,c_edge,c_corner,baseline,feature"]
        for row in zip(*(w[k].tolist() for k in ("index", "t_start", "raw", "edge", "corner", "baseline", "feature"))):
            lines.append(",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# evaluation against ground truth


def slip_intervals(t: np.ndarray, slipping: np.ndarray, y_pos: np.ndarray) -> list[SlipInterval]:
    """Maximal runs of slipping ticks. ``t`` holds tick start times and
    ``y_pos`` the position at each tick's end."""
    out = []
    s = np.asarray(slipping, bool)
    if not s.any():
        return out
    d = np.diff(np.concatenate([[0], s.astype(np.int8), [0]]))
    starts, ends = np.flatnonzero(d == 1), np.flatnonzero(d == -1)
    for a, b in zip(starts, ends):
        y0 = y_pos[a - 1] if a > 0 else 0.0
        out.append(SlipInterval(int(t[a]), int(t[b - 1] + TICK_US), float((y_pos[b - 1] - y0) * 1000.0)))
    return out


def tally(
    events: list[SlipEvent], intervals: list[SlipInterval], dt_us: int, visible_mm: float, slack_us: int = 0
) -> ApproachTally:
    """Score detections of one approach against the ground-truth intervals.

    An episode is false when its incipient window overlaps no slip interval
    (stretched by ``slack_us`` of sensor latency). Slips shorter than
    ``visible_mm`` may go undetected without counting as misses.
    """

    def overlaps(ev: SlipEvent, iv: SlipInterval) -> bool:
        w0 = ev.window_index * dt_us
        return w0 < iv.t_end + slack_us and iv.t_start < w0 + dt_us

    heads = [e for e in events if e.kind is SlipKind.INCIPIENT]
    false_eps = sum(1 for h in heads if not any(overlaps(h, iv) for iv in intervals))
    detected = missed = 0
    latency: list[int | None] = []
    for iv in intervals:
        if iv.displacement_mm < visible_mm:
            continue
        hits = [e for e in events if overlaps(e, iv)]
        if hits:
            detected += 1
            first = hits[0]
            latency.append(first.t_detect - iv.t_start if first.kind is SlipKind.INCIPIENT else None)
        else:
            missed += 1
            latency.append(None)
    return ApproachTally(len(events), len(heads), false_eps, detected, missed, latency)


# --------------------------------------------------------------------------
# the loop


def _draw(rng: np.random.Generator, rng_range: tuple[float, float]) -> float:
    lo, hi = rng_range
    return float(rng.uniform(lo, hi)) if hi > lo else lo


def _timeline(sc: Scenario, rng: np.random.Generator):
    """Tick-indexed actions plus the grasp / monitoring boundaries."""
    actions: dict[int, list[tuple]] = {}
    arm = []  # (t0, t1, accel)
    t = 0
    sample_t = grasp_t = monitor_t = 0
    for p in sc.phases:
        t0, t1 = t, t + p.duration_us
        if p.kind == "approach":
            actions.setdefault(t0, []).append(("support", True))
        elif p.kind == "sample":
            sample_t = t0
            actions.setdefault(t0, []).append(("support", True))
        elif p.kind == "grasp":
            grasp_t, monitor_t = t0, t1
            actions.setdefault(t0, []).append(("grasp",))
        elif p.kind == "place":
            actions.setdefault(t0, []).append(("support", True))
        else:
            actions.setdefault(t0, []).append(("support", False))
            if p.kind == "load":
                h = _draw(rng, p.drop_height_m)
                t_hit = t0 + int(_draw(rng, p.impact_delay_ms) * 1000) // TICK_US * TICK_US
                actions.setdefault(t_hit, []).append(("load", p.mass_kg, h))
            elif p.kind in ("lift", "lower") and p.accel_mps2 > 0:
                third = (p.duration_us // 3) // TICK_US * TICK_US
                sign = 1.0 if p.kind == "lift" else -1.0
                arm.append((t0, t0 + third, sign * p.accel_mps2))
                arm.append((t1 - third, t1, -sign * p.accel_mps2))
        t = t1
    return actions, arm, sample_t, grasp_t, monitor_t


def run_closed_loop(
    scenario: Scenario | dict | str,
    seed: int | None = None,
    dt_us: int | None = None,
    s_bias: float | None = None,
) -> SimulationResult:
    """Simulate one scenario and score both detectors against ground truth."""
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    sc = sc.with_overrides(seed, dt_us, s_bias)
    cfg = sc.detector
    geo = sc.geometry
    dt = cfg.dt_us
    ticks_per_window = dt // TICK_US
    total_us = -(-sc.duration_us // dt) * dt
    n_windows = total_us // dt
    n_ticks = total_us // TICK_US

    ss = np.random.SeedSequence(sc.seed)
    rng_noise, rng_flicker, rng_plant = (np.random.default_rng(s) for s in ss.spawn(3))
    actions, arm, sample_t, grasp_t, monitor_t = _timeline(sc, rng_plant)
    flicker = flicker_schedule(sc.flicker, monitor_t, total_us, rng_flicker)
    noise = NoiseModel(sc.base_rate, flicker, sc.vibration, sc.seed)
    noise_all = noise_events(noise, 0, total_us, rng_noise, geo)

    marker: Marker = make_marker(sc.marker)
    detector = EHarrisDetector(sc.harris)
    sae = SurfaceOfActiveEvents(geo)
    monitor = SlipMonitor(cfg)
    fz = sc.fuzzy
    ctrl = ControllerState.initial(fz)
    plant = PlantState(sc.object_mass, 0.0, sc.mu, 0.0, sc.newtons_per_percent, supported=True)
    actuator: Actuator | None = None
    drop_m = sc.drop_distance_mm / 1000.0
    px_per_m = 1000.0 / sc.mm_per_px
    tick_s = TICK_US * 1e-6

    tick_t = np.arange(n_ticks, dtype=np.int64) * TICK_US
    tick_slip = np.zeros(n_ticks, bool)
    tick_y = np.zeros(n_ticks)
    tick_grip = np.zeros(n_ticks)
    pose_x = noise.jitter(np.arange(n_ticks + 1) * TICK_US)
    pose_y = np.zeros(n_ticks + 1)
    arm_acc = np.zeros(n_ticks)
    for a, b, acc in arm:
        arm_acc[a // TICK_US : b // TICK_US] = acc

    # The reference flash marks the start of the approach when there is one,
    # so the marker is already on the SAE while noise is sampled.
    frame_a_t = 0 if sc.phases[0].kind == "approach" else grasp_t + (monitor_t - grasp_t) // 2
    frame_a_t -= frame_a_t % TICK_US
    frames = {}
    flash_batches = []
    out_events, out_labels = [], []
    pending = EventBatch.empty()
    counts = {k: np.zeros(n_windows, np.int64) for k in ("raw", "edge", "corner")}
    flags = {k: np.zeros(n_windows, bool) for k in ("baseline", "feature")}
    slip_events: dict[str, list[SlipEvent]] = {"baseline": [], "feature": []}
    commands: list[dict] = []
    noise_idx = np.searchsorted(noise_all.t, np.arange(n_windows + 1) * dt)

    for k in range(n_windows):
        t_w0 = k * dt
        j0 = k * ticks_per_window
        for j in range(j0, j0 + ticks_per_window):
            t = j * TICK_US
            for act in actions.get(t, ()):
                if act[0] == "support":
                    plant = replace(plant, supported=act[1])
                elif act[0] == "grasp":
                    monitor.grasp(fz.g_min)
                    if sc.reset_sae_between_stages:
                        sae.reset()
                    actuator = Actuator(fz.g_min, sc.actuator_tau_ms / 1000, sc.actuator_delay_ms / 1000, sc.actuator_overshoot)
                elif act[0] == "load":
                    plant = add_load(plant, act[1], act[2], sc.impact_coupling)
            if t == monitor_t and monitor.stage.name == "GRASPING":
                monitor.start_monitoring()
                if sc.reset_sae_between_stages:
                    sae.reset()
            if t == frame_a_t and "a" not in frames:
                fa = flash_frame(marker, (pose_x[j], pose_y[j]), t, detector, geo)
                frames["a"] = fa
                flash_batches.append(flash_events(marker, (pose_x[j], pose_y[j]), t, geo))
            if actuator is not None:
                plant = replace(plant, grip_percent=actuator.step(t * 1e-6, tick_s))
            if arm_acc[j] != plant.arm_accel:
                plant = replace(plant, arm_accel=float(arm_acc[j]))
            plant = step_plant(plant, tick_s, G, drop_m)
            tick_slip[j] = plant.slipping
            tick_y[j] = plant.y_pos
            tick_grip[j] = plant.grip_percent
            pose_y[j + 1] = plant.y_pos * px_per_m

        sl = slice(j0, j0 + ticks_per_window + 1)
        moving = pose_y[sl][0] != pose_y[sl][-1] or np.any(pose_x[sl] != pose_x[sl][0]) or (
            pose_y[sl].min() != pose_y[sl].max()
        )
        parts = [pending, noise_all[noise_idx[k] : noise_idx[k + 1]]]
        if moving:
            mev = marker_events(marker, np.column_stack([pose_x[sl], pose_y[sl]]), np.arange(j0, j0 + ticks_per_window + 1) * TICK_US, geo)
            if sc.latency_us:
                mev = EventBatch(mev.t + sc.latency_us, mev.x, mev.y, mev.pol)
            parts.append(mev)
        while flash_batches:
            parts.append(flash_batches.pop())
        batch = EventBatch.concat(parts)
        if len(batch) and not batch.is_ordered():
            batch = batch.sorted()
        cut = int(np.searchsorted(batch.t, t_w0 + dt))
        pending = batch[cut:]
        batch = batch[:cut]

        labels, _ = detector.label_batch(batch, sae)
        out_events.append(batch)
        out_labels.append(labels)
        raw, edge, corner = window_count_arrays(batch.t, labels, dt, k, 1)
        w = WindowCounts(k, t_w0, int(raw[0]), int(edge[0]), int(corner[0]))
        counts["raw"][k], counts["edge"][k], counts["corner"][k] = w.c_raw, w.c_edge, w.c_corner
        if t_w0 < sample_t:  # approach windows are neither sampled nor monitored
            continue
        for ev in monitor.feed(w):
            flags[ev.approach.value][k] = True
            slip_events[ev.approach.value].append(ev)
            if ev.approach is Approach.FEATURE and ev.kind is SlipKind.INCIPIENT:
                cmd = suppress_step(ev.s_e, ev.s_c, ctrl, fz)
                entry = {"t_us": ev.t_detect, "is_e": ev.s_e, "is_c": ev.s_c, "commanded": None}
                if cmd is not None:
                    actuator.command(ev.t_detect * 1e-6, cmd.value)
                    entry["commanded"] = round(cmd.value, 9)
                    entry["g_hat"] = round(cmd.g_hat, 9)
                commands.append(entry)

    # closing flash for the second reference frame
    last = n_ticks
    fb_t = total_us
    # The closing flash only measures the final pose; like the frame-A flash it
    # is labeled on a fresh surface, and it is kept out of the event log so a
    # replay of the log sees exactly the monitored stream.
    frames["b"] = flash_frame(marker, (pose_x[last], pose_y[last]), fb_t, detector, geo)
    if len(pending):  # latency spill past the last window is logged but never labeled
        out_events.append(pending)
        out_labels.append(np.full(len(pending), -1, np.int8))

    try:
        q_sm = slip_metric(frames["a"], frames["b"], sc.mm_per_px)
    except (NoCorners, KeyError):
        q_sm = None

    intervals = slip_intervals(tick_t, tick_slip, tick_y)
    visible_mm = sc.mm_per_px
    tallies = {a: tally(slip_events[a], intervals, dt, visible_mm, sc.latency_us) for a in slip_events}
    th = monitor.thresholds
    events = EventBatch.concat(out_events)
    report = SimulationReport(
        scenario=sc.name,
        seed=sc.seed,
        dt_us=dt,
        s_bias=cfg.s_bias,
        thresholds=th,
        n_windows=n_windows,
        n_events=len(events),
        slip_events=slip_events,
        commands=commands,
        slip_intervals=intervals,
        tallies=tallies,
        q_sm_mm=q_sm,
        final_grip=float(plant.grip_percent),
        final_slipping=bool(plant.slipping),
        dropped=bool(plant.dropped),
        suppressed=bool(any(c["commanded"] is not None for c in commands) and not plant.slipping and not plant.dropped),
        flicker=flicker,
        timeline={
            "sample_start_us": sample_t,
            "grasp_us": grasp_t,
            "monitor_start_us": monitor_t,
            "end_us": total_us,
        },
    )
    windows = {
        "index": np.arange(n_windows),
        "t_start": np.arange(n_windows) * dt,
        **counts,
        **flags,
    }
    return SimulationResult(report, events, np.concatenate(out_labels), tick_t, tick_slip, tick_y, tick_grip, windows)


def incipient_features(results) -> list[tuple[int, int]]:
    """``(is_e, is_c)`` of every incipient feature detection that overlaps a
    true slip, the input the fuzzy ranges are calibrated on."""
    pairs = []
    for res in results:
        rep = res.report
        dt = rep.dt_us
        for ev in rep.slip_events["feature"]:
            if ev.kind is not SlipKind.INCIPIENT:
                continue
            w0 = ev.window_index * dt
            if any(w0 < iv.t_end and iv.t_start < w0 + dt for iv in rep.slip_intervals):
                pairs.append((ev.s_e, ev.s_c))
    return pairs


def calibrate_fuzzy_ranges(scenarios=("load_drop_light", "load_drop_heavy"), seeds=range(1000, 1020)):
    """Edge and corner input ranges from closed-loop slip trials."""
    from ..fuzzy import calibrate_input_ranges

    results = (run_closed_loop(name, seed=s) for name in scenarios for s in seeds)
    return calibrate_input_ranges(incipient_features(results))
