"""Mamdani grip-force controller driven by incipient-slip feature counts.

Inputs are the edge and corner counts of the incipient slip window, each
covered by three triangular sets (S, M, L). The output is a grip force in
percent covered by five Gaussian sets (VS .. VL). Rules combine with min,
consequents are clipped and max-aggregated, and the crisp force is the
centroid of the aggregate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyAggregate

INPUT_LABELS = ("S", "M", "L")
OUTPUT_LABELS = ("VS", "S", "M", "L", "VL")

# rows: corner S/M/L, columns: edge S/M/L
DEFAULT_RULES = (
    ("VS", "S", "M"),
    ("S", "M", "L"),
    ("M", "L", "VL"),
)

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass(frozen=True)
class TriangularMF:
    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        if not self.a <= self.b <= self.c:
            raise ConfigError(f"triangle feet/peak out of order: {self.a}, {self.b}, {self.c}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        left = np.ones_like(x) if self.b == self.a else (x - self.a) / (self.b - self.a)
        right = np.ones_like(x) if self.c == self.b else (self.c - x) / (self.c - self.b)
        mu = np.where(x <= self.b, left, right)
        mu = np.where((x < self.a) | (x > self.c), 0.0, mu)
        return np.clip(mu, 0.0, 1.0)


@dataclass(frozen=True)
class GaussianMF:
    mean: float
    sigma: float

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ConfigError("Gaussian sigma must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * ((x - self.mean) / self.sigma) ** 2)


def equal_partition(lo: float, hi: float) -> tuple[TriangularMF, TriangularMF, TriangularMF]:
    """S, M, L triangles with peaks at lo, mid, hi; memberships sum to one."""
    if not hi > lo:
        raise ConfigError(f"input range must satisfy hi > lo, got [{lo}, {hi}]")
    mid = 0.5 * (lo + hi)
    return TriangularMF(lo, lo, mid), TriangularMF(lo, mid, hi), TriangularMF(mid, hi, hi)


def default_force_mfs() -> tuple[GaussianMF, ...]:
    sigma = 20.0 * FWHM_TO_SIGMA
    return tuple(GaussianMF(m, sigma) for m in (10.0, 30.0, 50.0, 70.0, 90.0))


@dataclass(frozen=True)
class FuzzyConfig:
    edge_mfs: tuple[TriangularMF, ...]
    corner_mfs: tuple[TriangularMF, ...]
    force_mfs: tuple[GaussianMF, ...] = field(default_factory=default_force_mfs)
    rules: tuple[tuple[str, ...], ...] = DEFAULT_RULES
    g_min: float = 20.0
    g_max: float = 95.0
    cog_resolution: int = 1001

    def __post_init__(self) -> None:
        if len(self.edge_mfs) != 3 or len(self.corner_mfs) != 3:
            raise ConfigError("each input needs exactly three membership functions")
        if len(self.force_mfs) != 5:
            raise ConfigError("the output needs exactly five membership functions")
        means = [m.mean for m in self.force_mfs]
        if any(b <= a for a, b in zip(means, means[1:])):
            raise ConfigError("output membership means must be strictly increasing")
        if len(self.rules) != 3 or any(len(r) != 3 for r in self.rules):
            raise ConfigError("rule table must be 3x3")
        if any(lab not in OUTPUT_LABELS for row in self.rules for lab in row):
            raise ConfigError(f"rule consequents must be among {OUTPUT_LABELS}")
        if not 0 <= self.g_min <= self.g_max <= 100:
            raise ConfigError("need 0 <= g_min <= g_max <= 100")
        if self.cog_resolution < 3:
            raise ConfigError("cog_resolution must be at least 3")

    @classmethod
    def from_ranges(cls, edge_range, corner_range, **kw) -> "FuzzyConfig":
        return cls(equal_partition(*edge_range), equal_partition(*corner_range), **kw)

    @property
    def rule_index(self) -> np.ndarray:
        """3x3 array of output-set indices, rows corner, columns edge."""
        return np.array([[OUTPUT_LABELS.index(lab) for lab in row] for row in self.rules])

    def to_dict(self) -> dict:
        return {
            "edge_mfs": [[m.a, m.b, m.c] for m in self.edge_mfs],
            "corner_mfs": [[m.a, m.b, m.c] for m in self.corner_mfs],
            "force_mfs": [[m.mean, m.sigma] for m in self.force_mfs],
            "rules": [list(r) for r in self.rules],
            "g_min": self.g_min,
            "g_max": self.g_max,
            "cog_resolution": self.cog_resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzyConfig":
        try:
            if "edge_range" in d:
                edge = equal_partition(*d["edge_range"])
                corner = equal_partition(*d["corner_range"])
            else:
                edge = tuple(TriangularMF(*m) for m in d["edge_mfs"])
                corner = tuple(TriangularMF(*m) for m in d["corner_mfs"])
            kw = {}
            if "force_mfs" in d:
                kw["force_mfs"] = tuple(GaussianMF(*m) for m in d["force_mfs"])
            if "rules" in d:
                kw["rules"] = tuple(tuple(r) for r in d["rules"])
            for key in ("g_min", "g_max"):
                if key in d:
                    kw[key] = float(d[key])
            if "cog_resolution" in d:
                kw["cog_resolution"] = int(d["cog_resolution"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad fuzzy config: {exc}") from exc
        return cls(edge, corner, **kw)

    @classmethod
    def load(cls, path: str | Path) -> "FuzzyConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# Input ranges measured with evslip.sim.closed_loop.calibrate_fuzzy_ranges()
# over the bundled light and heavy load-drop scenarios, seeds 1000-1019.
DEFAULT_EDGE_RANGE = (3.0, 120.0)
DEFAULT_CORNER_RANGE = (49.0, 152.0)


def default_config(**kw) -> FuzzyConfig:
    return FuzzyConfig.from_ranges(DEFAULT_EDGE_RANGE, DEFAULT_CORNER_RANGE, **kw)


# --------------------------------------------------------------------------
# inference steps


def fuzzify(x: float, mfs) -> np.ndarray:
    """Membership degrees of ``x``; inputs beyond the covered range are clamped."""
    lo = min(m.a for m in mfs)
    hi = max(m.c for m in mfs)
    xc = min(max(float(x), lo), hi)
    return np.array([float(m(xc)) for m in mfs])


def rule_strengths(mu_edge, mu_corner) -> np.ndarray:
    """Firing strength of every rule, shaped (corner label, edge label)."""
    return np.minimum(np.asarray(mu_corner, float)[:, None], np.asarray(mu_edge, float)[None, :])


def output_grid(cfg: FuzzyConfig) -> np.ndarray:
    return np.linspace(0.0, 100.0, cfg.cog_resolution)


def aggregate(delta, cfg: FuzzyConfig, grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Clip each rule's consequent at its strength and take the pointwise max.

    Returns ``(grid, mu)`` sampled on ``cog_resolution`` points of [0, 100].
    """
    if grid is None:
        grid = output_grid(cfg)
    delta = np.asarray(delta, float).reshape(3, 3)
    idx = cfg.rule_index
    # several rules can share a consequent; only the strongest matters
    level = np.zeros(len(cfg.force_mfs))
    np.maximum.at(level, idx.ravel(), delta.ravel())
    mu = np.zeros_like(grid)
    for j, mf in enumerate(cfg.force_mfs):
        if level[j] > 0:
            mu = np.maximum(mu, np.minimum(level[j], mf(grid)))
    return grid, mu


def defuzzify_cog(grid: np.ndarray, mu: np.ndarray) -> float:
    """Centroid of the sampled aggregate via the trapezoidal rule."""
    area = np.trapezoid(mu, grid)
    if not area > 0:
        raise EmptyAggregate("aggregated output is identically zero")
    return float(np.trapezoid(grid * mu, grid) / area)


def infer(is_e: float, is_c: float, cfg: FuzzyConfig) -> float:
    """Crisp grip force for an incipient slip with the given feature counts."""
    delta = rule_strengths(fuzzify(is_e, cfg.edge_mfs), fuzzify(is_c, cfg.corner_mfs))
    return defuzzify_cog(*aggregate(delta, cfg))


# --------------------------------------------------------------------------
# force policy


@dataclass
class ControllerState:
    g_old: float

    @classmethod
    def initial(cls, cfg: FuzzyConfig) -> "ControllerState":
        return cls(cfg.g_min)


@dataclass(frozen=True)
class GripCommand:
    value: float  # commanded grip, percent
    g_hat: float  # raw controller output before clamping


def grip_policy(g_hat: float, state: ControllerState, cfg: FuzzyConfig) -> GripCommand | None:
    """Only accept increases above the minimum; clamp to the maximum.

    A clamped value that would not raise the current grip is dropped so the
    command sequence stays strictly increasing.
    """
    if not (g_hat > cfg.g_min and g_hat > state.g_old):
        return None
    value = min(g_hat, cfg.g_max)
    if value <= state.g_old:
        return None
    state.g_old = value
    return GripCommand(value, g_hat)


def suppress_step(is_e: float, is_c: float, state: ControllerState, cfg: FuzzyConfig) -> GripCommand | None:
    try:
        g_hat = infer(is_e, is_c, cfg)
    except EmptyAggregate:
        return None
    return grip_policy(g_hat, state, cfg)


def calibrate_input_ranges(incipients) -> tuple[tuple[float, float], tuple[float, float]]:
    """Edge and corner input ranges from observed ``(is_e, is_c)`` pairs."""
    pairs = np.asarray(list(incipients), dtype=float)
    if pairs.size == 0:
        raise ConfigError("calibration needs at least one incipient slip")
    e, c = pairs[:, 0], pairs[:, 1]
    e_rng = (float(e.min()), float(max(e.max(), e.min() + 1)))
    c_rng = (float(c.min()), float(max(c.max(), c.min() + 1)))
    return e_rng, c_rng
