"""Event data model, log ingestion, surface of active events and windowing.

Events travel through the pipeline in two shapes: single :class:`Event`
records for the per-event API, and :class:`EventBatch` column arrays for
bulk replay. Both share the text log format ``t_us,x,y,pol``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import MalformedRecord, NonMonotonic, OutOfRange

EMPTY = -1  # SAE cell that never fired


@dataclass(frozen=True, slots=True)
class Event:
    t: int
    x: int
    y: int
    pol: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 240
    height: int = 180

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"sensor size must be positive, got {self.width}x{self.height}")

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


DAVIS240 = SensorGeometry()


@dataclass
class EventBatch:
    """Column-oriented, time-ordered block of events."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pol: np.ndarray

    def __post_init__(self) -> None:
        self.t = np.ascontiguousarray(self.t, dtype=np.int64)
        self.x = np.ascontiguousarray(self.x, dtype=np.int32)
        self.y = np.ascontiguousarray(self.y, dtype=np.int32)
        self.pol = np.ascontiguousarray(self.pol, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.pol) == n):
            raise ValueError("event columns differ in length")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.pol.tolist()):
            yield Event(t, x, y, p)

    def __getitem__(self, item) -> "EventBatch":
        return EventBatch(self.t[item], self.x[item], self.y[item], self.pol[item])

    @classmethod
    def empty(cls) -> "EventBatch":
        return cls(np.empty(0, np.int64), np.empty(0, np.int32), np.empty(0, np.int32), np.empty(0, np.int8))

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "EventBatch":
        rows = [(e.t, e.x, e.y, e.pol) for e in events]
        if not rows:
            return cls.empty()
        t, x, y, p = zip(*rows)
        return cls(np.array(t), np.array(x), np.array(y), np.array(p))

    @classmethod
    def concat(cls, batches: Sequence["EventBatch"]) -> "EventBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty()
        return cls(
            np.concatenate([b.t for b in batches]),
            np.concatenate([b.x for b in batches]),
            np.concatenate([b.y for b in batches]),
            np.concatenate([b.pol for b in batches]),
        )

    def sorted(self) -> "EventBatch":
        order = np.argsort(self.t, kind="stable")
        return self[order]

    def is_ordered(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))


# --------------------------------------------------------------------------
# ingestion


def parse_event(
    record: str,
    geometry: SensorGeometry = DAVIS240,
    prev_t: int | None = None,
    slack_us: int = 0,
    line_no: int | None = None,
) -> Event:
    """Parse one ``t_us,x,y,pol`` record and validate it against ``geometry``.

    ``prev_t`` is the timestamp of the last accepted event; a record older
    than ``prev_t - slack_us`` raises :class:`NonMonotonic`.
    """
    parts = record.strip().split(",")
    if len(parts) != 4:
        raise MalformedRecord(f"expected 4 fields, got {len(parts)}: {record.strip()!r}", line_no)
    try:
        t, x, y, pol = (int(p) for p in parts)
    except ValueError:
        raise MalformedRecord(f"non-integer field in {record.strip()!r}", line_no) from None
    if t < 0:
        raise OutOfRange(f"negative timestamp {t}", line_no)
    if not geometry.contains(x, y):
        raise OutOfRange(f"pixel ({x},{y}) outside {geometry.width}x{geometry.height}", line_no)
    if pol not in (1, -1):
        raise OutOfRange(f"polarity must be +1 or -1, got {pol}", line_no)
    if prev_t is not None and t < prev_t - slack_us:
        raise NonMonotonic(f"timestamp {t} precedes {prev_t} by more than {slack_us} us", line_no)
    return Event(t, x, y, pol)


class EventReader:
    """Validating reader for event logs; remembers the last accepted timestamp."""

    def __init__(self, geometry: SensorGeometry = DAVIS240, slack_us: int = 0):
        self.geometry = geometry
        self.slack_us = slack_us
        self.last_t: int | None = None
        self.count = 0

    def feed(self, record: str, line_no: int | None = None) -> Event | None:
        stripped = record.strip()
        if not stripped or stripped.startswith("#"):
            return None
        ev = parse_event(stripped, self.geometry, self.last_t, self.slack_us, line_no)
        if self.last_t is None or ev.t > self.last_t:
            self.last_t = ev.t
        self.count += 1
        return ev

    def iter_lines(self, lines: Iterable[str]) -> Iterator[Event]:
        for i, line in enumerate(lines, start=1):
            ev = self.feed(line, i)
            if ev is not None:
                yield ev


def read_event_log(path: str | Path, geometry: SensorGeometry = DAVIS240, slack_us: int = 0) -> EventBatch:
    """Load and validate a whole log. Events within the slack are re-sorted."""
    reader = EventReader(geometry, slack_us)
    with open(path, encoding="utf-8") as fh:
        batch = EventBatch.from_events(reader.iter_lines(fh))
    if slack_us and not batch.is_ordered():
        batch = batch.sorted()
    return batch


def format_event_log(batch: EventBatch, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    if len(batch):
        cols = np.column_stack([batch.t, batch.x, batch.y, batch.pol])
        np.savetxt(buf, cols, fmt="%d", delimiter=",")
    return buf.getvalue()


def write_event_log(path: str | Path, batch: EventBatch, header: str | None = None) -> None:
    Path(path).write_text(format_event_log(batch, header), encoding="utf-8")


# --------------------------------------------------------------------------
# surface of active events


@dataclass
class SurfaceOfActiveEvents:
    """Latest timestamp per pixel; ``EMPTY`` marks pixels that never fired.

    ``last_ts`` is indexed ``[y, x]``.
    """

    geometry: SensorGeometry = DAVIS240
    last_ts: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.last_ts is None:
            self.last_ts = np.full((self.geometry.height, self.geometry.width), EMPTY, dtype=np.int64)
        elif self.last_ts.shape != (self.geometry.height, self.geometry.width):
            raise ValueError("SAE grid does not match geometry")

    def update(self, e: Event) -> None:
        self.last_ts[e.y, e.x] = e.t

    def get(self, x: int, y: int) -> int | None:
        v = int(self.last_ts[y, x])
        return None if v == EMPTY else v

    def populated(self) -> int:
        return int(np.count_nonzero(self.last_ts != EMPTY))

    def newest(self) -> int | None:
        v = int(self.last_ts.max())
        return None if v == EMPTY else v

    def reset(self) -> None:
        self.last_ts.fill(EMPTY)

    def copy(self) -> "SurfaceOfActiveEvents":
        return SurfaceOfActiveEvents(self.geometry, self.last_ts.copy())


def sae_update(sae: SurfaceOfActiveEvents, e: Event) -> SurfaceOfActiveEvents:
    sae.update(e)
    return sae


@dataclass(frozen=True)
class BinaryPatch:
    side: int
    bits: np.ndarray  # (side, side) uint8, row = y offset, col = x offset

    def ones(self) -> int:
        return int(self.bits.sum())


def patch_priority(side: int) -> np.ndarray:
    """Flat cell indices of a ``side``x``side`` patch ordered by distance to
    the centre, then row-major. Used to break timestamp ties."""
    r = side // 2
    dy, dx = np.divmod(np.arange(side * side), side)
    d2 = (dy - r) ** 2 + (dx - r) ** 2
    return np.lexsort((np.arange(side * side), d2)).astype(np.int64)


def binarized_patch(
    sae: SurfaceOfActiveEvents, cx: int, cy: int, side: int = 9, n_latest: int = 20
) -> BinaryPatch:
    """Mark the ``n_latest`` newest cells of the neighbourhood around (cx, cy).

    Cells outside the sensor count as empty.
    """
    if side % 2 != 1:
        raise ValueError("patch side must be odd")
    r = side // 2
    h, w = sae.last_ts.shape
    window = np.full((side, side), EMPTY, dtype=np.int64)
    y0, y1 = max(cy - r, 0), min(cy + r + 1, h)
    x0, x1 = max(cx - r, 0), min(cx + r + 1, w)
    window[y0 - (cy - r) : y1 - (cy - r), x0 - (cx - r) : x1 - (cx - r)] = sae.last_ts[y0:y1, x0:x1]

    flat = window.ravel()
    prio = patch_priority(side)
    rank_of_cell = np.empty_like(prio)
    rank_of_cell[prio] = np.arange(len(prio))
    cells = np.flatnonzero(flat != EMPTY)
    # newest first; equal timestamps go to the cell nearer the centre
    order = cells[np.lexsort((rank_of_cell[cells], -flat[cells]))]
    bits = np.zeros(side * side, dtype=np.uint8)
    bits[order[:n_latest]] = 1
    return BinaryPatch(side, bits.reshape(side, side))


# --------------------------------------------------------------------------
# windowing


@dataclass(frozen=True)
class WindowCounts:
    window_index: int
    t_start: int
    c_raw: int = 0
    c_edge: int = 0
    c_corner: int = 0

    @property
    def c_flat(self) -> int:
        return self.c_raw - self.c_edge - self.c_corner


LABEL_FLAT, LABEL_EDGE, LABEL_CORNER = 0, 1, 2


def window_count_arrays(
    t: np.ndarray, labels: np.ndarray, dt_us: int, first_window: int, n_windows: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tally raw/edge/corner counts for windows ``first_window .. +n_windows``.

    Events outside that range are ignored.
    """
    idx = t // dt_us - first_window
    keep = (idx >= 0) & (idx < n_windows)
    idx = idx[keep]
    lab = labels[keep]
    raw = np.bincount(idx, minlength=n_windows)
    edge = np.bincount(idx[lab == LABEL_EDGE], minlength=n_windows)
    corner = np.bincount(idx[lab == LABEL_CORNER], minlength=n_windows)
    return raw, edge, corner


def accumulate_windows(
    labeled: Iterable, dt_us: int = 500, t_end: int | None = None, t_start: int = 0
) -> list[WindowCounts]:
    """Bucket labeled events into tumbling windows ``[k*dt, (k+1)*dt)``.

    ``labeled`` yields objects with ``.event.t`` and ``.label``. Windows from
    the one containing ``t_start`` up to the one containing ``t_end - 1`` (or
    the last event) are emitted, empty ones included.
    """
    from .harris import FeatureClass

    if dt_us <= 0:
        raise ValueError("window width must be positive")
    counts: dict[int, list[int]] = {}
    last = None
    for le in labeled:
        k = le.event.t // dt_us
        c = counts.setdefault(k, [0, 0, 0])
        c[0] += 1
        if le.label == FeatureClass.EDGE:
            c[1] += 1
        elif le.label == FeatureClass.CORNER:
            c[2] += 1
        last = k
    first = t_start // dt_us
    if t_end is not None:
        stop = -(-t_end // dt_us)
    elif last is not None:
        stop = last + 1
    else:
        stop = first
    return [WindowCounts(k, k * dt_us, *counts.get(k, (0, 0, 0))) for k in range(first, stop)]
