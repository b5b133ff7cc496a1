"""Event types, stream validation and a contrast-threshold scene simulator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

FRAME_US = 1000  # simulator step: 1 kHz


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(eq=False)
class EventStream:
    """Column-oriented event sequence on a ``width`` x ``height`` sensor.

    ``x`` indexes columns (``< width``), ``y`` rows (``< height``), ``t`` is in
    integer microseconds and ``p`` is -1 or +1.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.int64).reshape(-1)
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise ValueError("event columns must have equal length")

    @classmethod
    def from_events(cls, events: Sequence[Event | tuple], width: int, height: int) -> "EventStream":
        if len(events) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return cls(empty, empty, empty, empty, width, height)
        arr = np.asarray(events, dtype=np.int64).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls.from_events([], width, height)

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and all(np.array_equal(a, b) for a, b in zip(self.columns(), other.columns()))
        )

    def columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.x, self.y, self.t, self.p

    def take(self, index) -> "EventStream":
        return EventStream(self.x[index], self.y[index], self.t[index], self.p[index], self.width, self.height)

    def sorted_by_time(self) -> "EventStream":
        return self.take(np.argsort(self.t, kind="stable"))


@dataclass
class ValidationReport:
    violations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [f"{reason} at index {i}" for i, reason in self.violations]


def validate_stream(stream: EventStream) -> ValidationReport:
    """Check time ordering, sensor bounds and polarity; never raises."""
    report = ValidationReport()
    x, y, t, p = stream.columns()
    bad_bounds = (x < 0) | (x >= stream.width) | (y < 0) | (y >= stream.height)
    bad_order = np.zeros(len(t), dtype=bool)
    if len(t) > 1:
        bad_order[1:] = t[1:] < t[:-1]
    bad_time = t < 0
    bad_pol = (p != 1) & (p != -1)
    for i in np.flatnonzero(bad_bounds | bad_order | bad_time | bad_pol):
        i = int(i)
        if bad_order[i]:
            report.violations.append((i, "non-monotonic"))
        if bad_bounds[i]:
            report.violations.append((i, "out of bounds"))
        if bad_time[i]:
            report.violations.append((i, "negative timestamp"))
        if bad_pol[i]:
            report.violations.append((i, "invalid polarity"))
    return report


# scene simulation

SHAPE_KINDS = ("square", "disk", "bar")


@dataclass
class ShapeSpec:
    """A constant-intensity shape translating at constant velocity.

    ``position`` is the shape centre in pixels at t = 0, ``velocity`` is in
    pixels per millisecond and ``contrast`` is the log-intensity offset from
    the background (positive means brighter).
    """

    kind: str
    size: float
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    contrast: float = 1.0

    def half_extent(self) -> tuple[float, float]:
        if self.kind == "bar":
            return self.size / 2, self.size / 8
        return self.size / 2, self.size / 2


@dataclass
class SceneSpec:
    width: int
    height: int
    duration: int  # microseconds
    shapes: list[ShapeSpec]
    threshold: float = 0.3
    background: float = 1.0

    def validate(self) -> None:
        if self.threshold <= 0:
            raise ValueError("contrast threshold must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.background <= 0:
            raise ValueError("background intensity must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor size must be positive")
        for i, s in enumerate(self.shapes):
            if s.kind not in SHAPE_KINDS:
                raise ValueError(f"shape {i}: unknown kind {s.kind!r}")
            if s.size <= 0:
                raise ValueError(f"shape {i}: size must be positive")
            hx, hy = s.half_extent()
            cx, cy = s.position
            if cx - hx < 0 or cy - hy < 0 or cx + hx > self.width or cy + hy > self.height:
                raise ValueError(f"shape {i} does not fit inside the frame at t = 0")


def shape_mask(shape: ShapeSpec, t_ms: float, width: int, height: int) -> np.ndarray:
    """Boolean ``[height, width]`` coverage of ``shape`` at time ``t_ms``.

    A pixel is covered when its centre lies inside the shape (half-open box for
    square and bar, closed disk).
    """
    cx = shape.position[0] + shape.velocity[0] * t_ms
    cy = shape.position[1] + shape.velocity[1] * t_ms
    dx = (np.arange(width) + 0.5) - cx
    dy = (np.arange(height) + 0.5) - cy
    if shape.kind == "disk":
        r = shape.size / 2
        return dy[:, None] ** 2 + dx[None, :] ** 2 <= r * r
    hx, hy = shape.half_extent()
    inside_x = (dx >= -hx) & (dx < hx)
    inside_y = (dy >= -hy) & (dy < hy)
    return inside_y[:, None] & inside_x[None, :]


def render_log_frame(spec: SceneSpec, t_ms: float) -> np.ndarray:
    """Log intensity ``[height, width]``; later shapes are painted over earlier ones."""
    frame = np.full((spec.height, spec.width), math.log(spec.background))
    for shape in spec.shapes:
        frame[shape_mask(shape, t_ms, spec.width, spec.height)] = math.log(spec.background) + shape.contrast
    return frame


def crossings(delta: np.ndarray, threshold: float) -> np.ndarray:
    """Number of integers k >= 1 with ``k * threshold < |delta|``."""
    mag = np.abs(delta)
    k = np.maximum(np.ceil(mag / threshold).astype(np.int64) - 1, 0)
    # repair floating error at exact multiples
    k = np.where((k + 1) * threshold < mag, k + 1, k)
    k = np.where((k > 0) & (k * threshold >= mag), k - 1, k)
    return k


def synth_generate(spec: SceneSpec, seed: int) -> EventStream:
    """Simulate the scene at 1 kHz and emit threshold-crossing events.

    Each pixel keeps the log intensity at its last emission. When the current
    level differs from it by more than k thresholds, k events of the sign of
    the change are emitted and the reference resets to the current level. The
    events of the step ending at frame f get timestamps
    ``(f - 1) * 1000 + jitter`` with jitter uniform in [0, 999] us.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n_steps = spec.duration // FRAME_US
    reference = render_log_frame(spec, 0.0)
    xs, ys, ts, ps = [], [], [], []
    for f in range(1, n_steps + 1):
        current = render_log_frame(spec, float(f))
        delta = current - reference
        k = crossings(delta, spec.threshold)
        fired = k > 0
        if not fired.any():
            continue
        rows, cols = np.nonzero(fired)
        counts = k[rows, cols]
        pol = np.sign(delta[rows, cols]).astype(np.int64)
        total = int(counts.sum())
        jitter = rng.integers(0, FRAME_US, size=total)
        xs.append(np.repeat(cols, counts))
        ys.append(np.repeat(rows, counts))
        ps.append(np.repeat(pol, counts))
        ts.append((f - 1) * FRAME_US + jitter)
        reference[fired] = current[fired]
    if not xs:
        return EventStream.empty(spec.width, spec.height)
    x, y, t, p = (np.concatenate(c) for c in (xs, ys, ts, ps))
    order = np.argsort(t, kind="stable")
    return EventStream(x[order], y[order], t[order], p[order], spec.width, spec.height)


def random_scene(
    rng: np.random.Generator,
    kind: str,
    width: int = 64,
    height: int = 64,
    duration: int = 100_000,
    size_range: tuple[float, float] = (12.0, 20.0),
    speed_range: tuple[float, float] = (0.1, 0.3),
    threshold: float = 0.3,
    position_jitter: float | None = None,
) -> SceneSpec:
    """One moving shape of ``kind`` with random size, position, heading and contrast sign.

    ``position_jitter`` bounds the start centre's offset from the frame centre;
    ``None`` lets it range over every position that fits.
    """
    size = float(rng.uniform(*size_range))
    probe = ShapeSpec(kind, size, (0.0, 0.0))
    hx, hy = probe.half_extent()
    lo_x, hi_x, lo_y, hi_y = hx, width - hx, hy, height - hy
    if position_jitter is not None:
        lo_x, hi_x = max(lo_x, width / 2 - position_jitter), min(hi_x, width / 2 + position_jitter)
        lo_y, hi_y = max(lo_y, height / 2 - position_jitter), min(hi_y, height / 2 + position_jitter)
    cx = float(rng.uniform(lo_x, hi_x))
    cy = float(rng.uniform(lo_y, hi_y))
    speed = float(rng.uniform(*speed_range))
    angle = float(rng.uniform(0, 2 * math.pi))
    contrast = float(rng.uniform(0.8, 1.5)) * (1 if rng.random() < 0.5 else -1)
    shape = ShapeSpec(kind, size, (cx, cy), (speed * math.cos(angle), speed * math.sin(angle)), contrast)
    return SceneSpec(width, height, duration, [shape], threshold)
