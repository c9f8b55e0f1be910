"""Raceline ingestion, curvilinear projection and horizon scheduling.

Conventions: z-up, yaw counter-clockwise positive, ``e_y`` positive when
the CoG lies to the left of the path tangent. Banking ``phi`` is signed so
that ``+g*sin(phi)`` acts toward the turn centre on banked curves (positive
on left-hand turns).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lpv_model import SchedulingParams

MAX_SPACING = 20.0
HINT_WINDOW = 20
COLUMNS = ("s", "x", "y", "psi_ref", "kappa", "v_ref", "phi")
OPTIONAL_COLUMNS = ("s", "kappa")


class RacelineError(ValueError):
    """Base class for raceline loading problems."""


class RacelineParseError(RacelineError):
    pass


class RacelineValidationError(RacelineError):
    pass


def wrap_angle(theta):
    """Wrap angle(s) into (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Waypoint:
    s: float
    x: float
    y: float
    psi_ref: float
    kappa: float
    v_ref: float
    phi: float


@dataclass(frozen=True)
class TrackingErrors:
    e_y: float
    e_psi: float
    nearest_index: int
    s_proj: float
    e_y_dot: float = float("nan")
    e_psi_dot: float = float("nan")


class Raceline:
    """Immutable discrete reference path stored column-wise."""

    def __init__(self, x, y, psi_ref, v_ref, phi, kappa=None, s=None, closed=False):
        self.x = np.asarray(x, dtype=float).copy()
        self.y = np.asarray(y, dtype=float).copy()
        self.psi_ref = np.asarray(psi_ref, dtype=float).copy()
        self.v_ref = np.asarray(v_ref, dtype=float).copy()
        self.phi = np.asarray(phi, dtype=float).copy()
        self.closed = bool(closed)
        n = self.x.size
        if n < 3:
            raise RacelineValidationError(f"raceline needs >= 3 waypoints, got {n}")
        for name in ("y", "psi_ref", "v_ref", "phi"):
            if getattr(self, name).shape != (n,):
                raise RacelineValidationError(f"column {name!r} has wrong length")
        seg = np.hypot(np.diff(self.x), np.diff(self.y))
        if s is None:
            self.s = np.concatenate([[0.0], np.cumsum(seg)])
        else:
            self.s = np.asarray(s, dtype=float).copy()
        if kappa is None:
            self.kappa = circumscribed_curvature(self.x, self.y, self.closed)
        else:
            self.kappa = np.asarray(kappa, dtype=float).copy()
        self._gap = float(np.hypot(self.x[0] - self.x[-1], self.y[0] - self.y[-1]))
        self._validate(seg)
        for arr in (self.x, self.y, self.psi_ref, self.v_ref, self.phi, self.s, self.kappa):
            arr.setflags(write=False)

    def _validate(self, seg):
        if not np.all(np.isfinite(np.column_stack(
                [self.x, self.y, self.psi_ref, self.v_ref, self.phi, self.s, self.kappa]))):
            raise RacelineValidationError("non-finite raceline entry")
        ds = np.diff(self.s)
        if np.any(ds <= 0):
            i = int(np.argmax(ds <= 0))
            raise RacelineValidationError(f"s not strictly increasing at waypoint {i + 1}")
        if np.any(seg <= 0) or np.any(seg > MAX_SPACING):
            i = int(np.argmax((seg <= 0) | (seg > MAX_SPACING)))
            raise RacelineValidationError(
                f"waypoint spacing {seg[i]:.3g} m at index {i + 1} outside (0, {MAX_SPACING}]")
        if self.closed and not 0 < self._gap <= MAX_SPACING:
            raise RacelineValidationError(
                f"closed raceline has start/end gap {self._gap:.3g} m outside (0, {MAX_SPACING}]")
        if np.any(np.abs(self.kappa) >= 1.0):
            raise RacelineValidationError("|kappa| must stay below 1 1/m")
        if np.any(np.abs(self.phi) >= np.pi / 4):
            raise RacelineValidationError("|phi| must stay below pi/4")
        if np.any(self.v_ref <= 0):
            raise RacelineValidationError("v_ref must be positive")

    def __len__(self):
        return self.x.size

    @property
    def length(self) -> float:
        """Arc length of the path, including the closing segment when closed."""
        return float(self.s[-1] - self.s[0] + (self._gap if self.closed else 0.0))

    @property
    def waypoints(self) -> list[Waypoint]:
        cols = (self.s, self.x, self.y, self.psi_ref, self.kappa, self.v_ref, self.phi)
        return [Waypoint(*row) for row in zip(*(c.tolist() for c in cols))]

    # -- interpolation -------------------------------------------------
    def _locate(self, s):
        """Segment index and fraction for arc length ``s`` (wrapped or clamped)."""
        s0 = self.s[0]
        if self.closed:
            s = s0 + np.mod(s - s0, self.length)
            if s >= self.s[-1]:
                return len(self) - 1, (s - self.s[-1]) / self._gap
        else:
            s = min(max(s, s0), self.s[-1])
        j = int(np.searchsorted(self.s, s, side="right")) - 1
        j = min(max(j, 0), len(self) - 2)
        t = (s - self.s[j]) / (self.s[j + 1] - self.s[j])
        return j, float(min(max(t, 0.0), 1.0))

    def _next(self, j):
        return (j + 1) % len(self)

    def sample(self, s: float) -> Waypoint:
        """Linear interpolation of all reference quantities at arc length ``s``."""
        j, t = self._locate(s)
        k = self._next(j)
        lerp = lambda a: a[j] + t * (a[k] - a[j])  # noqa: E731
        psi = wrap_angle(self.psi_ref[j] + t * wrap_angle(self.psi_ref[k] - self.psi_ref[j]))
        s_here = self.s[j] + t * (self.s[j + 1] - self.s[j] if k != 0 else self._gap)
        return Waypoint(float(s_here), lerp(self.x), lerp(self.y), psi,
                        lerp(self.kappa), lerp(self.v_ref), lerp(self.phi))

    def banking_at(self, s) -> np.ndarray:
        """Vectorised linear interpolation of banking only."""
        s = np.asarray(s, dtype=float)
        if self.closed:
            knots = np.append(self.s, self.s[-1] + self._gap)
            return np.interp(self.s[0] + np.mod(s - self.s[0], self.length), knots,
                             np.append(self.phi, self.phi[0]))
        return np.interp(s, self.s, self.phi)

    def wrap_s(self, s: float) -> float:
        if not self.closed:
            return float(min(max(s, self.s[0]), self.s[-1]))
        return float(self.s[0] + np.mod(s - self.s[0], self.length))


def circumscribed_curvature(x, y, closed=False) -> np.ndarray:
    """Signed curvature from the circle through each point and its two neighbours."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if closed:
        xp, yp = np.roll(x, 1), np.roll(y, 1)
        xn, yn = np.roll(x, -1), np.roll(y, -1)
    else:
        xp = np.concatenate([[x[0]], x[:-1]])
        yp = np.concatenate([[y[0]], y[:-1]])
        xn = np.concatenate([x[1:], [x[-1]]])
        yn = np.concatenate([y[1:], [y[-1]]])
    ax, ay = x - xp, y - yp
    bx, by = xn - x, yn - y
    cross = ax * by - ay * bx
    a = np.hypot(ax, ay)
    b = np.hypot(bx, by)
    c = np.hypot(xn - xp, yn - yp)
    denom = a * b * c
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = np.where(denom > 0, 2.0 * cross / denom, 0.0)
    if not closed and kappa.size >= 3:
        kappa[0], kappa[-1] = kappa[1], kappa[-2]
    return kappa


def load_raceline(path, closed: bool | None = None) -> Raceline:
    """Read a raceline CSV.

    Lines starting with ``#`` are comments; ``# closed = true`` marks a lap.
    The ``s`` and ``kappa`` columns are optional and recomputed when absent.
    """
    text = Path(path).read_text()
    directive_closed = False
    body = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            key, _, val = stripped.lstrip("#").partition("=")
            if key.strip().lower() == "closed":
                directive_closed = val.strip().lower() in ("1", "true", "yes")
            continue
        if stripped:
            body.append(stripped)
    if not body:
        raise RacelineParseError(f"{path}: no header line")
    reader = csv.reader(io.StringIO("\n".join(body)))
    header = [h.strip() for h in next(reader)]
    required = [c for c in COLUMNS if c not in OPTIONAL_COLUMNS]
    missing = [c for c in required if c not in header]
    unknown = [c for c in header if c not in COLUMNS]
    if missing or unknown:
        raise RacelineParseError(f"{path}: bad header (missing {missing}, unknown {unknown})")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise RacelineParseError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise RacelineParseError(f"{path}: row {lineno}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    col = {name: data[:, i] for i, name in enumerate(header)}
    return Raceline(col["x"], col["y"], col["psi_ref"], col["v_ref"], col["phi"],
                    kappa=col.get("kappa"), s=col.get("s"),
                    closed=directive_closed if closed is None else closed)


def save_raceline(path, raceline: Raceline) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# closed = {'true' if raceline.closed else 'false'}\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for wp in raceline.waypoints:
            w.writerow([repr(float(getattr(wp, c))) for c in COLUMNS])


def _segment_foot(raceline: Raceline, j: int, px: float, py: float):
    k = raceline._next(j)
    ax, ay = raceline.x[j], raceline.y[j]
    dx, dy = raceline.x[k] - ax, raceline.y[k] - ay
    seg2 = dx * dx + dy * dy
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = min(max(t, 0.0), 1.0)
    fx, fy = ax + t * dx, ay + t * dy
    seg_len = np.sqrt(seg2)
    signed = (dx * (py - fy) - dy * (px - fx)) / seg_len
    return abs(signed), signed, t


def nearest_index(raceline: Raceline, x: float, y: float, hint: int | None = None) -> int:
    n = len(raceline)
    if hint is None:
        idx = np.arange(n)
    elif raceline.closed:
        idx = np.arange(hint - HINT_WINDOW, hint + HINT_WINDOW + 1) % n
    else:
        idx = np.arange(max(hint - HINT_WINDOW, 0), min(hint + HINT_WINDOW + 1, n))
    d2 = (raceline.x[idx] - x) ** 2 + (raceline.y[idx] - y) ** 2
    return int(idx[int(np.argmin(d2))])


def project(raceline: Raceline, x: float, y: float, psi: float,
            hint: int | None = None) -> TrackingErrors:
    """Project a global pose onto the raceline.

    The nearest waypoint is refined with the perpendicular foot on its two
    adjacent segments; reference yaw is interpolated along the chosen segment.
    """
    i = nearest_index(raceline, x, y, hint)
    n = len(raceline)
    candidates = []
    if raceline.closed or i > 0:
        candidates.append((i - 1) % n)
    if raceline.closed or i < n - 1:
        candidates.append(i)
    best = None
    for j in candidates:
        dist, signed, t = _segment_foot(raceline, j, x, y)
        if best is None or dist < best[0] - 1e-12:
            best = (dist, signed, t, j)
    _, e_y, t, j = best
    k = raceline._next(j)
    seg_s = raceline.s[k] - raceline.s[j] if k != 0 else raceline._gap
    s_proj = raceline.wrap_s(raceline.s[j] + t * seg_s)
    psi_ref = raceline.psi_ref[j] + t * wrap_angle(raceline.psi_ref[k] - raceline.psi_ref[j])
    return TrackingErrors(e_y=float(e_y), e_psi=wrap_angle(psi - psi_ref),
                          nearest_index=i, s_proj=s_proj)


def error_rates(errors: TrackingErrors, v_x: float, v_y: float, psi_dot: float,
                kappa: float) -> TrackingErrors:
    if v_x <= 0:
        raise ValueError("error rates need v_x > 0")
    e_psi_dot = psi_dot - v_x * kappa
    e_y_dot = v_y * np.cos(errors.e_psi) + v_x * np.sin(errors.e_psi)
    return TrackingErrors(errors.e_y, errors.e_psi, errors.nearest_index, errors.s_proj,
                          float(e_y_dot), float(e_psi_dot))


def horizon_schedule(raceline: Raceline, s_proj: float, v_now: float, phi_now: float,
                     ts: float, n: int) -> list[SchedulingParams]:
    """Scheduling parameters for steps 0..n of the prediction horizon.

    Step 0 uses the measured speed; later steps read speed and curvature from
    the raceline at the arc length reached by integrating speed forward.
    Banking is held at its measured value over the whole horizon.
    """
    if n < 1 or ts <= 0:
        raise ValueError("need n >= 1 and ts > 0")
    out = []
    s = s_proj
    v = v_now
    for k in range(n + 1):
        wp = raceline.sample(s)
        if k > 0:
            v = wp.v_ref
        out.append(SchedulingParams(v_x=float(v), kappa=float(wp.kappa), phi=float(phi_now)))
        s = s + v * ts
    return out


def make_straight(length: float = 500.0, spacing: float = 2.0, v_ref: float = 30.0,
                  phi: float = 0.0) -> Raceline:
    n = int(round(length / spacing)) + 1
    x = np.linspace(0.0, length, n)
    z = np.zeros(n)
    return Raceline(x, z, z, np.full(n, v_ref), np.full(n, phi), kappa=z)


def make_circle(radius: float = 300.0, spacing: float = 2.0, v_ref: float = 50.0,
                bank_deg: float = 0.0) -> Raceline:
    """Counter-clockwise closed circle centred at (0, radius), starting at the origin."""
    n = max(int(round(2 * np.pi * radius / spacing)), 3)
    th = 2 * np.pi * np.arange(n) / n
    x = radius * np.sin(th)
    y = radius * (1.0 - np.cos(th))
    return Raceline(x, y, wrap_angle(th), np.full(n, v_ref),
                    np.full(n, np.deg2rad(bank_deg)), kappa=np.full(n, 1.0 / radius),
                    closed=True)


def make_oval(straight: float = 300.0, radius: float = 300.0, bank_deg: float = 20.0,
              v_ref: float = 70.0, spacing: float = 2.0, transition: float = 30.0) -> Raceline:
    """Counter-clockwise stadium oval starting at the beginning of the front straight.

    Turns carry the full banking; it ramps linearly to zero over the last/first
    ``transition`` metres of each straight.
    """
    bank = np.deg2rad(bank_deg)
    arc = np.pi * radius
    total = 2 * straight + 2 * arc
    n = int(round(total / spacing))
    s = total * np.arange(n) / n
    x = np.empty(n)
    y = np.empty(n)
    psi = np.empty(n)
    kappa = np.empty(n)
    phi = np.empty(n)
    for i, si in enumerate(s):
        if si < straight:
            u = si
            x[i], y[i], psi[i], kappa[i] = u, -radius, 0.0, 0.0
            dist = min(u, straight - u)
        elif si < straight + arc:
            th = (si - straight) / radius
            x[i] = straight + radius * np.sin(th)
            y[i] = -radius * np.cos(th)
            psi[i], kappa[i], dist = th, 1.0 / radius, -1.0
        elif si < 2 * straight + arc:
            u = si - straight - arc
            x[i], y[i], psi[i], kappa[i] = straight - u, radius, np.pi, 0.0
            dist = min(u, straight - u)
        else:
            th = (si - 2 * straight - arc) / radius
            x[i] = -radius * np.sin(th)
            y[i] = radius * np.cos(th)
            psi[i], kappa[i], dist = np.pi + th, 1.0 / radius, -1.0
        if dist < 0:
            phi[i] = bank
        else:
            phi[i] = bank * max(0.0, 1.0 - dist / transition) if transition > 0 else 0.0
    return Raceline(x, y, wrap_angle(psi), np.full(n, v_ref), phi, kappa=kappa, s=s,
                    closed=True)
