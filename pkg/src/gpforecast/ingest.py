"""Trajectory parsing, lane-change window extraction and synthetic corpora.

Windows are 31 samples at 10 Hz spanning [0, 3.0] s, centred on the frame
where the vehicle's lane id changes (t = 1.5 s).
"""

from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass, replace
from itertools import groupby
from typing import NamedTuple

import numpy as np

from .exceptions import FormatError, TooManyBadRows

logger = logging.getLogger(__name__)

SAMPLE_DT = 0.1
HALF_WINDOW = 15
WINDOW_LEN = 2 * HALF_WINDOW + 1
WINDOW_TIMES = np.arange(WINDOW_LEN) / 10.0
DISPLACEMENT_BAND = (7.0, 14.0)
MAX_ABS_Y = 50.0
MAX_BAD_FRACTION = 0.01

# NGSIM US-101 column order: Vehicle_ID, Frame_ID, ..., Local_X (4), ..., Lane_ID (13)
US101_COLUMNS = {"vehicle_id": 0, "frame_id": 1, "lateral_pos": 4, "lane_id": 13}


class RawTrajectoryRow(NamedTuple):
    vehicle_id: int
    frame_id: int
    lateral_pos: float
    lane_id: int


class ParsedTrajectories(NamedTuple):
    rows: list[RawTrajectoryRow]
    n_malformed: int


@dataclass(frozen=True, eq=False)
class ManeuverWindow:
    """One 3 s lane-change segment.

    ``direction`` is the sign of the raw displacement and survives
    normalization; ``y_offset`` is the raw ``y(0)`` removed by
    :func:`normalize`, so ``raw = direction * y + y_offset`` once normalized.
    """

    maneuver_id: str
    t: np.ndarray
    y: np.ndarray
    direction: int = 1
    vehicle_id: int = -1
    lane_from: int = -1
    lane_to: int = -1
    y_offset: float = 0.0

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        y = np.array(self.y, dtype=float)
        t.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    @property
    def displacement(self) -> float:
        return float(self.y[-1] - self.y[0])

    @property
    def is_normalized(self) -> bool:
        return self.y[0] == 0.0 and self.displacement > 0

    def validate(self, band: tuple[float, float] = DISPLACEMENT_BAND) -> None:
        if self.t.shape != (WINDOW_LEN,) or self.y.shape != (WINDOW_LEN,):
            raise ValueError(f"{self.maneuver_id}: window must hold {WINDOW_LEN} samples")
        if not np.allclose(np.diff(self.t), SAMPLE_DT, atol=1e-9) or abs(self.t[0]) > 1e-9:
            raise ValueError(f"{self.maneuver_id}: samples must sit at 0.0, 0.1, ..., 3.0 s")
        if not np.all(np.isfinite(self.y)):
            raise ValueError(f"{self.maneuver_id}: non-finite lateral position")
        if not band[0] <= abs(self.displacement) <= band[1]:
            raise ValueError(
                f"{self.maneuver_id}: |displacement| {abs(self.displacement):.3f} ft "
                f"outside [{band[0]}, {band[1]}]"
            )
        if self.is_normalized and np.max(np.abs(self.y)) > MAX_ABS_Y:
            raise ValueError(f"{self.maneuver_id}: normalized |y| exceeds {MAX_ABS_Y} ft")


def _split(line: str, delimiter: str | None) -> list[str]:
    return line.split(delimiter) if delimiter else line.split()


def parse_trajectories(path, column_map: dict | None = None) -> ParsedTrajectories:
    """Read a comma or whitespace delimited trajectory file.

    An optional header line is skipped.  Malformed lines are counted and
    dropped; more than 1 % of them raises :class:`TooManyBadRows`.  Rows are
    returned grouped by vehicle and sorted by frame.
    """
    cols = {**US101_COLUMNS, **(column_map or {})}
    need = max(cols.values()) + 1
    with open(path, newline="") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: file is empty")

    delimiter = "," if "," in lines[0] else None
    first = _split(lines[0], delimiter)
    if len(first) < need:
        raise FormatError(
            f"{path}: first line has {len(first)} fields, column map needs {need}"
        )
    try:
        int(float(first[cols["vehicle_id"]]))
        float(first[cols["lateral_pos"]])
    except ValueError:
        lines = lines[1:]
        if not lines:
            raise FormatError(f"{path}: header without data")

    rows, bad = [], 0
    for ln in lines:
        parts = _split(ln, delimiter)
        try:
            if len(parts) < need:
                raise ValueError
            row = RawTrajectoryRow(
                int(float(parts[cols["vehicle_id"]])),
                int(float(parts[cols["frame_id"]])),
                float(parts[cols["lateral_pos"]]),
                int(float(parts[cols["lane_id"]])),
            )
            if not math.isfinite(row.lateral_pos):
                raise ValueError
        except ValueError:
            bad += 1
            continue
        rows.append(row)

    total = len(lines)
    if bad > MAX_BAD_FRACTION * total:
        raise TooManyBadRows(f"{path}: {bad} of {total} lines malformed")
    rows.sort(key=lambda r: (r.vehicle_id, r.frame_id))
    deduped = []
    for r in rows:
        if deduped and (deduped[-1].vehicle_id, deduped[-1].frame_id) == (r.vehicle_id, r.frame_id):
            bad += 1
            continue
        deduped.append(r)
    if bad > MAX_BAD_FRACTION * total:
        raise TooManyBadRows(f"{path}: {bad} of {total} lines malformed or duplicated")
    if bad:
        logger.warning("%s: skipped %d malformed line(s)", path, bad)
    return ParsedTrajectories(deduped, bad)


def _vehicle_windows(track: list[RawTrajectoryRow], band) -> list[ManeuverWindow]:
    frames = np.array([r.frame_id for r in track])
    lanes = np.array([r.lane_id for r in track])
    ys = np.array([r.lateral_pos for r in track])
    out = []
    for k in np.flatnonzero(lanes[1:] != lanes[:-1]) + 1:
        lo, hi = k - HALF_WINDOW, k + HALF_WINDOW
        if lo < 0 or hi >= len(track):
            continue
        if frames[hi] - frames[lo] != WINDOW_LEN - 1:
            continue  # gap in frame ids
        if frames[k] - frames[k - 1] != 1:
            continue
        seg_lanes = lanes[lo : hi + 1]
        if np.count_nonzero(seg_lanes[1:] != seg_lanes[:-1]) != 1:
            continue
        y = ys[lo : hi + 1]
        disp = y[-1] - y[0]
        if not band[0] <= abs(disp) <= band[1]:
            continue
        out.append(
            ManeuverWindow(
                maneuver_id=f"v{track[k].vehicle_id}_f{frames[k]}",
                t=WINDOW_TIMES,
                y=y,
                direction=1 if disp > 0 else -1,
                vehicle_id=track[k].vehicle_id,
                lane_from=int(lanes[k - 1]),
                lane_to=int(lanes[k]),
            )
        )
    return out


def extract_lane_changes(
    rows: list[RawTrajectoryRow], band: tuple[float, float] = DISPLACEMENT_BAND
) -> list[ManeuverWindow]:
    """Cut a 31-frame window around every clean lane-id transition.

    A window is kept only when all 31 frames are present and consecutive, it
    contains exactly one lane transition, and its lateral displacement lies in
    ``band``.  Output is ordered by vehicle id, then frame.
    """
    out = []
    for _, grp in groupby(rows, key=lambda r: r.vehicle_id):
        track = sorted(grp, key=lambda r: r.frame_id)
        out.extend(_vehicle_windows(track, band))
    return out


def normalize(window: ManeuverWindow) -> ManeuverWindow:
    """Shift to ``y(0) = 0`` and flip so the displacement is positive."""
    y0 = float(window.y[0])
    sign = -1.0 if window.displacement < 0 else 1.0
    if y0 == 0.0 and sign > 0:
        return window
    y = sign * (window.y - y0)
    return replace(window, y=y, y_offset=window.y_offset + y0)


def denormalize(window: ManeuverWindow) -> np.ndarray:
    """Raw lateral positions of a window that went through :func:`normalize` once."""
    return window.direction * window.y + window.y_offset


def synth_corpus(
    n: int,
    seed: int = 7,
    noise_sigma: float = 0.1,
    shape_jitter: float = 0.2,
    *,
    displacement: float = 10.0,
    rate: float = 4.0,
    center: float = 1.5,
    band: tuple[float, float] = DISPLACEMENT_BAND,
) -> list[ManeuverWindow]:
    """Logistic lane changes ``D / (1 + exp(-k (t - t0)))`` plus white noise.

    ``shape_jitter`` is a relative half-width: each of ``D``, ``k`` and ``t0``
    is scaled by an independent ``1 + shape_jitter * U(-1, 1)``.  Draws that
    would fail the displacement band are redrawn, so the result is always
    extractable.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        u = rng.uniform(-1.0, 1.0, size=3)
        D = displacement * (1 + shape_jitter * u[0])
        k = rate * (1 + shape_jitter * u[1])
        t0 = center * (1 + shape_jitter * u[2])
        y = D / (1.0 + np.exp(-k * (WINDOW_TIMES - t0)))
        y = y + rng.normal(0.0, noise_sigma, WINDOW_LEN) if noise_sigma > 0 else y
        w = ManeuverWindow(f"synth{len(out) + 1:03d}", WINDOW_TIMES, y, direction=1)
        if band[0] <= abs(w.displacement) <= band[1]:
            out.append(w)
    return out


def write_raw_trajectories(
    windows: list[ManeuverWindow], path, *, lane_width: float = 12.0, lead_frames: int = 5
) -> None:
    """Serialize windows as a whitespace raw trajectory file (US-101 column layout).

    Each window becomes its own vehicle.  ``lead_frames`` extra samples in the
    original lane are prepended and appended so extraction sees context.
    """
    cols = US101_COLUMNS
    width = max(cols.values()) + 1
    with open(path, "w") as fh:
        for i, w in enumerate(windows):
            vid = i + 1
            base_frame = 1000 * vid
            raw = denormalize(w) if w.is_normalized else w.y
            lane0 = 2
            lane1 = lane0 + (1 if w.displacement > 0 else -1)
            ys = np.concatenate([np.full(lead_frames, raw[0]), raw, np.full(lead_frames, raw[-1])])
            for j, y in enumerate(ys):
                k = j - lead_frames
                fields = ["0"] * width
                fields[cols["vehicle_id"]] = str(vid)
                fields[cols["frame_id"]] = str(base_frame + j)
                fields[cols["lateral_pos"]] = repr(float(y))
                fields[cols["lane_id"]] = str(lane0 if k < HALF_WINDOW else lane1)
                fh.write(" ".join(fields) + "\n")


def write_window(window: ManeuverWindow, path) -> None:
    lines = [
        f"id={window.maneuver_id}",
        f"direction={window.direction:+d}",
        f"displacement_ft={window.displacement:.10g}",
        f"vehicle_id={window.vehicle_id}",
        f"lane_from={window.lane_from}",
        f"lane_to={window.lane_to}",
        f"y_offset_ft={window.y_offset:.12g}",
    ]
    lines += [f"{t:.1f} {y:.12g}" for t, y in zip(window.t, window.y)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


_NUM_LINE = re.compile(r"^\s*[-+0-9.eE]+\s+[-+0-9.eEinfa]+\s*$")


def read_window(path) -> ManeuverWindow:
    header, ts, ys = {}, [], []
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            if "=" in ln:
                key, _, val = ln.partition("=")
                header[key.strip()] = val.strip()
            elif _NUM_LINE.match(ln):
                t, y = ln.split()
                ts.append(float(t))
                ys.append(float(y))
            else:
                raise FormatError(f"{path}: unreadable line {ln!r}")
    if "id" not in header:
        raise FormatError(f"{path}: missing id= header")
    return ManeuverWindow(
        header["id"],
        ts,
        ys,
        direction=int(header.get("direction", "+1")),
        vehicle_id=int(header.get("vehicle_id", -1)),
        lane_from=int(header.get("lane_from", -1)),
        lane_to=int(header.get("lane_to", -1)),
        y_offset=float(header.get("y_offset_ft", 0.0)),
    )


def window_filename(maneuver_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", maneuver_id) + ".txt"


def read_key_value(path) -> dict[str, str]:
    """Flat ``key=value`` text; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for n, ln in enumerate(fh, 1):
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            if "=" not in ln:
                raise FormatError(f"{os.fspath(path)}:{n}: expected key=value, got {ln!r}")
            key, _, val = ln.partition("=")
            out[key.strip()] = val.strip()
    return out
