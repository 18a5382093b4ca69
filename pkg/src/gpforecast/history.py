"""Cumulative relevant history: an append-only bank of completed maneuvers.

Two ways of reusing the bank are supported.  History augmentation
concatenates the first ``count`` maneuvers with the ongoing prefix into one
training set; the model-bank variant only reuses the hyperparameters fitted
to the most recent maneuver as a warm start.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DuplicateManeuver, FormatError
from .gp import LinearKernelParams, TrainingSet, optimize_hyperparams
from .ingest import ManeuverWindow, read_window, window_filename, write_window

INDEX_FILE = "index.txt"
DEFAULT_PARAMS = LinearKernelParams(sigma_l=3.0, c=0.0, noise_var=0.01)


@dataclass(frozen=True)
class BankEntry:
    window: ManeuverWindow
    params: LinearKernelParams
    train: TrainingSet


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class ManeuverBank:
    """Completed maneuvers in trip order together with their fitted hyperparameters.

    Entries are never modified or removed.  A single writer must serialize
    calls to :meth:`append`; readers need no locking.
    """

    def __init__(self, entries=()):
        self._entries: list[BankEntry] = []
        self._ids: set[str] = set()
        for e in entries:
            self._add(e)

    def _add(self, entry: BankEntry) -> None:
        mid = entry.window.maneuver_id
        if mid in self._ids:
            raise DuplicateManeuver(mid)
        self._entries.append(entry)
        self._ids.add(mid)

    def append(self, window: ManeuverWindow, params: LinearKernelParams) -> "ManeuverBank":
        train = TrainingSet.from_arrays(window.t, window.y, window.maneuver_id)
        self._add(BankEntry(window, params, train))
        return self

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, i) -> BankEntry:
        return self._entries[i]

    def __contains__(self, maneuver_id) -> bool:
        return maneuver_id in self._ids

    @property
    def ids(self) -> list[str]:
        return [e.window.maneuver_id for e in self._entries]

    def snapshot(self, count: int) -> "ManeuverBank":
        """Independent bank holding the first ``count`` entries."""
        _check_count(self, count)
        return ManeuverBank(self._entries[:count])


def _check_count(bank: ManeuverBank, count: int) -> None:
    if not 0 <= count <= len(bank):
        raise ValueError(f"count must lie in [0, {len(bank)}], got {count}")


def fit_maneuver_params(
    window: ManeuverWindow,
    default: LinearKernelParams = DEFAULT_PARAMS,
    budget: int = 200,
    seed: int = 0,
) -> LinearKernelParams:
    """Hyperparameters fitted to one maneuver alone (its model-bank entry)."""
    train = TrainingSet.from_arrays(window.t, window.y, window.maneuver_id)
    return optimize_hyperparams(train, default, budget, seed=seed)


def append_completed(
    bank: ManeuverBank,
    window: ManeuverWindow,
    *,
    default: LinearKernelParams = DEFAULT_PARAMS,
    budget: int = 200,
    seed: int = 0,
    params: LinearKernelParams | None = None,
) -> ManeuverBank:
    """Append a finished maneuver, fitting its own hyperparameters unless given."""
    if window.maneuver_id in bank:
        raise DuplicateManeuver(window.maneuver_id)
    if params is None:
        params = fit_maneuver_params(window, default, budget, derive_seed(seed, len(bank)))
    return bank.append(window, params)


def assemble_training_set(bank: ManeuverBank, count: int, prefix: TrainingSet | None) -> TrainingSet:
    """First ``count`` bank maneuvers (bank order, then time) followed by ``prefix``."""
    _check_count(bank, count)
    parts = [bank[i].train for i in range(count)]
    if prefix is not None:
        parts.append(prefix)
    if not parts:
        raise ValueError("empty history and no prefix: nothing to train on")
    return parts[0] if len(parts) == 1 else TrainingSet.concat(parts)


def warm_start_params(
    bank: ManeuverBank, count: int, default: LinearKernelParams = DEFAULT_PARAMS
) -> LinearKernelParams:
    """Params of the most recent of the first ``count`` maneuvers, or ``default``."""
    _check_count(bank, count)
    return default if count == 0 else bank[count - 1].params


def save_bank(bank: ManeuverBank, directory) -> Path:
    """Write one window file per maneuver plus ``index.txt`` in trip order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for e in bank:
        fname = window_filename(e.window.maneuver_id)
        write_window(e.window, directory / fname)
        p = e.params
        lines.append(
            f"id={e.window.maneuver_id} file={fname} "
            f"sigma_l={p.sigma_l!r} c={p.c!r} noise_var={p.noise_var!r}"
        )
    index = directory / INDEX_FILE
    index.write_text("".join(ln + "\n" for ln in lines))
    return index


def read_index(directory) -> list[dict[str, str]]:
    path = Path(directory) / INDEX_FILE
    if not path.exists():
        raise FormatError(f"{os.fspath(path)} not found")
    out = []
    for n, ln in enumerate(path.read_text().splitlines(), 1):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        try:
            entry = dict(tok.split("=", 1) for tok in ln.split())
        except ValueError:
            raise FormatError(f"{os.fspath(path)}:{n}: expected key=value tokens") from None
        if "id" not in entry:
            raise FormatError(f"{os.fspath(path)}:{n}: missing id")
        out.append(entry)
    return out


def load_bank(directory) -> ManeuverBank:
    directory = Path(directory)
    bank = ManeuverBank()
    for entry in read_index(directory):
        window = read_window(directory / entry.get("file", window_filename(entry["id"])))
        if window.maneuver_id != entry["id"]:
            raise FormatError(f"index id {entry['id']} does not match file id {window.maneuver_id}")
        params = LinearKernelParams(
            float(entry["sigma_l"]), float(entry["c"]), float(entry["noise_var"])
        )
        bank.append(window, params)
    return bank


def build_bank(
    windows,
    default: LinearKernelParams = DEFAULT_PARAMS,
    budget: int = 200,
    seed: int = 0,
) -> ManeuverBank:
    """Bank of ``windows`` in the given (trip) order, each with its own fitted params."""
    bank = ManeuverBank()
    for w in windows:
        append_completed(bank, w, default=default, budget=budget, seed=seed)
    return bank
