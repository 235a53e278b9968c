"""Spike-train ingestion, trial/neuron filtering and resampling by concatenation."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import Realization, ValidationError

log = logging.getLogger(__name__)

TIE_JITTER = 2.0 ** -40


class EmptyResultError(ValidationError):
    """A filter removed everything (EMPTY_RESULT)."""


@dataclass(frozen=True, eq=False)
class SpikeDataset:
    """Raw trials with original neuron labels and a per-step provenance log.

    ``trials[k].dims`` index into ``neuron_ids``; ``trial_names`` keep the
    dataset order used by :func:`resample_concat`.
    """

    trials: tuple[Realization, ...]
    neuron_ids: tuple
    trial_names: tuple[str, ...] = ()
    provenance: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        object.__setattr__(self, "neuron_ids", tuple(self.neuron_ids))
        names = tuple(self.trial_names) or tuple(f"trial{k:03d}" for k in range(len(self.trials)))
        if len(names) != len(self.trials):
            raise ValidationError("one name per trial expected")
        object.__setattr__(self, "trial_names", names)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        for r in self.trials:
            if r.dimension != len(self.neuron_ids):
                raise ValidationError("trial dimension does not match neuron count")

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def n_neurons(self) -> int:
        return len(self.neuron_ids)

    def counts(self) -> np.ndarray:
        """Event counts, shape (n_trials, n_neurons)."""
        return np.array([r.counts() for r in self.trials], dtype=np.int64).reshape(self.n_trials, self.n_neurons)

    def _step(self, name: str, before: "SpikeDataset", **extra) -> dict:
        entry = {
            "step": name,
            "trials_before": before.n_trials,
            "trials_after": self.n_trials,
            "neurons_before": before.n_neurons,
            "neurons_after": self.n_neurons,
            "events_before": int(before.counts().sum()),
            "events_after": int(self.counts().sum()),
        }
        entry.update(extra)
        return entry


def _logged(new: SpikeDataset, old: SpikeDataset, name: str, **extra) -> SpikeDataset:
    entry = new._step(name, old, **extra)
    log.info("%s: %s", name, entry)
    return replace(new, provenance=old.provenance + (entry,))


def _clean_events(times: np.ndarray, labels: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray, dict]:
    """Sort, drop same-neuron duplicates and jitter cross-neuron ties forward."""
    order = np.lexsort((labels, times))
    times = times[order]
    labels = labels[order]
    keep = np.ones(times.size, dtype=bool)
    keep[1:] = ~((times[1:] == times[:-1]) & (labels[1:] == labels[:-1]))
    n_dup = int((~keep).sum())
    times = times[keep]
    labels = labels[keep]
    n_jit = 0
    out = times.copy()
    k = 0
    for l in range(1, out.size):
        if times[l] == times[l - 1]:
            k += 1
            out[l] = times[l] + k * TIE_JITTER
            n_jit += 1
        else:
            k = 0
    if n_dup or n_jit:
        warnings.warn(f"{name}: removed {n_dup} duplicate spikes, jittered {n_jit} cross-neuron ties", stacklevel=3)
    return out, labels, {"duplicates_removed": n_dup, "ties_jittered": n_jit}


def load_manifest(path) -> SpikeDataset:
    """Read a manifest ``{"horizon": T, "neurons": [...]?, "trials": [csv, ...]}``.

    Each trial CSV has a ``time,neuron_id`` header.  Without a ``neurons``
    list the sorted union of ids seen across trials is used.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    horizon = float(doc["horizon"])
    raw = []
    for entry in doc["trials"]:
        f = path.parent / entry
        times, ids = [], []
        with open(f, newline="") as fh:
            for row in csv.DictReader(fh):
                times.append(float(row["time"]))
                ids.append(row["neuron_id"].strip())
        raw.append((Path(entry).stem, np.array(times, dtype=float), ids))
    if "neurons" in doc:
        neurons = [str(n) for n in doc["neurons"]]
    else:
        seen = {i for _, _, ids in raw for i in ids}
        neurons = sorted(seen, key=lambda s: (0, int(s)) if s.lstrip("-").isdigit() else (1, s))
    index = {n: k for k, n in enumerate(neurons)}
    trials, names, notes = [], [], []
    for name, times, ids in raw:
        unknown = set(ids) - index.keys()
        if unknown:
            raise ValidationError(f"{name}: neuron ids not in manifest: {sorted(unknown)[:5]}")
        labels = np.array([index[i] for i in ids], dtype=np.int64)
        t, lab, note = _clean_events(times, labels, name)
        trials.append(Realization(t, lab, horizon, len(neurons)))
        names.append(name)
        notes.append({"trial": name, **note})
    ds = SpikeDataset(tuple(trials), tuple(neurons), tuple(names))
    entry = {
        "step": "load",
        "manifest": str(path),
        "trials_after": ds.n_trials,
        "neurons_after": ds.n_neurons,
        "events_after": int(ds.counts().sum()),
        "cleaning": notes,
    }
    return replace(ds, provenance=(entry,))


def trim(ds: SpikeDataset, window: Sequence[float]) -> SpikeDataset:
    """Keep events in ``(a, b]``, shift them by ``-a`` and set the horizon to ``b - a``."""
    a, b = float(window[0]), float(window[1])
    if not a < b:
        raise ValidationError("trim window needs a < b")
    out = []
    for r in ds.trials:
        sel = (r.times > a) & (r.times <= b)
        out.append(Realization(r.times[sel] - a, r.dims[sel], b - a, r.dimension))
    new = replace(ds, trials=tuple(out))
    return _logged(new, ds, "trim", window=[a, b])


def filter_trials(ds: SpikeDataset, max_inactive: int) -> SpikeDataset:
    """Drop trials whose number of silent neurons is ``>= max_inactive``."""
    if max_inactive < 0:
        raise ValidationError("max_inactive must be >= 0")
    inactive = (ds.counts() == 0).sum(axis=1)
    keep = [k for k in range(ds.n_trials) if inactive[k] < max_inactive]
    new = replace(
        ds,
        trials=tuple(ds.trials[k] for k in keep),
        trial_names=tuple(ds.trial_names[k] for k in keep),
    )
    return _logged(new, ds, "filter_trials", max_inactive=int(max_inactive),
                   dropped=[ds.trial_names[k] for k in range(ds.n_trials) if k not in keep])


def filter_neurons(ds: SpikeDataset, min_total_jumps: int) -> SpikeDataset:
    """Keep neurons with at least ``min_total_jumps`` events summed over trials; re-index densely."""
    if min_total_jumps < 0:
        raise ValidationError("min_total_jumps must be >= 0")
    totals = ds.counts().sum(axis=0) if ds.n_trials else np.zeros(ds.n_neurons, dtype=np.int64)
    keep = np.nonzero(totals >= min_total_jumps)[0]
    if keep.size == 0:
        raise EmptyResultError(f"EMPTY_RESULT: no neuron has >= {min_total_jumps} events")
    remap = np.full(ds.n_neurons, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    out = []
    for r in ds.trials:
        sel = remap[r.dims] >= 0
        out.append(Realization(r.times[sel], remap[r.dims[sel]], r.horizon, int(keep.size)))
    new = replace(ds, trials=tuple(out), neuron_ids=tuple(ds.neuron_ids[k] for k in keep))
    return _logged(new, ds, "filter_neurons", min_total_jumps=int(min_total_jumps),
                   id_map={str(ds.neuron_ids[k]): int(remap[k]) + 1 for k in keep})


def concatenate(trials: Sequence[Realization]) -> Realization:
    """Place trials end to end, each shifted by the summed horizons before it."""
    times, dims = [], []
    shift = 0.0
    for r in trials:
        times.append(r.times + shift)
        dims.append(r.dims)
        shift += r.horizon
    return Realization(np.concatenate(times), np.concatenate(dims), shift, trials[0].dimension)


def resample_concat(ds: SpikeDataset, k_per_sample: int, n_samples: int, seed: int) -> list[Realization]:
    """``n_samples`` concatenations of ``k_per_sample`` distinct trials kept in dataset order.

    Sample ``s`` draws from ``PCG64(SeedSequence(seed, spawn_key=(s,)))``.
    """
    if not 1 <= k_per_sample <= ds.n_trials:
        raise ValidationError(f"k_per_sample={k_per_sample} must lie in [1, {ds.n_trials}]")
    out = []
    for s in range(n_samples):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(s,))))
        picked = np.sort(rng.choice(ds.n_trials, size=k_per_sample, replace=False))
        out.append(concatenate([ds.trials[k] for k in picked]))
    return out


def normalized_counts(r: Realization, grid) -> np.ndarray:
    """``N^i(t) / t`` on ``grid`` (t > 0), shape (len(grid), d)."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValidationError("grid points must be > 0")
    out = np.empty((grid.size, r.dimension))
    for i in range(r.dimension):
        out[:, i] = np.searchsorted(r.view(i), grid, side="right") / grid
    return out


def write_normalized_counts(r: Realization, path, n_points: int = 200, labels: Sequence | None = None) -> None:
    grid = np.linspace(r.horizon / n_points, r.horizon, n_points)
    vals = normalized_counts(r, grid)
    labels = list(labels) if labels is not None else [str(i + 1) for i in range(r.dimension)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"N{l}_over_t" for l in labels])
        for t, row in zip(grid, vals):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
