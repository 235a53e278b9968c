"""Domain types: kernel parameters, realizations, trial sets and file I/O."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ModelVariant(str, enum.Enum):
    HP = "hp"
    VM = "vm"
    GVM = "gvm"


class Constraint(enum.IntEnum):
    """Per-pair structural tag applied to (alpha_ij, alpha_tilde_ij).

    ``TILDE_ZERO`` keeps alpha_ij free and pins alpha_tilde_ij to 0 (memory
    reset for that pair).
    """

    FREE = 0
    ZERO = 1
    EQUAL = 2
    TILDE_ZERO = 3


class ValidationError(ValueError):
    """Raised when inputs violate a documented invariant."""


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class KernelParameters:
    """Exponential-kernel parameters ``(mu, alpha, beta, alpha_tilde, beta_tilde)``.

    Matrices are indexed ``[receiver, emitter]``. ``beta_tilde`` defaults to
    ``beta`` and ``mask`` to all-FREE.
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha_tilde: np.ndarray
    beta_tilde: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        mu = _frozen(self.mu).ravel()
        d = mu.size
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", _frozen(self.alpha, (d, d)))
        object.__setattr__(self, "beta", _frozen(self.beta).ravel())
        object.__setattr__(self, "alpha_tilde", _frozen(self.alpha_tilde, (d, d)))
        bt = self.beta if self.beta_tilde is None else self.beta_tilde
        object.__setattr__(self, "beta_tilde", _frozen(bt).ravel())
        mask = np.zeros((d, d), dtype=np.int64) if self.mask is None else np.array(self.mask, dtype=np.int64).reshape(d, d)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if self.beta.size != d or self.beta_tilde.size != d:
            raise ValidationError("beta and beta_tilde must have length d")

    @property
    def dimension(self) -> int:
        return self.mu.size

    @property
    def common_decay(self) -> bool:
        return bool(np.array_equal(self.beta, self.beta_tilde))

    def replace(self, **changes) -> "KernelParameters":
        kw = dict(
            mu=self.mu, alpha=self.alpha, beta=self.beta,
            alpha_tilde=self.alpha_tilde, beta_tilde=self.beta_tilde, mask=self.mask,
        )
        kw.update(changes)
        return KernelParameters(**kw)

    def with_mask(self, mask) -> "KernelParameters":
        """Return a copy with ``mask`` installed and its constraints applied exactly."""
        mask = np.asarray(mask, dtype=np.int64)
        alpha = np.array(self.alpha)
        alpha_tilde = np.array(self.alpha_tilde)
        alpha[mask == Constraint.ZERO] = 0.0
        alpha_tilde[mask == Constraint.ZERO] = 0.0
        alpha_tilde[mask == Constraint.TILDE_ZERO] = 0.0
        eq = mask == Constraint.EQUAL
        alpha_tilde[eq] = alpha[eq]
        return self.replace(alpha=alpha, alpha_tilde=alpha_tilde, mask=mask)

    @classmethod
    def for_variant(cls, mu, alpha, beta, variant: ModelVariant | str, alpha_tilde=None) -> "KernelParameters":
        """Build parameters whose tilde kernels follow ``variant``."""
        variant = ModelVariant(variant)
        alpha = np.asarray(alpha, dtype=float)
        if variant is ModelVariant.HP:
            alpha_tilde = alpha
        elif variant is ModelVariant.VM:
            alpha_tilde = np.zeros_like(alpha)
        elif alpha_tilde is None:
            raise ValidationError("GVM parameters need alpha_tilde")
        return cls(mu=mu, alpha=alpha, beta=beta, alpha_tilde=alpha_tilde, beta_tilde=beta)

    def to_dict(self, variant: ModelVariant | str | None = None) -> dict:
        doc = {
            "mu": self.mu.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "alpha_tilde": self.alpha_tilde.tolist(),
            "beta_tilde": self.beta_tilde.tolist(),
            "mask": [[Constraint(int(c)).name for c in row] for row in self.mask],
        }
        if variant is not None:
            doc["variant"] = ModelVariant(variant).value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelParameters":
        mask = doc.get("mask")
        if mask is not None:
            mask = [[Constraint[c] if isinstance(c, str) else Constraint(int(c)) for c in row] for row in mask]
        return cls(
            mu=doc["mu"], alpha=doc["alpha"], beta=doc["beta"],
            alpha_tilde=doc.get("alpha_tilde", doc["alpha"]),
            beta_tilde=doc.get("beta_tilde"), mask=mask,
        )


def validate(params: KernelParameters, variant: ModelVariant | str | None = None) -> list[str]:
    """Return every violated invariant (1-based indices); empty means usable."""
    problems = []
    for name in ("mu", "beta", "beta_tilde"):
        vec = getattr(params, name)
        for i, v in enumerate(vec):
            if not v > 0:
                problems.append(f"{name}[{i + 1}] not > 0")
    for name in ("mu", "alpha", "beta", "alpha_tilde", "beta_tilde"):
        if not np.all(np.isfinite(getattr(params, name))):
            problems.append(f"{name} has non-finite entries")
    m = params.mask
    for i, j in zip(*np.nonzero(m == Constraint.ZERO)):
        if params.alpha[i, j] != 0.0 or params.alpha_tilde[i, j] != 0.0:
            problems.append(f"mask[{i + 1}][{j + 1}]=ZERO but (alpha, alpha_tilde) != (0, 0)")
    for i, j in zip(*np.nonzero(m == Constraint.TILDE_ZERO)):
        if params.alpha_tilde[i, j] != 0.0:
            problems.append(f"mask[{i + 1}][{j + 1}]=TILDE_ZERO but alpha_tilde != 0")
    for i, j in zip(*np.nonzero(m == Constraint.EQUAL)):
        if params.alpha_tilde[i, j] != params.alpha[i, j]:
            problems.append(f"mask[{i + 1}][{j + 1}]=EQUAL but alpha_tilde != alpha")
    if variant is not None:
        variant = ModelVariant(variant)
        if variant is ModelVariant.HP:
            if not np.array_equal(params.alpha, params.alpha_tilde):
                problems.append("variant HP requires alpha_tilde == alpha")
            if not np.array_equal(params.beta, params.beta_tilde):
                problems.append("variant HP requires beta_tilde == beta")
        elif variant is ModelVariant.VM and np.any(params.alpha_tilde != 0.0):
            problems.append("variant VM requires alpha_tilde == 0")
    return problems


@dataclass(frozen=True, eq=False)
class Realization:
    """One multivariate path on ``[0, horizon]``.

    ``dims`` are 0-based here; files and user-facing output use 1-based labels.
    """

    times: np.ndarray
    dims: np.ndarray
    horizon: float
    dimension: int

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        dims = np.array(self.dims, dtype=np.int64).ravel()
        times.setflags(write=False)
        dims.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "dimension", int(self.dimension))
        if times.size != dims.size:
            raise ValidationError("times and dims differ in length")
        if self.dimension < 1:
            raise ValidationError("dimension must be >= 1")
        if not self.horizon > 0:
            raise ValidationError("horizon must be > 0")
        if times.size:
            if not np.all(np.isfinite(times)):
                raise ValidationError("non-finite event time")
            if times[0] <= 0.0 or times[-1] > self.horizon:
                raise ValidationError("event times must lie in (0, horizon]")
            gaps = np.diff(times)
            if np.any(gaps <= 0.0):
                k = int(np.argmax(gaps <= 0.0))
                raise ValidationError(f"event times not strictly increasing at index {k + 1}")
            if dims.min() < 0 or dims.max() >= self.dimension:
                raise ValidationError("dimension label out of range")

    def __len__(self) -> int:
        return self.times.size

    def view(self, i: int) -> np.ndarray:
        """Event times of subprocess ``i`` (0-based)."""
        if not 0 <= i < self.dimension:
            raise IndexError(f"dimension {i} out of range for d={self.dimension}")
        return self.times[self.dims == i]

    def counts(self) -> np.ndarray:
        return np.bincount(self.dims, minlength=self.dimension)

    def shifted(self, offset: float, horizon: float | None = None) -> "Realization":
        return Realization(self.times + offset, self.dims, horizon if horizon is not None else self.horizon + offset, self.dimension)


def per_dimension_view(r: Realization, i: int) -> np.ndarray:
    """Event times of subprocess ``i`` given as a 1-based label."""
    if not 1 <= i <= r.dimension:
        raise IndexError(f"dimension {i} out of range 1..{r.dimension}")
    return r.view(i - 1)


@dataclass(frozen=True)
class TrialSet:
    realizations: tuple[Realization, ...] = field(default_factory=tuple)

    def __post_init__(self):
        reals = tuple(self.realizations)
        object.__setattr__(self, "realizations", reals)
        if not reals:
            raise ValidationError("a trial set needs at least one realization")
        dims = {r.dimension for r in reals}
        if len(dims) != 1:
            raise ValidationError(f"realizations disagree on dimension: {sorted(dims)}")

    @property
    def dimension(self) -> int:
        return self.realizations[0].dimension

    def __len__(self) -> int:
        return len(self.realizations)

    def __iter__(self):
        return iter(self.realizations)

    def __getitem__(self, k):
        return self.realizations[k]


# --- file formats -----------------------------------------------------------

def write_realization(r: Realization, path: str | Path) -> None:
    """Write ``time,dim`` CSV (1-based dims) with horizon/dimension comment lines."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# horizon: {r.horizon!r}\n# dimension: {r.dimension}\n")
        w = csv.writer(fh)
        w.writerow(["time", "dim"])
        for t, k in zip(r.times.tolist(), r.dims.tolist()):
            w.writerow([repr(t), k + 1])


def read_realization(path: str | Path, dimension: int | None = None, horizon: float | None = None) -> Realization:
    """Read a ``time,dim`` CSV.

    Missing horizon/dimension comments fall back to the last event time and the
    largest label seen.
    """
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line.strip():
                lines.append(line)
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["time", "dim"]:
        raise ValidationError(f"{path}: expected header 'time,dim'")
    for row in reader:
        rows.append((float(row["time"]), int(row["dim"])))
    times = np.array([t for t, _ in rows], dtype=float)
    dims = np.array([k for _, k in rows], dtype=np.int64) - 1
    if dimension is None:
        dimension = int(meta["dimension"]) if "dimension" in meta else (int(dims.max()) + 1 if dims.size else 1)
    if horizon is None:
        if "horizon" in meta:
            horizon = float(meta["horizon"])
        elif times.size:
            horizon = float(times[-1])
        else:
            raise ValidationError(f"{path}: empty realization without a horizon")
    return Realization(times, dims, horizon, dimension)


def read_trials(directory: str | Path) -> TrialSet:
    """Load every ``*.csv`` in ``directory`` in sorted filename order."""
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise ValidationError(f"no CSV realizations in {directory}")
    reals = [read_realization(f) for f in files]
    d = max(r.dimension for r in reals)
    reals = [r if r.dimension == d else Realization(r.times, r.dims, r.horizon, d) for r in reals]
    return TrialSet(tuple(reals))


def write_trials(trials: Iterable[Realization], directory: str | Path, prefix: str = "trial") -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    trials = list(trials)
    width = max(3, len(str(len(trials))))
    paths = []
    for k, r in enumerate(trials):
        p = out / f"{prefix}_{k:0{width}d}.csv"
        write_realization(r, p)
        paths.append(p)
    return paths


def load_params(path: str | Path) -> tuple[KernelParameters, ModelVariant | None]:
    with open(path) as fh:
        doc = json.load(fh)
    variant = ModelVariant(doc["variant"]) if doc.get("variant") else None
    return KernelParameters.from_dict(doc), variant


def save_params(params: KernelParameters, path: str | Path, variant=None) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(variant), fh, indent=2)
        fh.write("\n")


def stack_trials(reals: Sequence[Realization]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate trials into flat arrays plus offsets and horizons for batch kernels."""
    offsets = np.zeros(len(reals) + 1, dtype=np.int64)
    for k, r in enumerate(reals):
        offsets[k + 1] = offsets[k] + len(r)
    times = np.concatenate([r.times for r in reals]) if reals else np.zeros(0)
    dims = np.concatenate([r.dims for r in reals]) if reals else np.zeros(0, dtype=np.int64)
    horizons = np.array([r.horizon for r in reals], dtype=float)
    return times, dims, offsets, horizons

