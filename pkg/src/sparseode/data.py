"""Time course data containers."""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import DataError, DimensionError
from .validation import as_float_matrix, check_times, check_weights

__all__ = ["Environment", "Dataset", "FitResult", "make_dataset"]


@dataclass(frozen=True)
class Environment:
    """Observations from one experimental environment."""

    times: np.ndarray  # (n,), strictly increasing
    values: np.ndarray  # (n, d)
    weights: np.ndarray  # (n, d), non-negative

    @property
    def n_times(self):
        return self.times.shape[0]


@dataclass(frozen=True)
class Dataset:
    """E environments observed from the same system, with optional per
    environment intervention scale vectors c_e (length p, Hadamard applied
    to the baseline parameter)."""

    environments: tuple
    scales: tuple | None = None
    species: tuple = ()

    @property
    def n_env(self):
        return len(self.environments)

    @property
    def n_species(self):
        return self.environments[0].values.shape[1]

    def scales_for(self, p):
        """Scale vectors as arrays of length p, defaulting to all ones."""
        if self.scales is None:
            return [np.ones(p) for _ in self.environments]
        out = []
        for c in self.scales:
            c = np.asarray(c, dtype=float)
            if c.shape != (p,):
                raise DimensionError(
                    f"scale vector has length {c.shape[0]}, expected {p}"
                )
            out.append(c)
        return out

    def permuted(self, order):
        scales = None if self.scales is None else tuple(self.scales[e] for e in order)
        return Dataset(
            environments=tuple(self.environments[e] for e in order),
            scales=scales,
            species=self.species,
        )


def make_dataset(environments, scales=None, species=None):
    """Validate raw per-environment arrays into a Dataset.

    ``environments`` is a sequence of (times, values) or (times, values,
    weights) tuples; missing weights default to ones.
    """
    if not environments:
        raise DataError("at least one environment is required")
    envs = []
    d = None
    for k, item in enumerate(environments):
        if len(item) == 2:
            times, values = item
            weights = None
        else:
            times, values, weights = item
        times = check_times(times, name=f"environment {k} times", min_points=2)
        values = as_float_matrix(values, name=f"environment {k} values",
                                 shape=(times.shape[0], d))
        if d is None:
            d = values.shape[1]
        if weights is None:
            weights = np.ones_like(values)
        weights = check_weights(weights, (times.shape[0], d),
                                name=f"environment {k} weights")
        envs.append(Environment(times=times, values=values, weights=weights))
    if scales is not None:
        if len(scales) != len(envs):
            raise DimensionError("one scale vector per environment is required")
        scales = tuple(np.asarray(c, dtype=float) for c in scales)
    if species is None:
        species = tuple(f"X{i + 1}" for i in range(d))
    elif len(species) != d:
        raise DimensionError("species labels do not match the data dimension")
    return Dataset(environments=tuple(envs), scales=scales, species=tuple(species))


@dataclass
class FitResult:
    """One fitted candidate along a regularization path."""

    lambda_: float
    theta: np.ndarray
    support: tuple
    objective: float
    kind: str  # "im" | "ls" | "refit"
    smoother: str = ""
    diagnostics: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        expected = tuple(int(j) for j in np.flatnonzero(self.theta))
        if tuple(self.support) != expected:
            raise DataError("support does not match the nonzeros of theta")
        if not np.isfinite(self.objective):
            raise DataError("objective must be finite")

    @property
    def size(self):
        return len(self.support)
