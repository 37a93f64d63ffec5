"""Class centers and the Gaussian probabilities built on them.

A class model is k intensity centers, each with a standard deviation. The
posterior over classes for an observed intensity is the normalized vector of
Gaussian densities; the region likelihood is the raw density of the region
mean under the chosen class.
"""

import logging
import math
from collections.abc import Sequence
from typing import Self

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp

from .utils import ClusteringError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 50.0
MAX_ITERATIONS = 100

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ClassModel(BaseModel):
    """Centers ``C1..Ck`` (strictly increasing) and per-class deviations.

    ``region_sigmas`` overrides the deviations used for the region likelihood;
    when unset both probabilities share ``sigmas``.
    """

    model_config = ConfigDict(frozen=True)

    centers: list[float] = Field(min_length=1)
    sigmas: list[float]
    region_sigmas: list[float] | None = None

    @model_validator(mode="after")
    def _check(self) -> Self:
        k = len(self.centers)
        if any(not math.isfinite(c) for c in self.centers):
            raise ValueError("class centers must be finite")
        if any(b <= a for a, b in zip(self.centers, self.centers[1:], strict=False)):
            raise ValueError(f"class centers must be strictly increasing, got {self.centers}")
        for name, values in (("sigmas", self.sigmas), ("region_sigmas", self.region_sigmas)):
            if values is None:
                continue
            if len(values) != k:
                raise ValueError(f"{name} needs {k} entries, got {len(values)}")
            if any(not s > 0 for s in values):
                raise ValueError(f"{name} must be positive, got {values}")
        return self

    @classmethod
    def uniform(cls, centers: Sequence[float], sigma: float = DEFAULT_SIGMA) -> "ClassModel":
        return cls(centers=list(centers), sigmas=[sigma] * len(centers))

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def center_array(self) -> NDArray[np.float64]:
        return np.asarray(self.centers, dtype=np.float64)

    @property
    def sigma_array(self) -> NDArray[np.float64]:
        return np.asarray(self.sigmas, dtype=np.float64)

    @property
    def region_sigma_array(self) -> NDArray[np.float64]:
        values = self.sigmas if self.region_sigmas is None else self.region_sigmas
        return np.asarray(values, dtype=np.float64)

    def with_sigma(self, sigma: float | Sequence[float]) -> "ClassModel":
        """Copy with new deviations for both probabilities (region override cleared)."""
        sigmas = [float(sigma)] * self.k if isinstance(sigma, int | float) else list(sigma)
        return ClassModel(centers=self.centers, sigmas=sigmas)

    def to_json(self) -> str:
        return self.model_dump_json(exclude_none=True)

    @classmethod
    def from_json(cls, text: str) -> "ClassModel":
        return cls.model_validate_json(text)


def gaussian_log_density(v: ArrayLike, mu: ArrayLike, sigma: ArrayLike) -> NDArray[np.float64]:
    """Elementwise log of the normal density, broadcasting over all arguments."""
    v_, mu_, s_ = (np.asarray(a, dtype=np.float64) for a in (v, mu, sigma))
    z = (v_ - mu_) / s_
    return np.asarray(-0.5 * z * z - np.log(s_) - _LOG_SQRT_2PI)


def gaussian_density(v: float, mu: float, sigma: float) -> float:
    """Normal density with mean ``mu`` and deviation ``sigma`` at ``v``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return float(np.exp(gaussian_log_density(v, mu, sigma)))


def nearest_class(values: ArrayLike, centers: ArrayLike) -> NDArray[np.int64]:
    """1-based index of the nearest center; equidistant values take the lower class."""
    v = np.asarray(values, dtype=np.float64)[..., None]
    c = np.asarray(centers, dtype=np.float64)
    return np.argmin(np.abs(v - c), axis=-1).astype(np.int64) + 1


def log_posterior(values: ArrayLike, model: ClassModel) -> NDArray[np.float64]:
    """Log of the normalized class posterior, shape ``values.shape + (k,)``."""
    v = np.asarray(values, dtype=np.float64)
    logd = gaussian_log_density(v[..., None], model.center_array, model.sigma_array)
    norm = logsumexp(logd, axis=-1, keepdims=True)
    out = np.asarray(logd - norm)

    bad = ~np.all(np.isfinite(out), axis=-1)
    if np.any(bad):
        logger.warning(
            "class posterior underflowed for %d value(s); using nearest center", int(np.sum(bad))
        )
        nearest = nearest_class(v, model.center_array) - 1
        onehot = np.where(np.arange(model.k) == nearest[..., None], 0.0, -np.inf)
        out = np.where(bad[..., None], onehot, out)
    return out


def posterior_y(v: float, model: ClassModel) -> NDArray[np.float64]:
    """Class probabilities ``P(Y = Cj | X = v)``, summing to one."""
    p = np.exp(log_posterior(v, model))
    return np.asarray(p / p.sum())


def region_likelihood(r: float, label: int, model: ClassModel) -> float:
    """Unnormalized density of the region mean ``r`` under class ``label`` (1-based)."""
    if not 1 <= label <= model.k:
        raise ParameterError(f"label must lie in 1..{model.k}, got {label}")
    return float(
        np.exp(gaussian_log_density(r, model.centers[label - 1], model.region_sigma_array[label - 1]))
    )


def _plusplus_seed(x: NDArray[np.float64], k: int, rng: np.random.Generator) -> NDArray[np.float64]:
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        centers.append(x[rng.choice(x.size, p=d2 / d2.sum())])
    return np.asarray(centers)


def _lloyd(
    x: NDArray[np.float64], centers: NDArray[np.float64], max_iter: int
) -> tuple[NDArray[np.float64], float, int]:
    k = centers.size
    labels = np.full(x.size, -1)
    for iteration in range(1, max_iter + 1):
        dist = np.abs(x[:, None] - centers[None, :])
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # empty cluster: take over the point farthest from its own center
            far = int(np.argmax(dist[np.arange(x.size), new_labels]))
            logger.debug("repairing empty k-means cluster %d with value %g", j, x[far])
            new_labels[far] = j
            dist[far] = 0.0
            counts = np.bincount(new_labels, minlength=k)
        centers = np.bincount(new_labels, weights=x, minlength=k) / counts
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    sse = float(np.sum((x - centers[labels]) ** 2))
    return centers, sse, iteration


def kmeans_centers(
    values: ArrayLike,
    k: int,
    seed: int = 0,
    *,
    sigma: float = DEFAULT_SIGMA,
    restarts: int = 10,
    max_iter: int = MAX_ITERATIONS,
) -> ClassModel:
    """Cluster intensities into ``k`` classes with k-means++ seeded Lloyd iterations.

    The lowest-SSE result over ``restarts`` seedings is kept; every class gets
    deviation ``sigma``.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ClusteringError("cannot cluster an empty set of values")
    distinct = int(np.unique(x).size)
    if not 2 <= k <= distinct:
        raise ClusteringError(f"k must lie in 2..{distinct} (distinct values), got {k}")

    rng = np.random.default_rng(seed)
    best: tuple[NDArray[np.float64], float] | None = None
    for _ in range(max(restarts, 1)):
        centers, sse, iterations = _lloyd(x, _plusplus_seed(x, k, rng), max_iter)
        logger.debug("k-means run converged after %d iterations (sse %.6g)", iterations, sse)
        if best is None or sse < best[1]:
            best = (centers, sse)
    assert best is not None

    centers = np.sort(best[0])
    if np.any(np.diff(centers) <= 0):
        raise ClusteringError(f"k-means produced coincident centers {centers.tolist()}")
    return ClassModel.uniform(centers.tolist(), sigma)
