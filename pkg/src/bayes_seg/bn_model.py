"""The layered network over superpixels and its scores.

For every superpixel ``i`` the network holds the observed mean ``Xi``, the
label ``Yi``, the region node ``Ri`` (``Yi`` with its neighbours, split into
same-class ``SR1`` and other-class ``SR2``) and one evidence node per enabled
predicate. The joint score of a labelling factorizes per superpixel::

    log P(Yi | Xi) + log P(Ri | Yi) + sum_p log P(mp | Ri)

All scores are kept in the log domain.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal, Self

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .class_model import ClassModel, log_posterior
from .superpixel import SuperpixelMap
from .utils import ParameterError

logger = logging.getLogger(__name__)

PredicateName = Literal["P1", "P2"]
NetworkPart = Literal["full", "data", "quality"]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class PredicateConfig(BaseModel):
    """Predicate thresholds and the evidence probabilities of a (non-)verified predicate."""

    model_config = ConfigDict(frozen=True)

    t1: float = Field(default=15.0, ge=0)
    t2: float = Field(default=30.0, ge=0)
    enabled: tuple[PredicateName, ...] = ("P1", "P2")
    p_true: float = 0.8
    p_false: float = 0.2

    @field_validator("enabled")
    @classmethod
    def _dedupe(cls, value: tuple[PredicateName, ...]) -> tuple[PredicateName, ...]:
        return tuple(sorted(set(value)))

    @model_validator(mode="after")
    def _check_probabilities(self) -> Self:
        if not 0 < self.p_false < self.p_true < 1:
            raise ValueError(
                f"need 0 < p_false < p_true < 1, got p_false={self.p_false}, p_true={self.p_true}"
            )
        return self


@dataclass
class Labeling:
    """Class index per superpixel (1-based) and whether decomposition has fixed it."""

    labels: NDArray[np.int64]
    fixed: NDArray[np.bool_]

    @classmethod
    def of(cls, labels: Sequence[int] | NDArray[np.integer], *, fixed: bool = False) -> "Labeling":
        arr = np.asarray(labels, dtype=np.int64).copy()
        return cls(arr, np.full(arr.shape, fixed, dtype=bool))

    @property
    def n(self) -> int:
        return int(self.labels.size)

    def copy(self) -> "Labeling":
        return Labeling(self.labels.copy(), self.fixed.copy())

    def check(self, n: int, k: int) -> None:
        if self.labels.shape != (n,) or self.fixed.shape != (n,):
            raise ParameterError(f"labeling must cover {n} superpixels, got {self.labels.shape}")
        if n and (self.labels.min() < 1 or self.labels.max() > k):
            raise ParameterError(f"labels must lie in 1..{k}")


@dataclass(frozen=True)
class RegionView:
    center_id: int
    sr1: tuple[int, ...]
    sr2: tuple[int, ...]
    r_value: float


def _rms(deviations: Sequence[float]) -> float:
    return math.sqrt(math.fsum(d * d for d in deviations) / len(deviations))


def p1_holds(sr1_dev: Sequence[float], sr2_dev: Sequence[float], cfg: PredicateConfig) -> bool:
    """RMS deviation from the center below ``t1`` on SR1 and above ``t2`` on SR2.

    An empty side satisfies its clause.
    """
    homogeneous = not sr1_dev or _rms(sr1_dev) < cfg.t1
    contrasted = not sr2_dev or _rms(sr2_dev) > cfg.t2
    return homogeneous and contrasted


def p2_holds(sr1_dev: Sequence[float], sr2_dev: Sequence[float], cfg: PredicateConfig) -> bool:
    """Largest absolute SR1 deviation below ``t1``, smallest SR2 deviation above ``t2``."""
    homogeneous = not sr1_dev or max(abs(d) for d in sr1_dev) < cfg.t1
    contrasted = not sr2_dev or min(abs(d) for d in sr2_dev) > cfg.t2
    return homogeneous and contrasted


_PREDICATES = {"P1": p1_holds, "P2": p2_holds}


def _deviations(view: RegionView, sp: SuperpixelMap) -> tuple[list[float], list[float]]:
    s = float(sp.means[view.center_id])
    return (
        [float(sp.means[j]) - s for j in view.sr1],
        [float(sp.means[j]) - s for j in view.sr2],
    )


def region_view(sp: SuperpixelMap, labels: Labeling, i: int) -> RegionView:
    """Split the neighbours of ``i`` by whether they share its class."""
    if not 0 <= i < sp.n:
        raise ParameterError(f"superpixel id must lie in 0..{sp.n - 1}, got {i}")
    c = labels.labels[i]
    sr1 = tuple(j for j in sp.neighbors[i] if labels.labels[j] == c)
    sr2 = tuple(j for j in sp.neighbors[i] if labels.labels[j] != c)
    total = int(sp.totals[i]) + sum(int(sp.totals[j]) for j in sr1)
    size = int(sp.sizes[i]) + sum(int(sp.sizes[j]) for j in sr1)
    return RegionView(i, sr1, sr2, total / size)


def eval_p1(view: RegionView, sp: SuperpixelMap, cfg: PredicateConfig) -> bool:
    return p1_holds(*_deviations(view, sp), cfg)


def eval_p2(view: RegionView, sp: SuperpixelMap, cfg: PredicateConfig) -> bool:
    return p2_holds(*_deviations(view, sp), cfg)


def predicate_factor(holds: bool, cfg: PredicateConfig) -> float:
    return cfg.p_true if holds else cfg.p_false


class LayeredNetwork:
    """Scores of labellings over a fixed superpixel map, class model and predicate set.

    ``part`` selects which factors enter a superpixel's term: ``data`` keeps the
    class posterior only, ``quality`` the region likelihood and predicate
    evidence only, ``full`` all of them.
    """

    def __init__(
        self,
        sp: SuperpixelMap,
        model: ClassModel,
        cfg: PredicateConfig | None = None,
        part: NetworkPart = "full",
    ) -> None:
        self.sp = sp
        self.model = model
        self.cfg = cfg if cfg is not None else PredicateConfig()
        self.part = part
        self.k = model.k

        self._means = sp.means.tolist()
        self._totals = sp.totals.tolist()
        self._sizes = sp.sizes.tolist()
        self._neighbors = sp.neighbors
        self._log_post = log_posterior(sp.means, model).tolist()
        self._centers = model.centers
        self._region_sigma = model.region_sigma_array.tolist()
        self._region_norm = [math.log(s) + _LOG_SQRT_2PI for s in self._region_sigma]
        self._predicates = [_PREDICATES[name] for name in self.cfg.enabled]
        self._log_true = math.log(self.cfg.p_true)
        self._log_false = math.log(self.cfg.p_false)

    def region_log_likelihood(self, r: float, c: int) -> float:
        z = (r - self._centers[c - 1]) / self._region_sigma[c - 1]
        return -0.5 * z * z - self._region_norm[c - 1]

    def node_log_term(
        self,
        i: int,
        c: int,
        labels: Sequence[int] | NDArray[np.integer],
        override: tuple[int, int] | None = None,
    ) -> float:
        """Log term of superpixel ``i`` labelled ``c``.

        ``override`` substitutes one neighbour's label without touching ``labels``.
        """
        means = self._means
        s = means[i]
        score = 0.0
        if self.part != "quality":
            score += self._log_post[i][c - 1]
        if self.part == "data":
            return score

        total = self._totals[i]
        size = self._sizes[i]
        sr1_dev: list[float] = []
        sr2_dev: list[float] = []
        for j in self._neighbors[i]:
            lj = override[1] if override is not None and override[0] == j else labels[j]
            if lj == c:
                total += self._totals[j]
                size += self._sizes[j]
                sr1_dev.append(means[j] - s)
            else:
                sr2_dev.append(means[j] - s)

        score += self.region_log_likelihood(total / size, c)
        for holds in self._predicates:
            score += self._log_true if holds(sr1_dev, sr2_dev, self.cfg) else self._log_false
        return score

    def local_log_score(self, i: int, c: int, labels: Sequence[int] | NDArray[np.integer]) -> float:
        """Log of the per-superpixel product used to rank the classes of ``i``."""
        return self.node_log_term(i, c, labels)

    def blanket_log_score(
        self, i: int, c: int, labels: Sequence[int] | NDArray[np.integer]
    ) -> float:
        """All terms of the joint score that depend on the label of ``i``."""
        score = self.node_log_term(i, c, labels)
        if self.part == "data":
            return score
        for j in self._neighbors[i]:
            score += self.node_log_term(j, int(labels[j]), labels, override=(i, c))
        return score

    def best_class(
        self,
        i: int,
        labels: Sequence[int] | NDArray[np.integer],
        *,
        blanket: bool = False,
    ) -> tuple[int, float]:
        """Highest-scoring class of ``i`` and its log score; ties go to the lower class."""
        scorer = self.blanket_log_score if blanket else self.local_log_score
        best_c, best = 1, scorer(i, 1, labels)
        for c in range(2, self.k + 1):
            score = scorer(i, c, labels)
            if score > best:
                best_c, best = c, score
        return best_c, best

    def node_log_terms(self, labels: Sequence[int] | NDArray[np.integer]) -> NDArray[np.float64]:
        return np.array([self.node_log_term(i, int(labels[i]), labels) for i in range(self.sp.n)])

    def global_log_score(self, labels: Sequence[int] | NDArray[np.integer]) -> float:
        """Joint log score of a complete labelling; ``-inf`` when any factor is zero."""
        total = math.fsum(self.node_log_terms(labels).tolist())
        return total if math.isfinite(total) else float("-inf")


def local_score(
    i: int,
    c: int,
    sp: SuperpixelMap,
    labels: Labeling,
    model: ClassModel,
    cfg: PredicateConfig,
    part: NetworkPart = "full",
) -> float:
    """``P(Yi=c|Xi) * P(Ri|pa(Ri)) * prod P(mp|Ri)`` with ``Yi`` set to ``c``."""
    if not 1 <= c <= model.k:
        raise ParameterError(f"class must lie in 1..{model.k}, got {c}")
    network = LayeredNetwork(sp, model, cfg, part)
    return math.exp(network.local_log_score(i, c, labels.labels))


def global_score(
    labels: Labeling,
    sp: SuperpixelMap,
    model: ClassModel,
    cfg: PredicateConfig,
    part: NetworkPart = "full",
) -> float:
    """Log of the joint probability of ``labels`` under the network."""
    labels.check(sp.n, model.k)
    return LayeredNetwork(sp, model, cfg, part).global_log_score(labels.labels)
