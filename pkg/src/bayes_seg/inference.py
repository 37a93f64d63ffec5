"""MAP labelling of the layered network.

Three procedures are provided:

- ``icm``: sweeps superpixels in ascending id order and moves each one to the
  class that maximizes every term of the joint score depending on it. The
  joint score therefore never decreases across an update.
- ``decompose``: fixes one superpixel at a time, always the unfixed one whose
  best class scores highest, conditioning on fixed labels and on threshold
  labels for the rest.
- ``combined``: ``decompose`` followed by ``icm`` from its result.

Ties (classes, superpixels) always go to the lower index.
"""

import heapq
import logging
import math
import time
from collections.abc import Callable, Sequence
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .bn_model import Labeling, LayeredNetwork, NetworkPart, PredicateConfig
from .class_model import ClassModel, nearest_class
from .superpixel import SuperpixelMap

logger = logging.getLogger(__name__)

InferenceName = Literal["icm", "decomp", "combined"]

UpdateCallback = Callable[[int, int, Sequence[int]], None]


class IcmConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    stop_fraction: float = Field(default=0.10, gt=0, le=1)
    max_sweeps: int = Field(default=20, ge=1)

    def change_threshold(self, n: int) -> int:
        """A sweep with more changes than this triggers another sweep."""
        return math.ceil(self.stop_fraction * n)


class SweepRecord(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    phase: Literal["decomp", "icm"]
    changed: int
    log_score: float


class InferenceTrace(BaseModel):
    """Per-pass change counts and scores, the final labels and the wall time."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    algorithm: InferenceName
    sweeps: list[SweepRecord] = Field(default_factory=list)
    labels: list[int] = Field(default_factory=list)
    fix_order: list[int] | None = None
    seconds: float = 0.0

    @property
    def icm_sweeps(self) -> int:
        return sum(1 for s in self.sweeps if s.phase == "icm")

    @property
    def final_log_score(self) -> float:
        return self.sweeps[-1].log_score if self.sweeps else float("-inf")


def init_threshold(sp: SuperpixelMap, model: ClassModel) -> Labeling:
    """Label every superpixel with the class of the nearest center to its mean."""
    return Labeling.of(nearest_class(sp.means, model.center_array))


def icm(
    sp: SuperpixelMap,
    init: Labeling,
    model: ClassModel,
    cfg: PredicateConfig,
    icm_cfg: IcmConfig | None = None,
    *,
    part: NetworkPart = "full",
    on_update: UpdateCallback | None = None,
) -> tuple[Labeling, InferenceTrace]:
    """Iterated conditional modes from ``init``.

    Updates are visible immediately within a sweep. ``on_update(i, c, labels)``
    is called after each label change; it must not modify ``labels``.
    """
    icm_cfg = icm_cfg if icm_cfg is not None else IcmConfig()
    init.check(sp.n, model.k)
    start = time.perf_counter()
    network = LayeredNetwork(sp, model, cfg, part)
    labels = init.labels.tolist()
    threshold = icm_cfg.change_threshold(sp.n)

    trace = InferenceTrace(algorithm="icm")
    for sweep in range(1, icm_cfg.max_sweeps + 1):
        changed = 0
        for i in range(sp.n):
            c, _ = network.best_class(i, labels, blanket=True)
            if c != labels[i]:
                labels[i] = c
                changed += 1
                if on_update is not None:
                    on_update(i, c, labels)
        score = network.global_log_score(labels)
        trace.sweeps.append(SweepRecord(phase="icm", changed=changed, log_score=score))
        logger.debug("icm sweep %d: %d changes, log score %.6f", sweep, changed, score)
        if changed <= threshold:
            break

    result = Labeling(np.asarray(labels, dtype=np.int64), init.fixed.copy())
    trace.labels = labels
    trace.seconds = time.perf_counter() - start
    return result, trace


def decompose(
    sp: SuperpixelMap,
    model: ClassModel,
    cfg: PredicateConfig,
    *,
    part: NetworkPart = "full",
) -> tuple[Labeling, InferenceTrace]:
    """Fix superpixels one at a time, most confident first.

    Unfixed superpixels keep their threshold labels as provisional values.
    Only the neighbours of a newly fixed superpixel are rescored.
    """
    start = time.perf_counter()
    network = LayeredNetwork(sp, model, cfg, part)
    provisional = init_threshold(sp, model).labels.tolist()
    labels = list(provisional)
    fixed = [False] * sp.n
    version = [0] * sp.n

    heap: list[tuple[float, int, int, int]] = []
    for i in range(sp.n):
        c, score = network.best_class(i, labels)
        heap.append((-score, i, c, 0))
    heapq.heapify(heap)

    order: list[int] = []
    while heap:
        _, i, c, stamp = heapq.heappop(heap)
        if fixed[i] or stamp != version[i]:
            continue
        labels[i] = c
        fixed[i] = True
        order.append(i)
        for j in sp.neighbors[i]:
            if fixed[j]:
                continue
            version[j] += 1
            cj, sj = network.best_class(j, labels)
            heapq.heappush(heap, (-sj, j, cj, version[j]))

    changed = sum(1 for a, b in zip(labels, provisional, strict=True) if a != b)
    score = network.global_log_score(labels)
    logger.debug("decomposition fixed %d superpixels, %d relabelled", len(order), changed)

    result = Labeling(np.asarray(labels, dtype=np.int64), np.ones(sp.n, dtype=bool))
    trace = InferenceTrace(
        algorithm="decomp",
        sweeps=[SweepRecord(phase="decomp", changed=changed, log_score=score)],
        labels=labels,
        fix_order=order,
        seconds=time.perf_counter() - start,
    )
    return result, trace


def combined(
    sp: SuperpixelMap,
    model: ClassModel,
    cfg: PredicateConfig,
    icm_cfg: IcmConfig | None = None,
    *,
    part: NetworkPart = "full",
) -> tuple[Labeling, InferenceTrace]:
    """Decomposition, then ICM started from its labelling."""
    decomp_labels, decomp_trace = decompose(sp, model, cfg, part=part)
    labels, icm_trace = icm(sp, decomp_labels, model, cfg, icm_cfg, part=part)
    trace = InferenceTrace(
        algorithm="combined",
        sweeps=decomp_trace.sweeps + icm_trace.sweeps,
        labels=icm_trace.labels,
        fix_order=decomp_trace.fix_order,
        seconds=decomp_trace.seconds + icm_trace.seconds,
    )
    return labels, trace


def infer(
    algorithm: InferenceName,
    sp: SuperpixelMap,
    model: ClassModel,
    cfg: PredicateConfig,
    icm_cfg: IcmConfig | None = None,
    *,
    part: NetworkPart = "full",
) -> tuple[Labeling, InferenceTrace]:
    """Run one of the three procedures by name; ICM alone starts from thresholding."""
    if algorithm == "icm":
        return icm(sp, init_threshold(sp, model), model, cfg, icm_cfg, part=part)
    if algorithm == "decomp":
        return decompose(sp, model, cfg, part=part)
    return combined(sp, model, cfg, icm_cfg, part=part)
