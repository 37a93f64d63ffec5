"""Run configuration shared by the CLI, the suite runner and the benchmarks."""

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

from .bn_model import NetworkPart, PredicateConfig, PredicateName
from .inference import IcmConfig, InferenceName
from .superpixel import SegmentationMode
from .utils import ConfigurationError, digest

BaselineName = Literal["otsu", "niblack", "sauvola"]

# Fields that locate files rather than shape the result.
_LOCATION_FIELDS = frozenset({"output"})


class RunConfig(BaseModel):
    """Every user-set parameter of one segmentation run. Keys are flat."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input: Path | None = None
    output: Path = Path("runs")
    superpixels: int = Field(default=200, ge=1)
    classes: int = Field(default=2, ge=1)
    sigma: float | list[float] = 50.0
    t1: float = Field(default=15.0, ge=0)
    t2: float = Field(default=30.0, ge=0)
    predicates: tuple[PredicateName, ...] = ("P1", "P2")
    p_true: float = 0.8
    p_false: float = 0.2
    inference: InferenceName = "combined"
    init: Literal["threshold"] = "threshold"
    network: NetworkPart = "full"
    stop_fraction: float = Field(default=0.10, gt=0, le=1)
    max_sweeps: int = Field(default=20, ge=1)
    seed: int = 0
    ground_truth: Path | None = None
    baseline: BaselineName | None = None
    balance: float = Field(default=0.5, ge=0)
    bandwidth: float = Field(default=30.0, gt=0)
    mode: SegmentationMode = "entropy"
    pin_model: Path | None = None
    palette: dict[int, tuple[int, int, int]] | None = None
    overlay: bool = True
    window: int = Field(default=15, ge=3)
    niblack_k: float = -0.2
    sauvola_k: float = 0.5
    sauvola_r: float = Field(default=128.0, gt=0)

    def predicate_config(self) -> PredicateConfig:
        return PredicateConfig(
            t1=self.t1,
            t2=self.t2,
            enabled=self.predicates,
            p_true=self.p_true,
            p_false=self.p_false,
        )

    def icm_config(self) -> IcmConfig:
        return IcmConfig(stop_fraction=self.stop_fraction, max_sweeps=self.max_sweeps)

    def config_hash(self) -> str:
        """Digest of every result-shaping field."""
        return digest(self.model_dump(mode="json", exclude=set(_LOCATION_FIELDS)))

    def run_name(self) -> str:
        stem = self.input.stem if self.input is not None else "image"
        return f"{stem}-{self.config_hash()}"


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a flat JSON config document; relative paths stay as written."""
    path = Path(path)
    try:
        values = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    if not isinstance(values, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return values


def merge_config(
    file_values: dict[str, Any] | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Defaults, then file values, then explicit overrides (``None`` means unset)."""
    values: dict[str, Any] = dict(file_values or {})
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return RunConfig.model_validate(values)
