from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

from infogain.errors import MissingGridError

PMF_SUM_TOLERANCE = 1e-9


def _as_grid(value: Any) -> np.ndarray:
    """Copies anything array-like into a read-only float64 2-D array."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"grid must be two-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


Grid = Annotated[np.ndarray, BeforeValidator(_as_grid)]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


# --- domain ---


class ImageFrame(_Frozen):
    """Dimensions of one stimulus image. No pixel content is kept."""

    image_id: str
    width: int = Field(ge=1)
    height: int = Field(ge=1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


class Fixation(_Frozen):
    x: float
    y: float
    t: float = Field(ge=0.0)


class FixationTrain(_Frozen):
    """One subject's ordered fixations on one image."""

    image_id: str
    subject_id: str
    fixations: list[Fixation]

    def __len__(self) -> int:
        return len(self.fixations)

    def coordinates(self) -> np.ndarray:
        """Returns an (n, 3) array of x, y, t."""
        if not self.fixations:
            return np.empty((0, 3))
        return np.array([(f.x, f.y, f.t) for f in self.fixations], dtype=np.float64)


class SaliencyMap(_Frozen):
    image_id: str
    model_id: str
    values: Grid


class Dataset(_Frozen):
    frames: list[ImageFrame]
    trains: list[FixationTrain]
    maps: dict[tuple[str, str], SaliencyMap] = Field(
        default_factory=dict, description="Keyed by (model_id, image_id)"
    )

    def frame(self, image_id: str) -> ImageFrame:
        for f in self.frames:
            if f.image_id == image_id:
                return f
        raise KeyError(image_id)

    def image_ids(self) -> list[str]:
        return [f.image_id for f in self.frames]

    def subjects(self) -> list[str]:
        return sorted({t.subject_id for t in self.trains})

    def model_ids(self) -> list[str]:
        return sorted({model_id for model_id, _ in self.maps})

    def trains_for_image(self, image_id: str) -> list[FixationTrain]:
        return [t for t in self.trains if t.image_id == image_id]

    def maps_for_model(self, model_id: str) -> dict[str, SaliencyMap]:
        return {
            image_id: m
            for (mid, image_id), m in self.maps.items()
            if mid == model_id
        }

    def fixation_count(self) -> int:
        return sum(len(t) for t in self.trains)


# --- density ---


class DensityGrid(_Frozen):
    """Probability mass per pixel of one image."""

    image_id: str
    pmf: Grid

    @field_validator("pmf")
    @classmethod
    def check_pmf(cls, v: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(v)):
            raise ValueError("pmf has non-finite entries")
        if np.any(v < 0):
            raise ValueError("pmf has negative entries")
        total = float(v.sum())
        if abs(total - 1.0) > PMF_SUM_TOLERANCE:
            raise ValueError(f"pmf sums to {total!r}, not 1")
        return v

    @property
    def shape(self) -> tuple[int, int]:
        return self.pmf.shape  # type: ignore[return-value]

    @property
    def frame(self) -> ImageFrame:
        height, width = self.pmf.shape
        return ImageFrame(image_id=self.image_id, width=width, height=height)


class KdeSpec(_Frozen):
    kernel_sigma: float = Field(gt=0.0)
    boundary: Literal["truncate-renormalize"] = "truncate-renormalize"


# --- baselines ---


class HistogramBaseline(_Frozen):
    """Cross-image 2-D histogram; bin counts are kept per image so the
    leave-one-image-out density of any image can be rebuilt."""

    bins_x: int = Field(ge=1)
    bins_y: int = Field(ge=1)
    lam: float = Field(ge=0.0, le=1.0)
    counts: dict[str, Grid] = Field(default_factory=dict)
    heldout_ll: float | None = None
    candidates: list[tuple[int, int, float, float]] = Field(
        default_factory=list, description="(bins_x, bins_y, lambda, held-out LL)"
    )


class GoldStandard(_Frozen):
    kernel_sigma: float = Field(gt=0.0)
    folds: int = Field(ge=2)
    seed: int = 0
    loso: dict[tuple[str, str], DensityGrid] = Field(
        default_factory=dict, description="Keyed by (image_id, held-out subject)"
    )
    full: dict[str, DensityGrid] = Field(
        default_factory=dict, description="All-subjects KDE per image"
    )
    cv_scores: list[tuple[float, float]] = Field(
        default_factory=list, description="(sigma, held-out LL) per grid point"
    )

    def loso_density(self, image_id: str, subject_id: str) -> DensityGrid:
        try:
            return self.loso[(image_id, subject_id)]
        except KeyError:
            raise MissingGridError(
                "gold standard has no grid for image and subject",
                image_id=image_id,
                subject_id=subject_id,
            ) from None

    def full_density(self, image_id: str) -> DensityGrid:
        try:
            return self.full[image_id]
        except KeyError:
            raise MissingGridError(
                "gold standard has no grid for image", image_id=image_id
            ) from None


# --- calibration ---


class Stage(str, Enum):
    NONLIN = "nonlin"
    CENTERBIAS = "nonlin+cb"
    BLUR = "nonlin+cb+blur"

    @property
    def has_centerbias(self) -> bool:
        return self is not Stage.NONLIN

    @property
    def has_blur(self) -> bool:
        return self is Stage.BLUR


class PiecewiseLinear(_Frozen):
    """Continuous piecewise-linear function on equidistant knots."""

    values: tuple[float, ...] = Field(min_length=2)
    support: tuple[float, float] = (0.0, 1.0)

    @field_validator("support")
    @classmethod
    def check_support(cls, v: tuple[float, float]) -> tuple[float, float]:
        if not v[1] > v[0]:
            raise ValueError("support must be an increasing interval")
        return v

    @property
    def n_knots(self) -> int:
        return len(self.values)

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(self.support[0], self.support[1], self.n_knots)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))


class CenterBias(_Frozen):
    profile: PiecewiseLinear
    alpha: float = Field(gt=0.0)

    @field_validator("profile")
    @classmethod
    def check_positive(cls, v: PiecewiseLinear) -> PiecewiseLinear:
        if min(v.values) <= 0:
            raise ValueError("centre-bias profile must stay above zero")
        return v


class CalibrationParams(_Frozen):
    stage: Stage
    nonlinearity: PiecewiseLinear
    center_bias: CenterBias | None = None
    blur_sigma: float | None = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def check_stage_fields(self) -> "CalibrationParams":
        if not self.nonlinearity.is_monotone():
            raise ValueError("nonlinearity must be nondecreasing")
        if min(self.nonlinearity.values) <= 0:
            raise ValueError("nonlinearity must stay above zero")
        if self.stage.has_centerbias != (self.center_bias is not None):
            raise ValueError(f"centre bias presence does not match stage {self.stage.value}")
        if self.stage.has_blur != (self.blur_sigma is not None):
            raise ValueError(f"blur presence does not match stage {self.stage.value}")
        return self

    def to_json(self) -> dict[str, Any]:
        cb = self.center_bias
        return {
            "stage": self.stage.value,
            "nonlin_y": list(self.nonlinearity.values),
            "cb_y": list(cb.profile.values) if cb else None,
            "alpha": cb.alpha if cb else None,
            "sigma": self.blur_sigma,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "CalibrationParams":
        cb = None
        if data.get("cb_y") is not None:
            cb = CenterBias(
                profile=PiecewiseLinear(values=tuple(data["cb_y"])),
                alpha=data["alpha"],
            )
        return cls(
            stage=Stage(data["stage"]),
            nonlinearity=PiecewiseLinear(values=tuple(data["nonlin_y"])),
            center_bias=cb,
            blur_sigma=data.get("sigma"),
        )


class OptimizerConfig(BaseModel):
    max_iter: int = Field(default=500, ge=1)
    ftol: float = Field(default=1e-7, gt=0.0)
    seed: int = 0
    y_floor: float = Field(default=1e-6, gt=0.0)
    init_sigma: float = Field(default=1.0, ge=0.0)
    n_nonlin_knots: int = Field(default=20, ge=2)
    n_cb_knots: int = Field(default=12, ge=2)


# --- temporal ---


class TemporalParams(_Frozen):
    delta: float = Field(lt=1.0, description="Negative values are excitatory")
    sigma_t: float = Field(gt=0.0)
    alpha_t: float = Field(gt=0.0)


# --- metrics ---


class NonfixationSpec(_Frozen):
    kind: Literal["uniform-pixels", "shuffled-fixations"] = "uniform-pixels"
    exhaustive: bool = True
    n_samples: int = Field(default=10000, ge=1)
    seed: int = 0


class KlSpec(_Frozen):
    variant: Literal["fixation-based", "image-based"] = "fixation-based"
    bins: int = Field(default=10, ge=2)
    epsilon: float = Field(default=1e-9, gt=0.0)


# --- maps ---


class InfoGainMap(_Frozen):
    image_id: str
    kind: Literal["info_gain", "diff", "possible_gain"] = "info_gain"
    grid: Grid

    @property
    def total(self) -> float:
        return float(self.grid.sum())


class ScatterPoint(BaseModel):
    image_id: str
    possible_gain: float
    explained: float | None
    flags: list[str] = Field(default_factory=list)


# --- reporting ---


class MetricValue(BaseModel):
    raw: float
    rescaled: float | None = None


class Anchors(BaseModel):
    baseline_ll: float
    gold_ll: float
    gold_estimator: Literal["loso", "in_sample"] = "loso"

    @property
    def possible_gain(self) -> float:
        return self.gold_ll - self.baseline_ll


class ModelReport(BaseModel):
    model_id: str
    stage_lls: dict[str, float]
    contributions: dict[str, float]
    final_ll: float
    percent_explained: float
    percent_of_total: float
    metrics: dict[str, MetricValue] = Field(default_factory=dict)


class EvaluationReport(BaseModel):
    anchors: Anchors
    possible_gain: float
    models: list[ModelReport] = Field(default_factory=list)
    metadata: dict[str, Any] = Field(default_factory=dict)


# --- configuration ---


def _default_sigma_grid() -> list[float]:
    return [float(s) for s in np.geomspace(1.0, 128.0, 21)]


class DatasetPaths(BaseModel):
    frames: Path
    fixations: Path


class HistogramGrid(BaseModel):
    bins: list[int] = Field(default_factory=lambda: [4, 8, 16, 32])
    lambdas: list[float] = Field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1])


class GoldGrid(BaseModel):
    sigmas: list[float] = Field(default_factory=_default_sigma_grid)
    folds: int = Field(default=10, ge=2)


class MetricsConfig(BaseModel):
    auc_uniform: NonfixationSpec = Field(default_factory=NonfixationSpec)
    auc_shuffled: NonfixationSpec = Field(
        default_factory=lambda: NonfixationSpec(kind="shuffled-fixations")
    )
    kl: KlSpec = Field(default_factory=KlSpec)
    map_epsilon: float = Field(
        default=1e-12,
        gt=0.0,
        description="Added to raw maps before they are read as distributions",
    )


class RunConfig(BaseModel):
    dataset: DatasetPaths
    models: dict[str, Path] = Field(
        default_factory=dict, description="model_id -> directory of <image_id>.smap"
    )
    output_dir: Path = Path("infogain_out")
    seed: int = 0
    jobs: int = Field(default=1, ge=1)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    histogram: HistogramGrid = Field(default_factory=HistogramGrid)
    gold: GoldGrid = Field(default_factory=GoldGrid)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)


class SynthConfig(BaseModel):
    """Parameters of the `synth` command."""

    output_dir: Path = Path("synthetic")
    n_images: int = Field(default=4, ge=1)
    width: int = Field(default=64, ge=2)
    height: int = Field(default=64, ge=2)
    n_subjects: int = Field(default=8, ge=1)
    fixations_per_subject: int = Field(default=20, ge=1)
    seed: int = 0
    center_ratio: float = Field(
        default=3.0, ge=1.0, description="Centre:edge density ratio of the prior"
    )
    n_blobs: int = Field(default=3, ge=0)
    temporal: TemporalParams | None = None
