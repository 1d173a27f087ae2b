"""
Conversion of raw saliency maps into fixation densities.

A map is globally rescaled to [0, 1], optionally blurred, passed through a
monotone piecewise-linear nonlinearity, multiplied by a radial centre-bias
profile and normalized per image. The parameters of all factors are fitted
jointly by maximizing the log-likelihood of the fixations with L-BFGS-B.

Optimizer parameter vector, in order:

* nonlinearity increments ``c`` (``y_0 = floor + c_0``, ``y_i = y_{i-1} + c_i``,
  ``c >= 0``), which keeps the values monotone and above the floor;
* centre-bias values (``>= floor``) and ``log(alpha)``, when the stage has them;
* blur sigma in pixels (``0 <= sigma <= max(W, H)``), when the stage has it.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from typing import overload

import numpy as np
from scipy.optimize import minimize

from infogain.density import (
    fixation_histogram,
    gaussian_blur,
    gaussian_blur_dsigma,
    normalize_to_pmf,
)
from infogain.errors import (
    ConstantModelError,
    EmptyListError,
    EmptyPointsError,
    ImageMismatchError,
    NonFiniteError,
    OutOfSupportError,
)
from infogain.models import (
    CalibrationParams,
    CenterBias,
    DensityGrid,
    FixationTrain,
    ImageFrame,
    OptimizerConfig,
    PiecewiseLinear,
    SaliencyMap,
    Stage,
)

logger = logging.getLogger("infogain.calibration")

SUPPORT_TOLERANCE = 1e-9


@overload
def global_rescale(maps: Mapping[str, SaliencyMap]) -> dict[str, SaliencyMap]: ...


@overload
def global_rescale(maps: Sequence[SaliencyMap]) -> list[SaliencyMap]: ...


def global_rescale(maps):
    """Affine rescale of all maps of one model to [0, 1] with one global min/max."""
    items = list(maps.values()) if isinstance(maps, Mapping) else list(maps)
    if not items:
        raise EmptyListError("no maps to rescale")
    for m in items:
        if not np.all(np.isfinite(m.values)):
            raise NonFiniteError(
                "map has non-finite values", model_id=m.model_id, image_id=m.image_id
            )
    lo = min(float(m.values.min()) for m in items)
    hi = max(float(m.values.max()) for m in items)
    if hi <= lo:
        raise ConstantModelError(
            "model output is constant over all images",
            model_id=items[0].model_id,
            value=lo,
        )
    logger.debug(f"Rescaling {len(items)} map(s) of {items[0].model_id} from [{lo}, {hi}]")
    scaled = [
        SaliencyMap(
            image_id=m.image_id, model_id=m.model_id, values=(m.values - lo) / (hi - lo)
        )
        for m in items
    ]
    if isinstance(maps, Mapping):
        return dict(zip(maps.keys(), scaled))
    return scaled


def _check_support(values: np.ndarray, support: tuple[float, float], what: str) -> np.ndarray:
    lo, hi = support
    if values.size and (
        values.min() < lo - SUPPORT_TOLERANCE or values.max() > hi + SUPPORT_TOLERANCE
    ):
        raise OutOfSupportError(
            f"{what} outside [{lo}, {hi}]",
            minimum=float(values.min()),
            maximum=float(values.max()),
        )
    return np.clip(values, lo, hi)


def apply_nonlinearity(map01: np.ndarray, f: PiecewiseLinear) -> np.ndarray:
    values = _check_support(np.asarray(map01, dtype=np.float64), f.support, "saliency values")
    return np.interp(values, f.knots, np.asarray(f.values))


def _centre_offsets(frame: ImageFrame) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Squared pixel offsets from the frame centre and their maxima."""
    xc = (frame.width - 1) / 2.0
    yc = (frame.height - 1) / 2.0
    dx2 = ((np.arange(frame.width) - xc) ** 2)[None, :]
    dy2 = ((np.arange(frame.height) - yc) ** 2)[:, None]
    dx2, dy2 = np.broadcast_arrays(dx2, dy2)
    return dx2, dy2, xc**2, yc**2


def eccentricity(frame: ImageFrame, alpha: float) -> np.ndarray:
    """Normalized distance to the frame centre, in [0, 1]."""
    dx2, dy2, dx2_max, dy2_max = _centre_offsets(frame)
    return np.sqrt(dx2 + alpha * dy2) / math.sqrt(dx2_max + alpha * dy2_max)


def center_bias_weight(frame: ImageFrame, cb: CenterBias) -> np.ndarray:
    d = np.clip(eccentricity(frame, cb.alpha), 0.0, 1.0)
    return np.interp(d, cb.profile.knots, np.asarray(cb.profile.values))


def _frame_of(smap: SaliencyMap) -> ImageFrame:
    height, width = smap.values.shape
    return ImageFrame(image_id=smap.image_id, width=width, height=height)


def build_model_density(
    smap: SaliencyMap, params: CalibrationParams, frame: ImageFrame
) -> DensityGrid:
    """Blur, nonlinearity, centre bias and per-image normalization, in that order."""
    if smap.values.shape != frame.shape:
        raise ImageMismatchError(
            "map does not match frame dimensions",
            image_id=frame.image_id,
            map_shape=list(smap.values.shape),
            frame_shape=list(frame.shape),
        )
    s = smap.values
    if params.stage.has_blur and params.blur_sigma:
        s = np.clip(gaussian_blur(s, params.blur_sigma), 0.0, 1.0)
    out = apply_nonlinearity(s, params.nonlinearity)
    if params.center_bias is not None:
        out = out * center_bias_weight(frame, params.center_bias)
    return normalize_to_pmf(out, image_id=frame.image_id)


# --- optimization ---


def _hat_index(x: np.ndarray, n_knots: int) -> tuple[np.ndarray, np.ndarray]:
    """Left knot index and fractional position of x in [0, 1] on equidistant knots."""
    t = x * (n_knots - 1)
    idx = np.clip(np.floor(t).astype(np.intp), 0, n_knots - 2)
    return idx, t - idx


def _hat_eval(y: np.ndarray, idx: np.ndarray, frac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and slopes of the piecewise-linear function with knot values y."""
    left = y[idx]
    right = y[idx + 1]
    return left + (right - left) * frac, (right - left) * (len(y) - 1)


def _hat_grad(weights: np.ndarray, idx: np.ndarray, frac: np.ndarray, n_knots: int) -> np.ndarray:
    w = weights.ravel()
    i = idx.ravel()
    f = frac.ravel()
    return np.bincount(i, w * (1.0 - f), minlength=n_knots) + np.bincount(
        i + 1, w * f, minlength=n_knots
    )


class _ImageTerm:
    def __init__(self, smap: SaliencyMap, trains: Sequence[FixationTrain]):
        self.frame = _frame_of(smap)
        self.s0 = _check_support(smap.values, (0.0, 1.0), "rescaled map")
        self.counts = fixation_histogram(self.frame, trains)
        self.n = float(self.counts.sum())
        self.dx2, self.dy2, self.dx2_max, self.dy2_max = _centre_offsets(self.frame)


class CalibrationProblem:
    """Log-likelihood of a stage's parameters and its analytic gradient."""

    def __init__(
        self,
        model_maps: Mapping[str, SaliencyMap],
        trains: Sequence[FixationTrain],
        stage: Stage,
        config: OptimizerConfig | None = None,
    ):
        self.stage = Stage(stage)
        self.config = config or OptimizerConfig()
        by_image: dict[str, list[FixationTrain]] = {}
        for train in trains:
            if train.image_id not in model_maps:
                raise ImageMismatchError("no map for image", image_id=train.image_id)
            by_image.setdefault(train.image_id, []).append(train)

        self.images = [
            _ImageTerm(model_maps[image_id], by_image[image_id])
            for image_id in sorted(by_image)
        ]
        self.images = [img for img in self.images if img.n > 0]
        self.n_total = sum(img.n for img in self.images)
        if self.n_total == 0:
            raise EmptyPointsError("calibration needs at least one fixation")
        self.uniform_bits = sum(
            img.n * math.log2(img.frame.n_pixels) for img in self.images
        )

        self.n_nl = self.config.n_nonlin_knots
        self.n_cb = self.config.n_cb_knots if self.stage.has_centerbias else 0
        self.size = self.n_nl + (self.n_cb + 1 if self.stage.has_centerbias else 0)
        self.size += 1 if self.stage.has_blur else 0
        self.max_sigma = float(max(max(img.frame.shape) for img in self.images))

    # parameter vector

    def bounds(self) -> list[tuple[float | None, float | None]]:
        floor = self.config.y_floor
        out: list[tuple[float | None, float | None]] = [(0.0, None)] * self.n_nl
        if self.stage.has_centerbias:
            out += [(floor, None)] * self.n_cb + [(None, None)]
        if self.stage.has_blur:
            out.append((0.0, self.max_sigma))
        return out

    def initial_params(self, init: CalibrationParams | None = None) -> CalibrationParams:
        """Neutral parameters for this stage; factors present in `init` are kept."""
        cfg = self.config
        if init is not None and init.nonlinearity.n_knots == self.n_nl:
            nonlin = init.nonlinearity
        else:
            nonlin = PiecewiseLinear(
                values=tuple(np.linspace(0.0, 1.0, self.n_nl) + cfg.y_floor)
            )
        cb = None
        if self.stage.has_centerbias:
            if init is not None and init.center_bias is not None:
                cb = init.center_bias
            else:
                cb = CenterBias(profile=PiecewiseLinear(values=(1.0,) * self.n_cb), alpha=1.0)
        sigma = None
        if self.stage.has_blur:
            sigma = init.blur_sigma if init is not None and init.blur_sigma else cfg.init_sigma
        return CalibrationParams(
            stage=self.stage, nonlinearity=nonlin, center_bias=cb, blur_sigma=sigma
        )

    def pack(self, params: CalibrationParams) -> np.ndarray:
        y = np.asarray(params.nonlinearity.values, dtype=np.float64)
        c = np.concatenate([[y[0] - self.config.y_floor], np.diff(y)])
        parts = [np.maximum(c, 0.0)]
        if self.stage.has_centerbias:
            cb = params.center_bias
            assert cb is not None
            parts.append(np.maximum(np.asarray(cb.profile.values), self.config.y_floor))
            parts.append(np.array([math.log(cb.alpha)]))
        if self.stage.has_blur:
            parts.append(np.array([params.blur_sigma or 0.0]))
        return np.concatenate(parts)

    def _split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray | None, float, float]:
        c = np.maximum(theta[: self.n_nl], 0.0)
        y_nl = self.config.y_floor + np.cumsum(c)
        pos = self.n_nl
        y_cb = None
        alpha = 1.0
        if self.stage.has_centerbias:
            y_cb = np.maximum(theta[pos : pos + self.n_cb], self.config.y_floor)
            alpha = math.exp(theta[pos + self.n_cb])
            pos += self.n_cb + 1
        sigma = float(max(theta[pos], 0.0)) if self.stage.has_blur else 0.0
        return y_nl, y_cb, alpha, sigma

    def unpack(self, theta: np.ndarray) -> CalibrationParams:
        y_nl, y_cb, alpha, sigma = self._split(theta)
        cb = None
        if y_cb is not None:
            cb = CenterBias(profile=PiecewiseLinear(values=tuple(y_cb)), alpha=alpha)
        return CalibrationParams(
            stage=self.stage,
            nonlinearity=PiecewiseLinear(values=tuple(y_nl)),
            center_bias=cb,
            blur_sigma=sigma if self.stage.has_blur else None,
        )

    # objective

    def objective_and_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Bits/fixation relative to uniform, and its gradient with respect to theta."""
        y_nl, y_cb, alpha, sigma = self._split(np.asarray(theta, dtype=np.float64))
        g_ynl = np.zeros(self.n_nl)
        g_ycb = np.zeros(self.n_cb)
        g_logalpha = 0.0
        g_sigma = 0.0
        total = 0.0

        for img in self.images:
            if sigma > 0:
                blurred = gaussian_blur(img.s0, sigma)
                inside = (blurred >= 0.0) & (blurred <= 1.0)
                s = np.clip(blurred, 0.0, 1.0)
            else:
                s = img.s0
            idx, frac = _hat_index(s, self.n_nl)
            w, w_slope = _hat_eval(y_nl, idx, frac)

            if y_cb is not None:
                r = np.sqrt(img.dx2 + alpha * img.dy2)
                r_max = math.sqrt(img.dx2_max + alpha * img.dy2_max)
                d = np.clip(r / r_max, 0.0, 1.0)
                jdx, jfrac = _hat_index(d, self.n_cb)
                v, v_slope = _hat_eval(y_cb, jdx, jfrac)
            else:
                v = np.ones_like(w)

            u = w * v
            u_sum = u.sum()
            mask = img.counts > 0
            total += float((img.counts[mask] * np.log(u[mask])).sum() - img.n * math.log(u_sum))

            # d(loglik)/du per pixel
            resid = np.where(mask, img.counts / u, 0.0) - img.n / u_sum
            g_ynl += _hat_grad(resid * v, idx, frac, self.n_nl)
            if y_cb is not None:
                g_ycb += _hat_grad(resid * w, jdx, jfrac, self.n_cb)
                dr = np.divide(img.dy2, 2.0 * r, out=np.zeros_like(r), where=r > 0)
                dr_max = img.dy2_max / (2.0 * r_max)
                dd_dalpha = dr / r_max - r * dr_max / r_max**2
                g_logalpha += float((resid * w * v_slope * dd_dalpha).sum()) * alpha
            if sigma > 0:
                db = gaussian_blur_dsigma(img.s0, sigma)
                g_sigma += float((resid * v * w_slope * inside * db).sum())

        scale = 1.0 / (math.log(2.0) * self.n_total)
        ll = total * scale + self.uniform_bits / self.n_total

        # y_i = floor + sum_{k<=i} c_k
        grad = [np.cumsum(g_ynl[::-1])[::-1]]
        if self.stage.has_centerbias:
            grad += [g_ycb, np.array([g_logalpha])]
        if self.stage.has_blur:
            grad.append(np.array([g_sigma]))
        gradient = np.concatenate(grad) * scale

        if not math.isfinite(ll) or not np.all(np.isfinite(gradient)):
            raise NonFiniteError(
                "calibration objective is not finite", stage=self.stage.value, ll=ll
            )
        return ll, gradient

    def log_likelihood(self, theta: np.ndarray) -> float:
        return self.objective_and_gradient(theta)[0]


def optimize_calibration(
    model_maps: Mapping[str, SaliencyMap],
    trains: Sequence[FixationTrain],
    stage: Stage,
    config: OptimizerConfig | None = None,
    init: CalibrationParams | None = None,
) -> tuple[CalibrationParams, float]:
    """
    Fits one stage's parameters by maximum likelihood. `model_maps` maps
    image id to an already rescaled map. Returns the parameters and the
    achieved bits/fixation, which is never below that of the starting point.
    """
    problem = CalibrationProblem(model_maps, trains, stage, config)
    cfg = problem.config
    start = problem.pack(problem.initial_params(init))
    candidates = [(problem.log_likelihood(start), start)]
    if problem.stage.has_blur:
        # sigma = 0 reproduces the unblurred optimum exactly
        unblurred = start.copy()
        unblurred[-1] = 0.0
        candidates.append((problem.log_likelihood(unblurred), unblurred))

    logger.info(
        f"Calibrating stage {problem.stage.value} on {len(problem.images)} image(s), "
        f"{int(problem.n_total)} fixation(s); start {candidates[0][0]:.4f} bits/fix"
    )

    def negative(theta: np.ndarray) -> tuple[float, np.ndarray]:
        ll, grad = problem.objective_and_gradient(theta)
        return -ll, -grad

    result = minimize(
        negative,
        start,
        jac=True,
        method="L-BFGS-B",
        bounds=problem.bounds(),
        options={"maxiter": cfg.max_iter, "ftol": cfg.ftol},
    )
    best_ll, best_theta = -float(result.fun), np.asarray(result.x)
    for ll, theta in candidates:
        if ll > best_ll:
            best_ll, best_theta = ll, theta
    logger.info(
        f"Stage {problem.stage.value}: {best_ll:.4f} bits/fix after {result.nit} iteration(s)"
    )
    logger.debug(f"Optimizer message: {result.message}")
    return problem.unpack(best_theta), best_ll


def run_stages(
    model_maps: Mapping[str, SaliencyMap],
    trains: Sequence[FixationTrain],
    config: OptimizerConfig | None = None,
    stages: Sequence[Stage] = (Stage.NONLIN, Stage.CENTERBIAS, Stage.BLUR),
) -> dict[Stage, tuple[CalibrationParams, float]]:
    """Runs the given stages in order, each warm-started from the previous optimum."""
    out: dict[Stage, tuple[CalibrationParams, float]] = {}
    previous: CalibrationParams | None = None
    for stage in stages:
        params, ll = optimize_calibration(model_maps, trains, stage, config, init=previous)
        out[stage] = (params, ll)
        previous = params
    return out


def contributions_from_stages(
    results: Mapping[Stage, tuple[CalibrationParams, float]],
) -> tuple[float, float, float]:
    ll_nonlin = results[Stage.NONLIN][1]
    ll_cb = results[Stage.CENTERBIAS][1]
    ll_blur = results[Stage.BLUR][1]
    return ll_nonlin, ll_cb - ll_nonlin, ll_blur - ll_cb


def contribution_breakdown(
    model_maps: Mapping[str, SaliencyMap],
    trains: Sequence[FixationTrain],
    config: OptimizerConfig | None = None,
) -> tuple[float, float, float]:
    """(LL of the nonlinearity stage, gain from centre bias, gain from blur)."""
    return contributions_from_stages(run_stages(model_maps, trains, config))
