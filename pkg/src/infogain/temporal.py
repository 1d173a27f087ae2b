"""
Self-excitation around the previous fixation.

The spatial density of fixation i is reweighted by
``1 - delta * exp(-(dx**2 + alpha_t * dy**2) / (2 * sigma_t**2))`` with
(dx, dy) the offset from fixation i-1, then renormalized. Negative delta
raises the density near the previous fixation, positive delta lowers it.
"""

import logging
import math
from collections.abc import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from infogain.density import log_likelihood_bits_per_image, snap_train
from infogain.errors import (
    EmptyPointsError,
    ImageMismatchError,
    NonFiniteError,
    ZeroDensityAtFixationError,
)
from infogain.models import DensityGrid, Fixation, FixationTrain, OptimizerConfig, TemporalParams

logger = logging.getLogger("infogain.temporal")

CHUNK = 4096


def temporal_factor(
    dx: np.ndarray | float, dy: np.ndarray | float, p: TemporalParams
) -> np.ndarray | float:
    """1 + f(offset); always positive since delta < 1."""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    out = 1.0 - p.delta * np.exp(-0.5 * (dx**2 + p.alpha_t * dy**2) / p.sigma_t**2)
    return float(out) if out.ndim == 0 else out


def conditional_density(base: DensityGrid, prev: Fixation, p: TemporalParams) -> DensityGrid:
    """Density of the next fixation given the previous one."""
    if p.delta == 0:
        return base
    height, width = base.shape
    dx = (np.arange(width) - prev.x)[None, :]
    dy = (np.arange(height) - prev.y)[:, None]
    weighted = temporal_factor(dx, dy, p) * base.pmf
    return DensityGrid(image_id=base.image_id, pmf=weighted / weighted.sum())


class _Transitions:
    """Consecutive fixation pairs on one image."""

    def __init__(self, base: DensityGrid, trains: Sequence[FixationTrain]):
        frame = base.frame
        self.pmf = base.pmf
        self.mass = float(base.pmf.sum())
        self.cols_px = np.arange(frame.width, dtype=np.float64)
        self.rows_px = np.arange(frame.height, dtype=np.float64)

        cols, rows, prev_x, prev_y = [], [], [], []
        self.log_base = 0.0
        self.n = 0
        for train in trains:
            if not train.fixations:
                continue
            c, r = snap_train(frame, train)
            p = base.pmf[r, c]
            bad = np.flatnonzero(p <= 0)
            if bad.size:
                raise ZeroDensityAtFixationError(
                    "base density is zero at a fixation",
                    image_id=train.image_id,
                    subject_id=train.subject_id,
                    fixation=int(bad[0]),
                )
            self.log_base += float(np.log(p).sum())
            self.n += len(p)
            xy = train.coordinates()
            cols.append(c[1:])
            rows.append(r[1:])
            prev_x.append(xy[:-1, 0])
            prev_y.append(xy[:-1, 1])
        self.log_uniform = self.n * math.log2(frame.n_pixels)
        self.cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.intp)
        self.rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
        self.prev_x = np.concatenate(prev_x) if prev_x else np.empty(0)
        self.prev_y = np.concatenate(prev_y) if prev_y else np.empty(0)

    def accumulate(
        self, delta: float, sigma: float, alpha: float
    ) -> tuple[float, np.ndarray]:
        """Sum over transitions of log(1 - delta*g) - log(Z), and its gradient
        with respect to (delta, log sigma, log alpha)."""
        total = 0.0
        grad = np.zeros(3)
        inv2s2 = 0.5 / sigma**2
        for start in range(0, len(self.cols), CHUNK):
            sl = slice(start, start + CHUNK)
            qx = (self.cols_px[None, :] - self.prev_x[sl, None]) ** 2
            qy = (self.rows_px[None, :] - self.prev_y[sl, None]) ** 2
            gx = np.exp(-inv2s2 * qx)
            gy = np.exp(-inv2s2 * alpha * qy)

            a = gy @ self.pmf
            s = (a * gx).sum(axis=1)
            sx2 = (a * gx * qx).sum(axis=1)
            sy2 = (((gy * qy) @ self.pmf) * gx).sum(axis=1)

            m = np.arange(len(s))
            cx = self.cols[sl]
            ry = self.rows[sl]
            g = gx[m, cx] * gy[m, ry]
            gq = qx[m, cx] + alpha * qy[m, ry]
            gqy = qy[m, ry]

            num = 1.0 - delta * g
            z = self.mass - delta * s
            total += float(np.log(num).sum() - np.log(z).sum())

            grad[0] += float((-g / num + s / z).sum())
            dg_dlogsigma = g * gq / sigma**2
            ds_dlogsigma = (sx2 + alpha * sy2) / sigma**2
            grad[1] += float((-delta * dg_dlogsigma / num + delta * ds_dlogsigma / z).sum())
            dg_dlogalpha = -0.5 * alpha * g * gqy / sigma**2
            ds_dlogalpha = -0.5 * alpha * sy2 / sigma**2
            grad[2] += float((-delta * dg_dlogalpha / num + delta * ds_dlogalpha / z).sum())
        return total, grad


class TemporalProblem:
    def __init__(self, bases: Mapping[str, DensityGrid], trains: Sequence[FixationTrain]):
        by_image: dict[str, list[FixationTrain]] = {}
        for train in trains:
            if train.image_id not in bases:
                raise ImageMismatchError("no base density for image", image_id=train.image_id)
            by_image.setdefault(train.image_id, []).append(train)
        self.images = [_Transitions(bases[i], by_image[i]) for i in sorted(by_image)]
        self.n_total = sum(t.n for t in self.images)
        if self.n_total == 0:
            raise EmptyPointsError("no fixations to evaluate")
        self.max_dim = max(max(bases[i].shape) for i in by_image)

    @staticmethod
    def unpack(theta: np.ndarray) -> tuple[float, float, float]:
        eta, log_sigma, log_alpha = theta
        return 1.0 - math.exp(eta), math.exp(log_sigma), math.exp(log_alpha)

    @staticmethod
    def pack(p: TemporalParams) -> np.ndarray:
        return np.array([math.log(1.0 - p.delta), math.log(p.sigma_t), math.log(p.alpha_t)])

    def objective_and_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Bits/fixation and gradient with respect to (eta, log sigma_t, log alpha_t)."""
        delta, sigma, alpha = self.unpack(theta)
        total = 0.0
        grad = np.zeros(3)
        uniform = 0.0
        for image in self.images:
            t, g = image.accumulate(delta, sigma, alpha)
            total += image.log_base + t
            grad += g
            uniform += image.log_uniform
        # d(delta)/d(eta) = -(1 - delta)
        grad[0] *= -(1.0 - delta)
        scale = 1.0 / (math.log(2.0) * self.n_total)
        ll = total * scale + uniform / self.n_total
        grad = grad * scale
        if not math.isfinite(ll) or not np.all(np.isfinite(grad)):
            raise NonFiniteError(
                "temporal objective is not finite", delta=delta, sigma_t=sigma, alpha_t=alpha
            )
        return ll, grad


def temporal_log_likelihood(
    bases: Mapping[str, DensityGrid], trains: Sequence[FixationTrain], p: TemporalParams
) -> float:
    """
    Bits/fixation relative to uniform: the first fixation of every train is
    scored under the base density, later ones under the density conditioned
    on the preceding fixation.
    """
    if p.delta == 0:
        return log_likelihood_bits_per_image(bases, trains)[0]
    problem = TemporalProblem(bases, trains)
    return problem.objective_and_gradient(problem.pack(p))[0]


def fit_temporal(
    bases: Mapping[str, DensityGrid],
    trains: Sequence[FixationTrain],
    config: OptimizerConfig | None = None,
    init: TemporalParams | None = None,
) -> tuple[TemporalParams, float]:
    """
    Maximum-likelihood (delta, sigma_t, alpha_t) on top of fixed spatial
    densities. Never returns a worse fit than delta = 0.
    """
    cfg = config or OptimizerConfig()
    problem = TemporalProblem(bases, trains)
    neutral = TemporalParams(delta=0.0, sigma_t=0.1 * problem.max_dim, alpha_t=1.0)
    start = problem.pack(init or neutral)
    neutral_ll = problem.objective_and_gradient(problem.pack(neutral))[0]
    logger.info(
        f"Fitting temporal factor on {problem.n_total} fixation(s); "
        f"spatial {neutral_ll:.4f} bits/fix"
    )

    def negative(theta: np.ndarray) -> tuple[float, np.ndarray]:
        ll, grad = problem.objective_and_gradient(theta)
        return -ll, -grad

    bounds = [
        (-5.0, 5.0),
        (math.log(0.1), math.log(4.0 * problem.max_dim)),
        (math.log(1e-3), math.log(1e3)),
    ]
    result = minimize(
        negative,
        np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds]),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": cfg.max_iter, "ftol": cfg.ftol},
    )
    ll = -float(result.fun)
    if ll < neutral_ll:
        logger.info("Temporal factor does not improve on the spatial density")
        return neutral, neutral_ll
    delta, sigma, alpha = problem.unpack(result.x)
    params = TemporalParams(delta=delta, sigma_t=sigma, alpha_t=alpha)
    logger.info(
        f"Temporal fit: delta={delta:.4f}, sigma_t={sigma:.2f}, alpha_t={alpha:.3f}, "
        f"{ll:.4f} bits/fix ({ll - neutral_ll:+.4f} over spatial)"
    )
    return params, ll
