"""Exactly computable toy denoisers.

Both denoisers answer the same question a trained network would: given a
noisy latent x_t at sampling step s, predict the noise that was mixed in.
They do it by Bayes-optimal inference under a known prior over clean
latents, so every prediction has a closed form the tests can check against.

Prediction always goes through the clean-signal estimate:

    eps_hat = (x_t - sqrt(ab) * x0_hat) / sqrt(1 - ab)

where x0_hat is the posterior mean of the clean latent and ab the step's
retained-signal fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DenoiserError, ShapeError
from .latent import LatentGrid, resize_bilinear
from .schedule import SamplerTimeline

__all__ = [
    "Condition",
    "UNCONDITIONAL",
    "Denoiser",
    "GaussianPrior",
    "DatasetPrior",
    "dataset_posterior_mean",
    "cfg_combine",
]


@dataclass(frozen=True)
class Condition:
    """What the prediction is conditioned on: a class label, or nothing."""

    label: int | None = None

    @property
    def is_conditional(self) -> bool:
        return self.label is not None

    def __repr__(self) -> str:
        return "Condition(unconditional)" if self.label is None else f"Condition(label={self.label})"


UNCONDITIONAL = Condition()


class Denoiser:
    """Interface shared by the toy predictors.

    Subclasses provide ``channels`` and :meth:`predict_eps`; they resolve
    the step's noise level through the timeline they were built with.
    """

    channels: int

    def predict_eps(self, x_t: LatentGrid, step: int, condition: Condition) -> LatentGrid:
        raise NotImplementedError

    def prepare_resolution(self, height: int, width: int) -> None:
        """Warm any per-resolution state before a stage starts. No-op by default."""

    def _level_at(self, timeline: SamplerTimeline, step: int) -> float:
        if not 0 <= step < timeline.num_steps:
            raise DenoiserError(f"step {step} outside the timeline [0, {timeline.num_steps})")
        return float(timeline.alpha_bar_at_step[step])


def _eps_from_x0_hat(x_t: np.ndarray, x0_hat: np.ndarray, ab: float) -> np.ndarray:
    return (x_t - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)


class GaussianPrior(Denoiser):
    """Bayes-optimal predictor for clean latents drawn from N(mean, variance * I).

    The posterior mean of the clean latent given x_t has the closed form

        x0_hat = mean + (sqrt(ab) * variance / (ab * variance + 1 - ab))
                 * (x_t - sqrt(ab) * mean)

    which is affine in x_t; a whole run under this prior composes to one
    affine map, the basis of the trajectory oracle in the sampler module.

    The prior carries no class structure, so both guidance branches
    coincide and the condition argument has no effect on the output.

    When queried at a resolution other than the stored mean's, each
    channel's spatial mean value is broadcast to the queried shape.
    """

    def __init__(self, mean: LatentGrid, variance: float, timeline: SamplerTimeline):
        if not variance > 0:
            raise ValueError(f"variance must be positive, got {variance}")
        self.mean = mean
        self.variance = float(variance)
        self.timeline = timeline
        self.channels = mean.channels
        self._channel_means = mean.data.mean(axis=(1, 2))

    def mean_for_shape(self, height: int, width: int) -> np.ndarray:
        if (height, width) == (self.mean.height, self.mean.width):
            return self.mean.data
        return np.broadcast_to(
            self._channel_means[:, None, None], (self.channels, height, width)
        )

    def predict_eps(self, x_t: LatentGrid, step: int, condition: Condition) -> LatentGrid:
        if x_t.channels != self.channels:
            raise DenoiserError(f"expected {self.channels} channels, got {x_t.channels}")
        ab = self._level_at(self.timeline, step)
        mean = self.mean_for_shape(x_t.height, x_t.width)
        gain = np.sqrt(ab) * self.variance / (ab * self.variance + 1.0 - ab)
        x0_hat = mean + gain * (x_t.data - np.sqrt(ab) * mean)
        return LatentGrid(_eps_from_x0_hat(x_t.data, x0_hat, ab))


class DatasetPrior(Denoiser):
    """Bayes-optimal predictor for clean latents drawn uniformly from a point set.

    Points may carry class labels; a class condition restricts the
    posterior to that class's points, the unconditional branch uses all of
    them. Queries at a resolution other than the stored points' resample
    every point bilinearly to the queried shape; resampled stacks are cached
    per resolution and can be warmed eagerly via :meth:`prepare_resolution`.
    """

    def __init__(self, points: list[LatentGrid], labels: list[int], timeline: SamplerTimeline):
        if not points:
            raise ValueError("dataset prior needs at least one point")
        if len(labels) != len(points):
            raise ValueError(f"got {len(points)} points but {len(labels)} labels")
        shape = points[0].shape
        for i, p in enumerate(points):
            if p.shape != shape:
                raise ShapeError(f"point {i} has shape {p.shape}, expected {shape}")
        self.points = tuple(points)
        self.labels = tuple(int(l) for l in labels)
        self.timeline = timeline
        self.channels = shape[0]
        self._native_shape = (shape[1], shape[2])
        self._stacks: dict[tuple[int, int], np.ndarray] = {
            self._native_shape: np.stack([p.data for p in points])
        }

    def prepare_resolution(self, height: int, width: int) -> None:
        key = (height, width)
        if key not in self._stacks:
            self._stacks[key] = np.stack(
                [resize_bilinear(p, height, width).data for p in self.points]
            )

    def stack_for_shape(self, height: int, width: int) -> np.ndarray:
        self.prepare_resolution(height, width)
        return self._stacks[(height, width)]

    def predict_eps(self, x_t: LatentGrid, step: int, condition: Condition) -> LatentGrid:
        ab = self._level_at(self.timeline, step)
        x0_hat = dataset_posterior_mean(self, x_t, ab, condition)
        return LatentGrid(_eps_from_x0_hat(x_t.data, x0_hat.data, ab))


def dataset_posterior_mean(
    prior: DatasetPrior, x_t: LatentGrid, alpha_bar_t: float, condition: Condition
) -> LatentGrid:
    """Posterior mean of the clean latent under a uniform point-set prior.

    With points p_i at the query resolution, the weight of point i is
    proportional to exp(-||x_t - sqrt(ab) * p_i||^2 / (2 * (1 - ab))); the
    largest exponent is subtracted before exponentiation so the softmax
    stays finite at levels arbitrarily close to 1, where the posterior
    collapses onto the nearest point (ties sharing weight equally).
    """
    if not 0.0 < alpha_bar_t < 1.0:
        raise ValueError(f"alpha_bar_t must lie in (0, 1), got {alpha_bar_t}")
    if x_t.channels != prior.channels:
        raise DenoiserError(f"expected {prior.channels} channels, got {x_t.channels}")
    stack = prior.stack_for_shape(x_t.height, x_t.width)
    if condition.is_conditional:
        mask = np.array([lab == condition.label for lab in prior.labels])
        if not mask.any():
            raise DenoiserError(f"no points carry label {condition.label}")
        stack = stack[mask]
    diffs = x_t.data[None, ...] - np.sqrt(alpha_bar_t) * stack
    log_w = -np.sum(diffs * diffs, axis=(1, 2, 3)) / (2.0 * (1.0 - alpha_bar_t))
    log_w -= log_w.max()
    weights = np.exp(log_w)
    weights /= weights.sum()
    return LatentGrid(np.tensordot(weights, stack, axes=(0, 0)))


def cfg_combine(eps_uncond: LatentGrid, eps_cond: LatentGrid, omega: float) -> LatentGrid:
    """Guided prediction: eps_uncond + omega * (eps_cond - eps_uncond).

    omega = 1 returns the conditional branch, omega = 0 the unconditional
    one; values beyond 1 extrapolate along the branch difference.
    """
    if eps_uncond.shape != eps_cond.shape:
        raise ShapeError(
            f"branch shapes differ: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    return LatentGrid(eps_uncond.data + omega * (eps_cond.data - eps_uncond.data))
