import math
import logging
from enum import Enum
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np

from dpcore.exceptions import (
    InvalidParameterError,
    NoiseOffRefusedError,
    UnsupportedForPureDPError,
)

logger = logging.getLogger(__name__)


class Mechanism(str, Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"

    def __str__(self) -> str:
        return self.value


class NoiseMode(str, Enum):
    NOISY = "noisy"
    NOISE_OFF = "noise-off"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.epsilon) or self.epsilon <= 0:
            raise InvalidParameterError(
                f"epsilon must be positive, got {self.epsilon}"
            )
        if not 0 <= self.delta < 1:
            raise InvalidParameterError(f"delta must be in [0, 1), got {self.delta}")

    @property
    def is_pure(self) -> bool:
        return self.delta == 0

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NoiseScale:
    b: float

    def __post_init__(self):
        if not math.isfinite(self.b) or self.b <= 0:
            raise InvalidParameterError(f"noise scale must be positive, got {self.b}")


class RandomSource:
    """
    Owner of a single random stream.

    A source is single-owner: hand each thread its own source, obtained with
    `spawn`. Two sources built from the same seed and mode yield identical
    streams for an identical call sequence.

    Args:
        seed (int | None): 64-bit seed; None draws fresh OS entropy.
        mode (NoiseMode): NOISE_OFF turns every additive sampler into zero and
            the exponential mechanism into argmax.
    """

    def __init__(
        self,
        seed: int | None = None,
        mode: NoiseMode = NoiseMode.NOISY,
        _sequence: np.random.SeedSequence | None = None,
    ):
        if seed is not None and not 0 <= seed < 2**64:
            raise InvalidParameterError("seed must be a 64-bit unsigned integer")

        self._seed = seed
        self._mode = NoiseMode(mode)
        self._sequence = _sequence or np.random.SeedSequence(seed)
        self._generator = np.random.Generator(np.random.PCG64(self._sequence))

    @classmethod
    def noise_off(cls) -> "RandomSource":
        return cls(seed=0, mode=NoiseMode.NOISE_OFF)

    @property
    def seed(self) -> int | None:
        return self._seed

    @property
    def mode(self) -> NoiseMode:
        return self._mode

    @property
    def is_noise_off(self) -> bool:
        return self._mode == NoiseMode.NOISE_OFF

    def require_noisy(self):
        if self.is_noise_off:
            raise NoiseOffRefusedError("noise-off random source cannot publish")

    def spawn(self, n: int) -> list["RandomSource"]:
        """Derive n independent child sources with the same mode."""
        return [
            RandomSource(seed=self._seed, mode=self._mode, _sequence=child)
            for child in self._sequence.spawn(n)
        ]

    def uniform(self) -> float:
        """Uniform draw on the open interval (0, 1)."""
        while True:
            u = self._generator.random()
            if u > 0.0:
                return u

    def uniforms(self, size: int) -> np.ndarray:
        u = self._generator.random(size)
        zeros = u == 0.0
        while zeros.any():
            u[zeros] = self._generator.random(int(zeros.sum()))
            zeros = u == 0.0
        return u

    def normal(self, sigma: float, size: int | None = None):
        return self._generator.normal(0.0, sigma, size)

    def index(self, p: np.ndarray) -> int:
        return int(self._generator.choice(len(p), p=p))

    def indices(self, p: np.ndarray, size: int) -> np.ndarray:
        return self._generator.choice(len(p), size=size, p=p)


def laplace_scale(sensitivity: float, epsilon: float) -> NoiseScale:
    if sensitivity <= 0:
        raise InvalidParameterError(
            f"sensitivity must be positive, got {sensitivity}"
        )
    if epsilon <= 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")

    return NoiseScale(b=sensitivity / epsilon)


def _laplace_inverse_cdf(u, b: float):
    # F^-1(u) = b ln(2u) for u < 1/2, -b ln(2 - 2u) otherwise
    return np.where(u < 0.5, b * np.log(2.0 * u), -b * np.log(2.0 - 2.0 * u))


def laplace_sample(scale: NoiseScale, rng: RandomSource) -> float:
    """
    Draw zero-mean Laplace noise by inverting the CDF at one uniform draw.

    Args:
        scale (NoiseScale): The Laplace scale b.
        rng (RandomSource): The random source to draw from.

    Returns:
        float: The noise sample, 0.0 in noise-off mode.
    """
    if rng.is_noise_off:
        return 0.0

    u = rng.uniform()
    if u < 0.5:
        return scale.b * math.log(2.0 * u)
    return -scale.b * math.log(2.0 - 2.0 * u)


def laplace_samples(scale: NoiseScale, size: int, rng: RandomSource) -> np.ndarray:
    """Vectorized `laplace_sample`, one uniform per element."""
    if rng.is_noise_off:
        return np.zeros(size)

    return _laplace_inverse_cdf(rng.uniforms(size), scale.b)


def laplace_tail(scale: NoiseScale, t: float) -> float:
    """Return P(|X| > t) for X ~ Laplace(0, b)."""
    if t < 0:
        raise InvalidParameterError(f"tail threshold must be nonnegative, got {t}")

    return math.exp(-t / scale.b)


def laplace_accuracy(scale: NoiseScale, alpha: float) -> float:
    """Return the error bound holding with probability 1 - alpha."""
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must be in (0, 1), got {alpha}")

    return scale.b * math.log(1.0 / alpha)


def gaussian_sigma(sensitivity: float, params: PrivacyParams) -> float:
    if params.delta == 0:
        raise UnsupportedForPureDPError(
            "the Gaussian mechanism requires delta > 0"
        )
    if not params.epsilon < 1:
        raise InvalidParameterError(
            f"Gaussian calibration requires epsilon < 1, got {params.epsilon}"
        )
    if sensitivity <= 0:
        raise InvalidParameterError(
            f"sensitivity must be positive, got {sensitivity}"
        )

    return sensitivity * math.sqrt(2.0 * math.log(1.25 / params.delta)) / params.epsilon


def gaussian_sample(
    sensitivity: float, params: PrivacyParams, rng: RandomSource
) -> float:
    sigma = gaussian_sigma(sensitivity, params)
    if rng.is_noise_off:
        return 0.0
    return float(rng.normal(sigma))


def gaussian_samples(
    sensitivity: float, params: PrivacyParams, size: int, rng: RandomSource
) -> np.ndarray:
    sigma = gaussian_sigma(sensitivity, params)
    if rng.is_noise_off:
        return np.zeros(size)
    return rng.normal(sigma, size)


def exponential_choice(
    weights: Sequence[tuple[Any, float]],
    epsilon: float,
    utility_sensitivity: float,
    rng: RandomSource,
):
    """
    Select a candidate with probability proportional to exp(eps * u / (2 du)).

    Args:
        weights: Sequence of (candidate, utility) pairs.
        epsilon (float): Privacy budget of the selection.
        utility_sensitivity (float): Sensitivity of the utility function.
        rng (RandomSource): The random source to draw from.

    Returns:
        The selected candidate. In noise-off mode the candidate with the
        largest utility, ties resolved to the lowest index.
    """
    if not weights:
        raise InvalidParameterError("exponential mechanism needs candidates")
    if epsilon <= 0 or utility_sensitivity <= 0:
        raise InvalidParameterError(
            "epsilon and utility sensitivity must be positive"
        )

    utilities = np.asarray([utility for _, utility in weights], dtype=float)
    if not np.all(np.isfinite(utilities)):
        raise InvalidParameterError("utilities must be finite")

    if rng.is_noise_off:
        return weights[int(np.argmax(utilities))][0]

    log_weights = epsilon * utilities / (2.0 * utility_sensitivity)
    p = np.exp(log_weights - log_weights.max())
    p /= p.sum()

    return weights[rng.index(p)][0]
