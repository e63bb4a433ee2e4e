"""Real-valued AWGN channel, transmit-power normalization, SNR bookkeeping.

SNR is 1/sigma^2 with sigma^2 the per-component noise variance, so
sigma = 10^(-snr_db/20). One channel use is one real dimension. The noise
draw is returned alongside the output so the exact same randomness can be
replayed, which is what makes gradients through the channel well defined
(the draw never depends on the transmitter parameters).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericGuardError


@dataclass
class ChannelConfig:
    snr_mode: str = "uniform-range"  # "fixed" | "uniform-range"
    snr_db: float = 0.0
    snr_db_min: float = -4.0
    snr_db_max: float = 6.0

    def validate(self):
        if self.snr_mode not in ("fixed", "uniform-range"):
            raise ConfigError(f"unknown snr_mode {self.snr_mode!r}")
        if self.snr_mode == "uniform-range" and self.snr_db_min > self.snr_db_max:
            raise ConfigError(
                f"snr_db_min {self.snr_db_min} > snr_db_max {self.snr_db_max}")
        return self


@dataclass(frozen=True)
class RateInfo:
    """Spectral efficiency bookkeeping: rho = features per channel use."""

    n_feat: int
    n_tx: float

    @property
    def rho(self):
        if self.n_tx <= 0:
            raise ConfigError("n_tx must be positive")
        return self.n_feat / self.n_tx


def snr_db_to_sigma(snr_db):
    if snr_db == math.inf:
        return 0.0
    return 10.0 ** (-snr_db / 20.0)


def power_normalize(x, mode="per-vector", eps=0.0):
    """Scale a batch of row vectors onto the transmit power constraint.

    per-vector: each row is scaled to squared norm n (its dimension), i.e.
    x = sqrt(n) * x~ / ||x~||. per-batch-feature: each coordinate is scaled
    to unit second moment over the batch.
    """
    x = np.asarray(x, dtype=np.float64)
    if mode == "per-vector":
        sq = (x * x).sum(axis=1, keepdims=True)
        if eps == 0.0 and np.any(sq == 0.0):
            raise NumericGuardError(
                "zero-norm vector in per-vector normalization; pass eps > 0 "
                "to opt into a guard")
        return x * (np.sqrt(x.shape[1]) / np.sqrt(sq + eps))
    if mode == "per-batch-feature":
        sq = (x * x).mean(axis=0, keepdims=True)
        if eps == 0.0 and np.any(sq == 0.0):
            raise NumericGuardError(
                "zero-power coordinate in per-batch-feature normalization; "
                "pass eps > 0 to opt into a guard")
        return x / np.sqrt(sq + eps)
    raise ConfigError(f"unknown normalization mode {mode!r}")


def awgn(x, snr_db, rng):
    """y = x + sigma * n with n ~ N(0, I). Returns (y, n) for replay."""
    x = np.asarray(x)
    noise = rng.standard_normal(x.shape)
    sigma = snr_db_to_sigma(snr_db)
    if sigma == 0.0:
        return x.copy(), noise
    return x + np.asarray(sigma * noise, dtype=x.dtype), noise


def sample_training_snr(config, rng):
    """Draw one training SNR in dB according to the channel config."""
    config.validate()
    if config.snr_mode == "fixed":
        return float(config.snr_db)
    return float(rng.uniform(config.snr_db_min, config.snr_db_max))


def normalized_snr_db(snr_db, rate):
    """Rate-normalized SNR: snr_db - 10 log10(rho), rho = N_feat/n_tx.

    The energy-per-transmitted-feature convention: schemes that use the
    channel less often are credited. Applied uniformly to every curve.
    """
    if snr_db == math.inf:
        return math.inf
    return float(snr_db) - 10.0 * math.log10(rate.rho)


DEFAULT_EVAL_SNR_GRID = (-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0)
