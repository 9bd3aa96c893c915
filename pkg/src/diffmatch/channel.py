"""Downlink channel drops and one-layer RSMA rates.

Users see y_u = h_u^H x + n. Private streams are zero-forced across the
users that own a private expert; shared experts travel on a single common
stream that every consumer decodes first (ideal SIC).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractError, DegenerateChannelError
from .matchgraph import StreamPartition

SPEED_OF_LIGHT = 299_792_458.0
COND_LIMIT = 1e6


@dataclass(frozen=True)
class ScenarioRadio:
    carrier_freq: float = 2.4e9
    dist_min: float = 50.0
    dist_max: float = 100.0
    num_antennas: int = 16
    snr_db: float = 10.0
    path_loss_exponent: float = 2.0
    common_power_fraction: float = 0.3
    # thermal noise over 10 MHz: -174 dBm/Hz + 70 dB
    noise_dbm: float = -104.0

    def __post_init__(self):
        if not (0 < self.dist_min <= self.dist_max):
            raise ConfigurationError(
                f"need 0 < dist_min <= dist_max, got {self.dist_min}, {self.dist_max}")
        if self.num_antennas < 1:
            raise ConfigurationError("num_antennas must be >= 1")
        if not self.carrier_freq > 0:
            raise ConfigurationError("carrier_freq must be positive")
        if not (0.0 <= self.common_power_fraction < 1.0):
            raise ConfigurationError("common_power_fraction must lie in [0, 1)")
        if self.path_loss_exponent <= 0:
            raise ConfigurationError("path_loss_exponent must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def noise_power(self) -> float:
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    def tx_power(self, snr_db: float | None = None) -> float:
        """Transmit power giving mean receive SNR ``snr_db`` at dist_min."""
        snr = self.snr_db if snr_db is None else snr_db
        return 10.0 ** (snr / 10.0) * self.noise_power / path_gain(self.dist_min, self)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    h: np.ndarray
    distances: np.ndarray
    noise_power: float
    tx_power: float

    @property
    def num_users(self) -> int:
        return self.h.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.h.shape[1]

    def with_snr(self, radio: ScenarioRadio, snr_db: float) -> "ChannelRealization":
        """Same fading and geometry, transmit power re-targeted to ``snr_db``."""
        return ChannelRealization(self.h, self.distances, self.noise_power,
                                  radio.tx_power(snr_db))


@dataclass(frozen=True, eq=False)
class RateReport:
    r_common: float
    r_private: np.ndarray
    r_user_total: np.ndarray


def path_gain(d, radio: ScenarioRadio):
    """Free-space gain at 1 m scaled by d^-exponent."""
    ref = (radio.wavelength / (4.0 * np.pi)) ** 2
    return ref * np.asarray(d, dtype=np.float64) ** (-radio.path_loss_exponent)


def sample_channel(rng: np.random.Generator, radio: ScenarioRadio,
                   num_users: int) -> ChannelRealization:
    if num_users < 1:
        raise ConfigurationError("num_users must be >= 1")
    d = rng.uniform(radio.dist_min, radio.dist_max, size=num_users)
    n = radio.num_antennas
    fading = (rng.standard_normal((num_users, n))
              + 1j * rng.standard_normal((num_users, n))) / np.sqrt(2.0)
    h = np.sqrt(path_gain(d, radio))[:, None] * fading
    h.setflags(write=False)
    d.setflags(write=False)
    return ChannelRealization(h, d, radio.noise_power, radio.tx_power())


def zf_precoders(chan: ChannelRealization, active_users) -> np.ndarray:
    """Unit-norm ZF columns, one per active user (N x K)."""
    idx = np.asarray(active_users, dtype=np.int64).reshape(-1)
    if idx.size > chan.num_antennas:
        raise ContractError(
            f"{idx.size} ZF streams need at least as many antennas ({chan.num_antennas})")
    if idx.size == 0:
        return np.zeros((chan.num_antennas, 0), dtype=np.complex128)
    P, kappa = kernels.zf_columns(np.ascontiguousarray(chan.h[idx]))
    if not kappa <= COND_LIMIT:
        raise DegenerateChannelError(f"channel submatrix condition number {kappa:.3g} > {COND_LIMIT:g}")
    return P


def common_precoder(chan: ChannelRealization, common_receivers) -> np.ndarray:
    idx = np.asarray(common_receivers, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ContractError("common precoder needs at least one receiver")
    return kernels.common_direction(np.ascontiguousarray(chan.h[idx]))


def power_split(partition: StreamPartition, radio: ScenarioRadio,
                tx_power: float) -> tuple[float, float]:
    """(power of the common stream, power of each private stream).

    With both stream types present the common stream takes
    ``common_power_fraction`` and the rest is split evenly. A lone stream type
    takes the full budget.
    """
    n_priv = len(partition.private_users)
    has_common = bool(partition.common_experts)
    if has_common and n_priv:
        p_c = radio.common_power_fraction * tx_power
        return p_c, (tx_power - p_c) / n_priv
    if has_common:
        return tx_power, 0.0
    if n_priv:
        return 0.0, tx_power / n_priv
    return 0.0, 0.0


def common_shares(partition: StreamPartition) -> np.ndarray:
    """Fraction of the common payload each user needs.

    The common stream multicasts every shared expert's output once; user u
    uses ``common_counts[u]`` of the ``len(common_experts)`` payload parts.
    """
    counts = np.asarray(partition.common_counts, dtype=np.float64)
    n_common = len(partition.common_experts)
    if n_common == 0:
        return np.zeros_like(counts)
    return counts / n_common


def compute_rates(chan: ChannelRealization, partition: StreamPartition,
                  radio: ScenarioRadio) -> RateReport:
    if partition.num_users != chan.num_users:
        raise ContractError("partition and channel disagree on num_users")
    private = np.asarray(partition.private_users, dtype=np.int64)
    if private.size > chan.num_antennas:
        raise ContractError(
            f"{private.size} private streams exceed {chan.num_antennas} antennas")
    common = np.asarray(partition.common_users, dtype=np.int64)
    p_c, p_p = power_split(partition, radio, chan.tx_power)
    r_c, r_p, r_tot, kappa = kernels.rsma_rates(
        np.ascontiguousarray(chan.h), private, common, common_shares(partition),
        float(p_c), float(p_p), float(chan.noise_power), COND_LIMIT)
    if not kappa <= COND_LIMIT:
        raise DegenerateChannelError(f"private-stream channel condition number {kappa:.3g} > {COND_LIMIT:g}")
    return RateReport(float(r_c), r_p, r_tot)
