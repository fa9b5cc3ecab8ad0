"""Test signals on uniform time grids.

Time is in microseconds and frequency in MHz throughout. Amplitudes are the
dimensionless field envelope, normalised so that the photon number of a pulse
is the integral of its intensity over time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq
from scipy.special import erfc

from errors import InvalidParameterError, TruncationError

logger = logging.getLogger(__name__)

DEFAULT_FILL_FACTOR = 0.8
ENERGY_FRACTION = 0.999
# Largest fraction of a signal's energy that may fall outside its grid.
TRUNCATION_TOLERANCE = 1e-4


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    dt: float
    n_samples: int

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError(f'dt must be positive, got {self.dt}', dt=self.dt)
        if self.n_samples < 2:
            raise InvalidParameterError(
                f'a time grid needs at least 2 samples, got {self.n_samples}',
                n_samples=self.n_samples
            )
        if not math.isfinite(self.t_start + (self.n_samples - 1) * self.dt):
            raise InvalidParameterError('time grid span is not finite')

    @property
    def t(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_samples)

    @property
    def t_end(self) -> float:
        return self.t_start + (self.n_samples - 1) * self.dt

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.t_start + self.t_end)

    @staticmethod
    def covering(t_start: float, t_end: float, dt: float) -> TimeGrid:
        """Smallest grid starting at t_start whose last sample reaches t_end."""
        n = int(math.ceil((t_end - t_start) / dt - 1e-9)) + 1
        return TimeGrid(t_start, dt, max(n, 2))

    def to_dict(self) -> dict[str, float | int]:
        return {'t_start': self.t_start, 'dt': self.dt, 'n_samples': self.n_samples}

    @staticmethod
    def from_dict(data: dict[str, Any]) -> TimeGrid:
        return TimeGrid(float(data['t_start']), float(data['dt']), int(data['n_samples']))


@dataclass(frozen=True, eq=False)
class PulseSignal:
    grid: TimeGrid
    amplitude: np.ndarray

    def __post_init__(self):
        amplitude = np.ascontiguousarray(self.amplitude, dtype=np.complex128)
        if amplitude.shape != (self.grid.n_samples,):
            raise InvalidParameterError(
                f'amplitude has shape {amplitude.shape}, grid holds {self.grid.n_samples} samples'
            )
        if not np.all(np.isfinite(amplitude)):
            raise InvalidParameterError('amplitude contains non-finite samples')
        object.__setattr__(self, 'amplitude', amplitude)

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def energy(self) -> float:
        return float(self.grid.dt * np.sum(self.intensity))

    def normalized(self) -> PulseSignal:
        energy = self.energy()
        if energy == 0:
            raise InvalidParameterError('cannot normalise a zero signal')
        return PulseSignal(self.grid, self.amplitude / math.sqrt(energy))

    def scaled(self, factor: complex) -> PulseSignal:
        return PulseSignal(self.grid, self.amplitude * factor)

    def centroid(self) -> float:
        """Intensity-weighted mean time."""
        weights = self.intensity
        total = np.sum(weights)
        if total == 0:
            raise InvalidParameterError('centroid of a zero signal is undefined')
        return float(np.sum(self.t * weights) / total)

    def resample(self, grid: TimeGrid) -> PulseSignal:
        """Linear interpolation of real and imaginary parts; zero outside this grid."""
        if grid == self.grid:
            return self
        t = grid.t
        re = np.interp(t, self.t, self.amplitude.real, left=0.0, right=0.0)
        im = np.interp(t, self.t, self.amplitude.imag, left=0.0, right=0.0)
        return PulseSignal(grid, re + 1j * im)

    def decimated(self, factor: int) -> PulseSignal:
        """Every `factor`-th sample, starting from the first."""
        if factor < 1:
            raise InvalidParameterError(f'decimation factor must be at least 1, got {factor}')
        amplitude = self.amplitude[::factor].copy()
        return PulseSignal(TimeGrid(self.grid.t_start, self.grid.dt * factor, len(amplitude)), amplitude)

    def window(self, t_start: float, t_end: float) -> PulseSignal:
        """Samples with t_start <= t <= t_end (within half a step)."""
        t = self.t
        tol = 0.5 * self.grid.dt
        keep = np.nonzero((t >= t_start - tol) & (t <= t_end + tol))[0]
        if len(keep) < 2:
            raise InvalidParameterError(
                f'window [{t_start}, {t_end}] holds fewer than 2 samples of the signal'
            )
        first, last = int(keep[0]), int(keep[-1])
        grid = TimeGrid(float(t[first]), self.grid.dt, last - first + 1)
        return PulseSignal(grid, self.amplitude[first:last + 1].copy())


@dataclass(frozen=True)
class HGParams:
    n: int
    sigma_t: float
    center: float = 0.0
    # Mode volume; None when the scale is set directly.
    m: int | None = None

    def __post_init__(self):
        if self.n < 0:
            raise InvalidParameterError(f'mode index must be non-negative, got {self.n}')
        if not self.sigma_t > 0:
            raise InvalidParameterError(f'sigma_t must be positive, got {self.sigma_t}')
        if self.m is not None:
            if self.m < 1:
                raise InvalidParameterError(f'mode volume must be positive, got {self.m}')
            if self.n > self.m:
                raise InvalidParameterError(
                    f'HG_{self.n} does not fit mode volume m={self.m}'
                )


def hermite_functions(n_max: int, x: np.ndarray) -> np.ndarray:
    """
    Normalised Hermite functions psi_0..psi_{n_max} at x, one per row.

    Uses the three-term recurrence on the normalised functions directly, which
    stays well scaled where factorials would overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x ** 2)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for k in range(1, n_max):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * x * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def _check_clipping(grid: TimeGrid, clipped: float, what: str):
    if clipped > TRUNCATION_TOLERANCE:
        raise TruncationError(
            f'{what} loses a fraction {clipped:.3g} of its energy outside '
            f'[{grid.t_start:.6g}, {grid.t_end:.6g}]',
            clipped_fraction=clipped,
            available=[grid.t_start, grid.t_end],
        )


@lru_cache(maxsize=None)
def _hermite_cumulative(n: int) -> tuple[np.ndarray, np.ndarray]:
    half = 2.0 * math.sqrt(2 * n + 1) + 8.0
    x = np.linspace(-half, half, 200_001)
    density = hermite_functions(n, x)[n] ** 2
    cumulative = cumulative_trapezoid(density, x, initial=0.0)
    return x, cumulative / cumulative[-1]


def hermite_tail(n: int, x_lo: float, x_hi: float) -> float:
    """Fraction of HG_n's energy outside [x_lo, x_hi] (in units of sigma_t)."""
    x, cumulative = _hermite_cumulative(n)
    below = float(np.interp(x_lo, x, cumulative, left=0.0, right=1.0))
    above = 1.0 - float(np.interp(x_hi, x, cumulative, left=0.0, right=1.0))
    return max(below, 0.0) + max(above, 0.0)


def hg_mode(params: HGParams, grid: TimeGrid) -> PulseSignal:
    """
    HG_n sampled on `grid`, normalised to unit energy by quadrature.

    A grid spanning center +/- 5 sigma_t sqrt(2n + 1) is always safe; shorter
    grids are accepted as long as the clipped energy stays negligible.
    """
    clipped = hermite_tail(
        params.n,
        (grid.t_start - params.center) / params.sigma_t,
        (grid.t_end - params.center) / params.sigma_t,
    )
    _check_clipping(grid, clipped, f'HG_{params.n}')

    x = (grid.t - params.center) / params.sigma_t
    psi = hermite_functions(params.n, x)[params.n] / math.sqrt(params.sigma_t)
    return PulseSignal(grid, psi.astype(np.complex128)).normalized()


def _central_interval(x: np.ndarray, density: np.ndarray, fraction: float) -> tuple[float, float]:
    return _interval_from_cumulative(x, cumulative_trapezoid(density, x, initial=0.0), fraction)


def _interval_from_cumulative(
    x: np.ndarray, cumulative: np.ndarray, fraction: float
) -> tuple[float, float]:
    total = cumulative[-1]
    if total <= 0:
        raise InvalidParameterError('energy extent of a zero signal is undefined')
    tail = 0.5 * (1.0 - fraction) * total

    def crossing(level: float) -> float:
        return brentq(lambda v: np.interp(v, x, cumulative) - level, x[0], x[-1], xtol=1e-12)

    return crossing(tail), crossing(total - tail)


@lru_cache(maxsize=None)
def hermite_extent(n: int, fraction: float = ENERGY_FRACTION) -> float:
    """Width, in units of sigma_t, of the central interval holding `fraction` of HG_n's energy."""
    x, cumulative = _hermite_cumulative(n)
    lo, hi = _interval_from_cumulative(x, cumulative, fraction)
    return hi - lo


def energy_extent(signal: PulseSignal, fraction: float = ENERGY_FRACTION) -> tuple[float, float]:
    return _central_interval(signal.t, signal.intensity, fraction)


def mode_volume_scale(m: int, T_i: float, fill_factor: float = DEFAULT_FILL_FACTOR) -> float:
    """
    Temporal scale sigma_t at which HG_m's 99.9% energy extent equals
    fill_factor * T_i.

    The paired spectral scale is 1 / (2 pi sigma_t), which makes the Wigner
    function of HG_m circular in (t / sigma_t, 2 pi f sigma_t).
    """
    if m < 1:
        raise InvalidParameterError(f'mode volume must be positive, got {m}')
    if not T_i > 0:
        raise InvalidParameterError(f'storage duration must be positive, got {T_i}')
    if not 0 < fill_factor <= 1:
        raise InvalidParameterError(f'fill factor must lie in (0, 1], got {fill_factor}')
    sigma_t = fill_factor * T_i / hermite_extent(m)
    logger.debug('mode volume m=%d, T_i=%g -> sigma_t=%.6g us', m, T_i, sigma_t)
    return sigma_t


def spectral_scale(sigma_t: float) -> float:
    return 1.0 / (2.0 * math.pi * sigma_t)


def spectral_width(m: int, sigma_t: float, fraction: float = ENERGY_FRACTION) -> float:
    """99.9% spectral width of HG_m at scale sigma_t, in MHz."""
    return hermite_extent(m, fraction) * spectral_scale(sigma_t)


def gaussian_pair(separation: float, sigma_t: float, grid: TimeGrid) -> PulseSignal:
    if separation < 0:
        raise InvalidParameterError(f'separation must be non-negative, got {separation}')
    if not sigma_t > 0:
        raise InvalidParameterError(f'sigma_t must be positive, got {sigma_t}')
    center = grid.midpoint
    # Each pulse's intensity is exp(-t^2 / sigma_t^2); tail beyond u is erfc(u / sigma_t) / 2.
    clipped = 0.0
    for offset in (-0.5 * separation, 0.5 * separation):
        clipped += 0.25 * erfc((center + offset - grid.t_start) / sigma_t)
        clipped += 0.25 * erfc((grid.t_end - center - offset) / sigma_t)
    _check_clipping(grid, clipped, 'Gaussian pair')

    t = grid.t
    amplitude = (
        np.exp(-0.5 * ((t - center + 0.5 * separation) / sigma_t) ** 2)
        + np.exp(-0.5 * ((t - center - 0.5 * separation) / sigma_t) ** 2)
    )
    return PulseSignal(grid, amplitude.astype(np.complex128)).normalized()


def spectrum(signal: PulseSignal) -> tuple[np.ndarray, np.ndarray]:
    """Centred continuous-FT estimate: frequencies in MHz and dt-weighted spectrum."""
    n = signal.grid.n_samples
    freqs = np.fft.fftshift(np.fft.fftfreq(n, signal.grid.dt))
    values = np.fft.fftshift(np.fft.fft(signal.amplitude)) * signal.grid.dt
    return freqs, values


def spectral_band(signal: PulseSignal, fraction: float = ENERGY_FRACTION) -> tuple[float, float]:
    """Central frequency interval, MHz, holding `fraction` of the spectral energy."""
    freqs, values = spectrum(signal)
    return _central_interval(freqs, np.abs(values) ** 2, fraction)


def spectral_extent(signal: PulseSignal, fraction: float = ENERGY_FRACTION) -> float:
    lo, hi = spectral_band(signal, fraction)
    return hi - lo


def resolving_dt(bandwidth: float) -> float:
    """Time step at which a signal of full width `bandwidth` MHz fills under a quarter of the band."""
    if not bandwidth > 0:
        raise InvalidParameterError(f'bandwidth must be positive, got {bandwidth}')
    return 1.0 / (5.0 * bandwidth)
