"""
Analytic fractional Fourier transform, Wigner maps and transfer metrics.

The FrFT uses the Namias kernel

    K_a(u, x) = A_a exp(i cot(a) (x^2 + u^2) / 2 - i u x / sin(a)),
    A_a = exp(-i (pi/4 sgn(sin a) - a/2)) / sqrt(2 pi |sin a|),

acting on dimensionless coordinates x = (t - c_in) / s_in and
u = (t' - c_out) / s_out. Under this kernel HG_n picks up the phase
exp(-i n a).
"""
from __future__ import annotations

import cmath
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy.signal import czt

from errors import (
    InvalidParameterError,
    NumericalError,
    ResolutionError,
    UndefinedEfficiencyError,
    WraparoundError,
)
from signals import HGParams, PulseSignal, TimeGrid, hg_mode, resolving_dt, spectral_band

logger = logging.getLogger(__name__)

# Orders with |sin a| below this are applied as the exact identity or parity.
SNAP_TOLERANCE = 1e-6
QUADRATURE_ROW_CHUNK = 512
WIGNER_ROW_CHUNK = 256
# Fewest time rows a band-limited Wigner map keeps.
WIGNER_MIN_ROWS = 512
# Samples quieter than this (relative to the peak intensity) count as outside the support.
SUPPORT_THRESHOLD = 1e-15


def wrap_phase(phase: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(phase, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class FrftSpec:
    alpha: float
    t_scale_in: float = 1.0
    # None: same as t_scale_in.
    t_scale_out: float | None = None
    # None: midpoint of the respective grid.
    center_in: float | None = None
    center_out: float | None = None

    def __post_init__(self):
        if not self.t_scale_in > 0:
            raise InvalidParameterError(f't_scale_in must be positive, got {self.t_scale_in}')
        if self.t_scale_out is not None and not self.t_scale_out > 0:
            raise InvalidParameterError(f't_scale_out must be positive, got {self.t_scale_out}')

    @property
    def scale_out(self) -> float:
        return self.t_scale_in if self.t_scale_out is None else self.t_scale_out

    def reduced_alpha(self) -> float:
        """alpha wrapped to (-pi, pi]."""
        return wrap_phase(self.alpha)


def _coordinates(signal: PulseSignal, spec: FrftSpec, output_grid: TimeGrid):
    c_in = signal.grid.midpoint if spec.center_in is None else spec.center_in
    c_out = output_grid.midpoint if spec.center_out is None else spec.center_out
    x = (signal.t - c_in) / spec.t_scale_in
    u = (output_grid.t - c_out) / spec.scale_out
    return x, u


def _snapped(signal: PulseSignal, spec: FrftSpec, output_grid: TimeGrid, parity: bool) -> PulseSignal:
    x, u = _coordinates(signal, spec, output_grid)
    source = -u if parity else u
    re = np.interp(source, x, signal.amplitude.real, left=0.0, right=0.0)
    im = np.interp(source, x, signal.amplitude.imag, left=0.0, right=0.0)
    gain = math.sqrt(spec.t_scale_in / spec.scale_out)
    return PulseSignal(output_grid, (re + 1j * im) * gain)


def _check_resolution(cot: float, coords: np.ndarray, side: str):
    if len(coords) < 2:
        return
    step = abs(coords[1] - coords[0])
    advance = abs(cot) * float(np.max(np.abs(coords))) * step
    if advance > math.pi:
        raise ResolutionError(
            f'{side} chirp advances {advance:.3g} rad per sample (limit pi); '
            'refine the grid or reduce the time scale',
            phase_per_sample=advance,
            side=side,
        )


def frft_oracle(
    signal: PulseSignal,
    spec: FrftSpec,
    output_grid: TimeGrid | None = None,
    method: Literal['chirp', 'quadrature'] = 'chirp',
) -> PulseSignal:
    """
    Apply the order-alpha FrFT to `signal`, sampled on `output_grid`
    (the input grid by default).

    `quadrature` sums the kernel directly at every (u, x) pair; `chirp` factors
    it into chirp multiplication, a chirp-z transform and a second chirp.
    """
    if output_grid is None:
        output_grid = signal.grid
    alpha = spec.reduced_alpha()
    sin_a = math.sin(alpha)

    if abs(sin_a) < SNAP_TOLERANCE:
        return _snapped(signal, spec, output_grid, parity=abs(alpha) > math.pi / 2)

    cot_a = math.cos(alpha) / sin_a
    csc_a = 1.0 / sin_a
    prefactor = cmath.exp(-1j * (math.pi / 4 * math.copysign(1.0, sin_a) - alpha / 2)) \
        / math.sqrt(2.0 * math.pi * abs(sin_a))

    x, u = _coordinates(signal, spec, output_grid)
    _check_resolution(cot_a, x, 'input')
    _check_resolution(cot_a, u, 'output')

    dx = signal.grid.dt / spec.t_scale_in
    chirped = signal.amplitude * math.sqrt(spec.t_scale_in) * np.exp(0.5j * cot_a * x ** 2) * dx

    if method == 'quadrature':
        summed = np.empty(len(u), dtype=np.complex128)
        for start in range(0, len(u), QUADRATURE_ROW_CHUNK):
            rows = u[start:start + QUADRATURE_ROW_CHUNK]
            kernel = np.exp(-1j * csc_a * np.outer(rows, x))
            summed[start:start + len(rows)] = kernel @ chirped
    elif method == 'chirp':
        du = output_grid.dt / spec.scale_out
        x0, u0 = float(x[0]), float(u[0])
        w = cmath.exp(-1j * csc_a * dx * du)
        a = cmath.exp(1j * csc_a * u0 * dx)
        k = np.arange(len(u))
        summed = czt(chirped, m=len(u), w=w, a=a) \
            * np.exp(-1j * csc_a * x0 * (u0 + k * du))
    else:
        raise InvalidParameterError(f'unknown FrFT method {method!r}')

    values = prefactor * np.exp(0.5j * cot_a * u ** 2) * summed / math.sqrt(spec.scale_out)
    return PulseSignal(output_grid, values)


@lru_cache(maxsize=1)
def eigenphase_sign() -> int:
    """
    Sign s with F_a HG_n = exp(i s n a) HG_n, measured on HG_1 at a = pi/4.
    """
    grid = TimeGrid(-16.0, 1.0 / 32.0, 1025)
    pulse = hg_mode(HGParams(n=1, sigma_t=1.0), grid)
    rotated = frft_oracle(pulse, FrftSpec(alpha=math.pi / 4, center_in=0.0, center_out=0.0))
    overlap = np.sum(rotated.amplitude * np.conj(pulse.amplitude)) * grid.dt
    sign = 1 if np.angle(overlap) > 0 else -1
    logger.debug('measured FrFT eigenphase sign %+d (phase %.6f)', sign, float(np.angle(overlap)))
    return sign


def expected_eigenphase(n: int, alpha: float) -> float:
    return wrap_phase(eigenphase_sign() * n * alpha)


@dataclass(frozen=True)
class Axis:
    start: float
    step: float
    count: int
    name: str = ''
    unit: str = ''

    @property
    def values(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)


@dataclass(frozen=True, eq=False)
class WignerMap:
    axis1: Axis
    axis2: Axis
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.axis1.count, self.axis2.count):
            raise InvalidParameterError(
                f'Wigner values have shape {self.values.shape}, '
                f'axes give {(self.axis1.count, self.axis2.count)}'
            )

    def marginal(self) -> np.ndarray:
        """Integral over axis2 at each axis1 sample."""
        return self.values.sum(axis=1) * self.axis2.step

    def total(self) -> float:
        return float(self.values.sum() * self.axis1.step * self.axis2.step)

    def centroid(self) -> tuple[float, float]:
        weights = self.values
        total = weights.sum()
        if total == 0:
            raise NumericalError('centroid of an empty Wigner map is undefined')
        c1 = float((weights.sum(axis=1) * self.axis1.values).sum() / total)
        c2 = float((weights.sum(axis=0) * self.axis2.values).sum() / total)
        return c1, c2


def _support(amplitude: np.ndarray) -> tuple[int, int]:
    intensity = np.abs(amplitude) ** 2
    peak = float(intensity.max()) if len(intensity) else 0.0
    if peak == 0:
        return 0, -1
    above = np.nonzero(intensity > SUPPORT_THRESHOLD * peak)[0]
    return int(above[0]), int(above[-1])


def _next_pow2(n: int) -> int:
    return 1 << max(1, (n - 1).bit_length())


def _wigner_rows(amplitude: np.ndarray, first: int, last: int, n_lags: int,
                 rows: range, out: np.ndarray, scale: float) -> tuple[float, float]:
    """Fill out[rows] with the real map; returns the block's peak and imaginary residue."""
    block = np.zeros((len(rows), n_lags), dtype=np.complex128)
    for r, j in enumerate(rows):
        reach = min(j - first, last - j)
        if reach < 0:
            continue
        k = np.arange(reach + 1)
        products = amplitude[j + k] * np.conj(amplitude[j - k])
        block[r, k] = products
        block[r, -k[1:]] = np.conj(products[1:])
    spectrum = np.fft.fftshift(np.fft.fft(block, axis=1), axes=1)
    spectrum *= scale
    out[rows.start:rows.stop] = spectrum.real
    return float(np.max(np.abs(spectrum.real))), float(np.max(np.abs(spectrum.imag)))


def _wigner_core(amplitude: np.ndarray, step: float, n_lags: int | None,
                 workers: int) -> tuple[np.ndarray, int]:
    first, last = _support(amplitude)
    reach = max((last - first) // 2, 0)
    needed = 2 * reach + 1
    if n_lags is None:
        n_lags = _next_pow2(needed)
    elif n_lags < needed:
        raise WraparoundError(
            f'{n_lags} lag samples cannot hold lags up to +/-{reach}; need at least {needed}',
            n_lags=n_lags,
            required=needed,
        )

    n = len(amplitude)
    values = np.zeros((n, n_lags))
    chunks = [range(s, min(s + WIGNER_ROW_CHUNK, n)) for s in range(0, n, WIGNER_ROW_CHUNK)]

    def work(rows: range) -> tuple[float, float]:
        return _wigner_rows(amplitude, first, last, n_lags, rows, values, 2.0 * step)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(work, chunks))
    else:
        parts = [work(rows) for rows in chunks]

    peak = max((p for p, _ in parts), default=0.0)
    residue = max((r for _, r in parts), default=0.0)
    if peak > 0 and residue > 1e-8 * peak:
        raise NumericalError(
            f'Wigner map has imaginary residue {residue:.3g} against peak {peak:.3g}'
        )
    return values, n_lags


def _band_limited(signal: PulseSignal) -> PulseSignal:
    """Every k-th sample, with k as large as the spectrum allows and WIGNER_MIN_ROWS rows kept."""
    if signal.energy() == 0:
        return signal
    lo, hi = spectral_band(signal)
    edge = max(abs(lo), abs(hi))
    if edge == 0:
        return signal
    factor = int(resolving_dt(2.0 * edge) / signal.grid.dt)
    factor = min(factor, signal.grid.n_samples // WIGNER_MIN_ROWS)
    if factor <= 1:
        return signal
    logger.debug('Wigner map on every %dth sample', factor)
    return signal.decimated(factor)


def wigner(signal: PulseSignal, n_lags: int | None = None, workers: int = 1,
           band_limit: bool = False) -> WignerMap:
    """
    W(t, f) = integral of E(t + tau/2) E*(t - tau/2) exp(-2 pi i f tau) dtau.

    Lags run over tau = 2 k dt, so the frequency axis has spacing
    1 / (2 n_lags dt) MHz and the map integrates over f to |E(t)|^2.
    With `band_limit` the map is taken on a coarser time axis that still
    resolves the signal's spectrum, which keeps long recordings in memory.
    """
    if band_limit:
        signal = _band_limited(signal)
    dt = signal.grid.dt
    values, n_lags = _wigner_core(signal.amplitude, dt, n_lags, workers)
    df = 1.0 / (2.0 * n_lags * dt)
    return WignerMap(
        axis1=Axis(signal.grid.t_start, dt, signal.grid.n_samples, 't', 'us'),
        axis2=Axis(-(n_lags // 2) * df, df, n_lags, 'f', 'MHz'),
        values=values,
    )


def wigner_spinwave(spinwave: np.ndarray, z_start: float = 0.0, dz: float | None = None,
                    n_lags: int | None = None, workers: int = 1) -> WignerMap:
    """W(z, k) over correlation lag xi with kernel exp(-i k xi); integrates over k to |S(z)|^2."""
    spinwave = np.asarray(spinwave, dtype=np.complex128)
    if dz is None:
        dz = 1.0 / (len(spinwave) - 1)
    values, n_lags = _wigner_core(spinwave, dz, n_lags, workers)
    dk = 2.0 * math.pi / (2.0 * n_lags * dz)
    return WignerMap(
        axis1=Axis(z_start, dz, len(spinwave), 'z', 'L'),
        axis2=Axis(-(n_lags // 2) * dk, dk, n_lags, 'k_z', 'rad/L'),
        values=values / (2.0 * math.pi),
    )


def lobe_axis_angle(wmap: WignerMap, center: float | None = None, scale: float = 1.0) -> float:
    """
    Orientation of the positive part of a Wigner map, in (-pi/2, pi/2].

    Coordinates are (axis1 - center) / scale and angular frequency times
    scale, so a circular signal at that scale looks circular. The angle is
    measured in the FrFT order's sense: F_a carries the time axis to
    direction (cos a, -sin a).
    """
    weights = np.clip(wmap.values, 0.0, None)
    total = weights.sum()
    if total == 0:
        raise NumericalError('Wigner map has no positive part')
    if center is None:
        center = wmap.centroid()[0]
    x = (wmap.axis1.values - center) / scale
    angular = 2.0 * math.pi if wmap.axis2.unit == 'MHz' else 1.0
    y = wmap.axis2.values * angular * scale

    px = weights.sum(axis=1)
    py = weights.sum(axis=0)
    mx = float(px @ x / total)
    my = float(py @ y / total)
    sxx = float(px @ (x - mx) ** 2 / total)
    syy = float(py @ (y - my) ** 2 / total)
    sxy = float((x - mx) @ weights @ (y - my) / total)
    standard = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    angle = -standard
    if angle <= -math.pi / 2:
        angle += math.pi
    elif angle > math.pi / 2:
        angle -= math.pi
    return angle


def axis_difference(a: float, b: float) -> float:
    """Smallest difference between two orientations, modulo pi."""
    d = math.remainder(a - b, math.pi)
    return abs(d)


@dataclass(frozen=True)
class MetricSet:
    efficiency: float
    conditional_fidelity: float
    eigenphase: float
    overlap: complex = field(default=0j)

    def to_dict(self) -> dict[str, float]:
        return {
            'efficiency': self.efficiency,
            'conditional_fidelity': self.conditional_fidelity,
            'eigenphase': self.eigenphase,
            'overlap_re': self.overlap.real,
            'overlap_im': self.overlap.imag,
        }


def metrics(output: PulseSignal, input: PulseSignal, target: PulseSignal) -> MetricSet:
    """
    Efficiency, conditional fidelity and overlap phase of `output` against
    `target`.

    The target is linearly resampled onto the output grid; energies are
    taken on each signal's own grid.
    """
    input_energy = input.energy()
    if input_energy == 0:
        raise UndefinedEfficiencyError('input signal has zero energy; efficiency is undefined')

    target = target.resample(output.grid)
    output_energy = output.energy()
    target_energy = target.energy()
    overlap = complex(np.sum(output.amplitude * np.conj(target.amplitude)) * output.grid.dt)

    efficiency = output_energy / input_energy
    if output_energy == 0 or target_energy == 0:
        return MetricSet(efficiency, 0.0, 0.0, overlap)
    fidelity = abs(overlap) ** 2 / (output_energy * target_energy)
    return MetricSet(efficiency, fidelity, wrap_phase(cmath.phase(overlap)), overlap)
