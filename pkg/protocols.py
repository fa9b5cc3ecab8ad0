"""
Control schedules that make the memory perform a fractional Fourier transform.

GEM-EIT: gradient-echo storage maps frequency to position, an optional hold,
then EIT recall reads position out as time. Input and output chirps add the
extra rotation beyond the plain Fourier transform.

GEM-GEM: gradient-echo storage and recall with a chirp, a quadratic spatial
detuning (dispersion on the stored spectrum) and a second chirp. The echo is a
time reversal, so the realised order is pi plus the extra rotation.

All rates are rad/us, chirp rates rad/us^2, bandwidths MHz, times us.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Any, Callable, Literal

import numpy as np

from errors import CalibrationError, ChirpBoundWarning, InvalidParameterError
from phasespace import FrftSpec, MetricSet, frft_oracle, metrics
from signals import (
    DEFAULT_FILL_FACTOR,
    HGParams,
    PulseSignal,
    TimeGrid,
    energy_extent,
    gaussian_pair,
    hg_mode,
    mode_volume_scale,
    spectral_extent,
    spectral_width,
)
from solver import (
    DEFAULT_DT,
    ControlSchedule,
    MediumParams,
    Ramp,
    SimulationRecord,
    SpaceGrid,
    StagePlan,
    run,
)

logger = logging.getLogger(__name__)

Protocol = Literal['gem_eit', 'gem_gem']
PROTOCOLS: tuple[str, ...] = ('gem_eit', 'gem_gem')

GEM_DETUNING = 2.0 * math.pi * 250.0
# tune_omega_gem scans alternatives against the storage efficiency.
DEFAULT_OMEGA_GEM = 2.0 * math.pi * 10.0
MAX_THETA_EXTRA = math.pi / 2 - 1e-3
OMEGA_EIT_CAP = 100.0
DEFAULT_GEMGEM_HOLD = 1.0
SCALE_BOUNDS = (0.5, 2.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ProtocolSpec:
    theta_extra: float = 0.0
    ft_sign: int = 1
    W_i: float = 1.0
    T_i: float = 10.0
    m: int = 1
    omega_gem: float = DEFAULT_OMEGA_GEM
    chirp_scale_in: float = 1.0
    chirp_scale_out: float = 1.0
    fill_factor: float = DEFAULT_FILL_FACTOR

    def __post_init__(self):
        if not abs(self.theta_extra) < MAX_THETA_EXTRA:
            raise InvalidParameterError(
                f'theta_extra={self.theta_extra:.6g} rad is outside |theta| < pi/2 - 1e-3',
                theta_extra=self.theta_extra,
            )
        if self.ft_sign not in (-1, 1):
            raise InvalidParameterError(f'ft_sign must be +1 or -1, got {self.ft_sign}')
        if not self.W_i > 0:
            raise InvalidParameterError(f'W_i must be positive, got {self.W_i}')
        if not self.T_i > 0:
            raise InvalidParameterError(f'T_i must be positive, got {self.T_i}')
        if self.m < 1:
            raise InvalidParameterError(f'mode volume must be positive, got {self.m}')
        if not self.omega_gem > 0:
            raise InvalidParameterError(f'omega_gem must be positive, got {self.omega_gem}')
        if not (self.chirp_scale_in > 0 and self.chirp_scale_out > 0):
            raise InvalidParameterError('chirp scales must be positive')
        if not 0 < self.fill_factor <= 1:
            raise InvalidParameterError(f'fill factor must lie in (0, 1], got {self.fill_factor}')

    @staticmethod
    def for_mode_volume(m: int, T_i: float = 10.0, fill_factor: float = DEFAULT_FILL_FACTOR,
                        **kwargs: Any) -> ProtocolSpec:
        """Spec whose W_i is the 99.9% bandwidth of HG_m at the mode-volume scale."""
        sigma_t = mode_volume_scale(m, T_i, fill_factor)
        return ProtocolSpec(W_i=spectral_width(m, sigma_t), T_i=T_i, m=m,
                            fill_factor=fill_factor, **kwargs)

    @property
    def sigma_t(self) -> float:
        """Signal time scale implied by W_i, T_i and the fill factor."""
        return math.sqrt(self.fill_factor * self.T_i / (2.0 * math.pi * self.W_i))

    def to_dict(self) -> dict[str, float | int]:
        return {
            'theta_extra': self.theta_extra,
            'ft_sign': self.ft_sign,
            'W_i': self.W_i,
            'T_i': self.T_i,
            'm': self.m,
            'omega_gem': self.omega_gem,
            'chirp_scale_in': self.chirp_scale_in,
            'chirp_scale_out': self.chirp_scale_out,
            'fill_factor': self.fill_factor,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> ProtocolSpec:
        return ProtocolSpec(
            theta_extra=float(data['theta_extra']),
            ft_sign=int(data['ft_sign']),
            W_i=float(data['W_i']),
            T_i=float(data['T_i']),
            m=int(data['m']),
            omega_gem=float(data['omega_gem']),
            chirp_scale_in=float(data['chirp_scale_in']),
            chirp_scale_out=float(data['chirp_scale_out']),
            fill_factor=float(data['fill_factor']),
        )


def storage_bandwidth(spec: ProtocolSpec) -> float:
    return (1.0 + abs(math.tan(spec.theta_extra))) * spec.W_i


def recall_time(spec: ProtocolSpec) -> float:
    return (abs(math.sin(spec.theta_extra)) + abs(math.cos(spec.theta_extra))) * spec.T_i


def input_chirp_rate(spec: ProtocolSpec) -> float:
    """Two-photon chirp rate applied during GEM storage, rad/us^2."""
    return spec.chirp_scale_in * -(spec.W_i / spec.T_i) * math.tan(spec.theta_extra) * 2.0 * math.pi


def output_chirp_rate(spec: ProtocolSpec) -> float:
    """
    Output chirp rate, rad/us^2. The recall stage applies it negated.

    A component stored at time tau still has the storage chirp ahead of it and
    keeps +r tau^2 / 2. A component recalled at time s has already seen the
    recall chirp and carries -r s^2 / 2. Equal curvature on both sides of the
    transform therefore needs opposite two-photon chirps.
    """
    return spec.chirp_scale_out * -(spec.W_i / spec.T_i) * math.tan(spec.theta_extra) * 2.0 * math.pi


def eit_chirp_span(spec: ProtocolSpec) -> float:
    """Largest excursion of the recall chirp from its centre, rad/us."""
    return abs(output_chirp_rate(spec)) * recall_time(spec) / 2.0


def total_rotation(spec: ProtocolSpec, protocol: Protocol = 'gem_eit') -> float:
    """FrFT order the memory realises, in the oracle's convention."""
    if protocol == 'gem_eit':
        return spec.ft_sign * math.pi / 2 + spec.theta_extra
    if protocol == 'gem_gem':
        return math.pi + spec.theta_extra
    raise InvalidParameterError(f'unknown protocol {protocol!r}')


def theta_extra_for(protocol: Protocol, theta: float) -> float:
    """Extra rotation that realises total rotation theta (ft_sign +1, modulo the echo parity)."""
    if protocol == 'gem_eit':
        return theta - math.pi / 2
    if protocol == 'gem_gem':
        return theta if theta <= math.pi / 2 else theta - math.pi
    raise InvalidParameterError(f'unknown protocol {protocol!r}')


def _snap(duration: float, dt: float) -> float:
    return max(1, round(duration / dt)) * dt


def _chirp_bound_check(spec: ProtocolSpec, medium: MediumParams) -> tuple[str, ...]:
    span = eit_chirp_span(spec)
    if span <= medium.linewidth:
        return ()
    message = (
        f'EIT recall chirp spans +/-{span:.4g} rad/us, beyond the atomic linewidth '
        f'2 gamma = {medium.linewidth:.4g} rad/us'
    )
    warnings.warn(message, ChirpBoundWarning, stacklevel=3)
    logger.warning(message)
    return (message,)


def _gem_bias(omega: complex, medium: MediumParams) -> float:
    return -medium.light_shift(omega, GEM_DETUNING)


def stored_phase(spec: ProtocolSpec, medium: MediumParams, g: float, T_store: float,
                 z_reference: float = 0.5) -> tuple[float, float]:
    """
    Linear and quadratic spin-wave phase left by GEM storage, about z_reference.

    The spin wave carries the storage clock -g (T_store - c_in), the off-resonant
    propagation phase of the field, and the logarithmic phase -beta ln z of the
    absorbing slices upstream, with beta the Raman coupling over g.
    """
    beta = medium.raman_coupling(spec.omega_gem, GEM_DETUNING) / g
    c_in = T_store / 2.0
    k = medium.propagation_wavenumber(GEM_DETUNING) - g * (T_store - c_in) - beta / z_reference
    q = beta / (2.0 * z_reference ** 2)
    return k, q


def build_frft_schedule(
    spec: ProtocolSpec,
    medium: MediumParams,
    grid: SpaceGrid | None = None,
    dt: float = DEFAULT_DT,
    hold_duration: float = 0.0,
    omega_eit: float | None = None,
    calibrate: bool = True,
) -> ControlSchedule:
    """
    GEM storage for T_i, an optional hold, EIT recall for T_f.

    Recall starts by imprinting the conjugate of stored_phase on the spin
    wave, so the EIT readout sees it centred on k = 0.

    Stage durations are rounded to whole samples of dt. Without `omega_eit`
    the EIT Rabi frequency comes from calibrate_vg (or the slow-light
    estimate when `calibrate` is False).
    """
    grid = grid or SpaceGrid()
    if hold_duration < 0:
        raise InvalidParameterError(f'hold duration must be non-negative, got {hold_duration}')
    flags = _chirp_bound_check(spec, medium)

    bandwidth = storage_bandwidth(spec)
    T_store = _snap(spec.T_i, dt)
    T_hold = round(hold_duration / dt) * dt
    T_f = _snap(recall_time(spec), dt)
    v_g = grid.L / T_f
    if omega_eit is None:
        omega_eit = calibrate_vg(v_g, medium, grid, dt) if calibrate \
            else medium.eit_omega_for_delay(grid.L / v_g)

    g = spec.ft_sign * 2.0 * math.pi * bandwidth / grid.L
    c_in = T_store / 2.0
    k_stored, q_stored = stored_phase(spec, medium, g, T_store)

    stages = [StagePlan(
        name='gem_store',
        t_start=0.0,
        duration=T_store,
        omega=spec.omega_gem,
        delta=GEM_DETUNING,
        g=g,
        chirp=Ramp(0.0, input_chirp_rate(spec), c_in),
        bias=_gem_bias(spec.omega_gem, medium),
    )]
    if T_hold > 0:
        stages.append(StagePlan('hold', T_store, T_hold, delta=GEM_DETUNING))
    t_recall = T_store + T_hold
    stages.append(StagePlan(
        name='eit_recall',
        t_start=t_recall,
        duration=T_f,
        omega=omega_eit,
        delta=0.0,
        chirp=Ramp(0.0, -output_chirp_rate(spec), t_recall + T_f / 2.0),
        imprint_k=k_stored,
        imprint_q=q_stored,
    ))

    sigma_in = spec.sigma_t
    alpha = total_rotation(spec, 'gem_eit')
    sigma_out = 1.0 / (abs(g) * v_g * sigma_in * abs(math.sin(alpha)))
    info = {
        'protocol': 'gem_eit',
        'storage_bandwidth': bandwidth,
        'recall_time': recall_time(spec),
        'group_velocity': v_g,
        'omega_eit': omega_eit,
        'alpha': alpha,
        't_scale_in': sigma_in,
        't_scale_out': sigma_out,
        'center_in': c_in,
        'center_out': t_recall + T_f / 2.0,
        'stored_wavenumber': k_stored,
        'stored_curvature': q_stored,
    }
    logger.debug('gem_eit schedule: %s', info)
    return ControlSchedule(tuple(stages), warnings=flags, info=info)


def build_ft_schedule(spec: ProtocolSpec, medium: MediumParams, **kwargs: Any) -> ControlSchedule:
    """The plain Fourier transform: no chirps, B = W_i, T_f = T_i."""
    return build_frft_schedule(replace(spec, theta_extra=0.0), medium, **kwargs)


def gemgem_chirp_rates(spec: ProtocolSpec) -> tuple[float, float]:
    """Two-photon chirp rates for storage and recall."""
    shear = (spec.W_i / spec.T_i) * math.tan(spec.theta_extra / 2.0) * 2.0 * math.pi
    return -spec.chirp_scale_in * shear, spec.chirp_scale_out * shear


def gemgem_bandwidth(spec: ProtocolSpec) -> float:
    return (1.0 + abs(math.tan(spec.theta_extra / 2.0))) * spec.W_i


def default_dispersion_strength(spec: ProtocolSpec, hold_duration: float, L: float = 1.0) -> float:
    """
    q such that the hold applies spectral phase sin(theta) sigma_t^2 omega^2 / 2.

    A component at angular frequency omega sits at z - z_ref = omega / g and
    gains phase q H (omega / g)^2 over the hold.
    """
    if not hold_duration > 0:
        raise InvalidParameterError('dispersion needs a hold of positive duration')
    g = 2.0 * math.pi * gemgem_bandwidth(spec) / L
    return math.sin(spec.theta_extra) * spec.sigma_t ** 2 * g ** 2 / (2.0 * hold_duration)


def build_gemgem_schedule(
    spec: ProtocolSpec,
    dispersion_strength: float | None = None,
    hold_duration: float = DEFAULT_GEMGEM_HOLD,
    medium: MediumParams | None = None,
    grid: SpaceGrid | None = None,
    dt: float = DEFAULT_DT,
) -> ControlSchedule:
    """GEM storage with input chirp, quadratic-detuning hold, GEM recall with -g and output chirp."""
    medium = medium or MediumParams()
    grid = grid or SpaceGrid()
    if not hold_duration > 0:
        raise InvalidParameterError(f'GEM-GEM needs a positive hold, got {hold_duration}')
    if dispersion_strength is None:
        dispersion_strength = default_dispersion_strength(spec, hold_duration, grid.L)

    bandwidth = gemgem_bandwidth(spec)
    g = spec.ft_sign * 2.0 * math.pi * bandwidth / grid.L
    rate_in, rate_out = gemgem_chirp_rates(spec)
    T_store = _snap(spec.T_i, dt)
    T_hold = _snap(hold_duration, dt)
    T_recall = T_store
    c_in = T_store / 2.0
    t_recall = T_store + T_hold
    bias = _gem_bias(spec.omega_gem, medium)

    stages = (
        StagePlan('gem_store', 0.0, T_store, omega=spec.omega_gem, delta=GEM_DETUNING, g=g,
                  chirp=Ramp(0.0, rate_in, c_in), bias=bias),
        StagePlan('hold', T_store, T_hold, delta=GEM_DETUNING, q=dispersion_strength),
        StagePlan('gem_recall', t_recall, T_recall, omega=spec.omega_gem, delta=GEM_DETUNING,
                  g=-g, chirp=Ramp(0.0, rate_out, t_recall + T_recall / 2.0), bias=bias),
    )
    info = {
        'protocol': 'gem_gem',
        'storage_bandwidth': bandwidth,
        'dispersion_strength': dispersion_strength,
        'hold_duration': T_hold,
        'alpha': total_rotation(spec, 'gem_gem'),
        't_scale_in': spec.sigma_t,
        't_scale_out': spec.sigma_t,
        'center_in': c_in,
        'center_out': t_recall + T_recall / 2.0,
    }
    logger.debug('gem_gem schedule: %s', info)
    return ControlSchedule(stages, info=info)


def frft_target_spec(schedule: ControlSchedule) -> FrftSpec:
    """The transform a protocol schedule should realise on its input."""
    info = schedule.info
    return FrftSpec(
        alpha=info['alpha'],
        t_scale_in=info['t_scale_in'],
        t_scale_out=info['t_scale_out'],
        center_in=info['center_in'],
        center_out=info['center_out'],
    )


def recall_stage(schedule: ControlSchedule) -> StagePlan:
    return schedule.stages[-1]


@dataclass(frozen=True, eq=False)
class TransformResult:
    record: SimulationRecord
    output: PulseSignal
    target: PulseSignal
    metrics: MetricSet
    frft: FrftSpec


def simulate_transform(
    input: PulseSignal,
    schedule: ControlSchedule,
    medium: MediumParams,
    grid: SpaceGrid,
    substeps: int = 1,
) -> TransformResult:
    """Run a protocol schedule and score the recall-window output against the oracle."""
    record = run(input, schedule, medium, grid, substeps=substeps)
    recall = recall_stage(schedule)
    output = record.e_out.window(recall.t_start, recall.t_end)
    frft = frft_target_spec(schedule)
    target = frft_oracle(input, frft, output_grid=output.grid)
    return TransformResult(record, output, target, metrics(output, input, target), frft)


def _delay_pulse(delay: float, dt: float) -> tuple[PulseSignal, float]:
    sigma = delay / 6.0
    t_center = 6.0 * sigma
    duration = t_center + delay + 8.0 * sigma
    grid = TimeGrid.covering(0.0, 2.0 * t_center, dt)
    pulse = hg_mode(HGParams(n=0, sigma_t=sigma, center=t_center), grid)
    return pulse, _snap(duration, dt)


def measure_group_delay(omega: float, target_delay: float, medium: MediumParams,
                        grid: SpaceGrid, dt: float = DEFAULT_DT) -> float:
    """Centroid delay of a narrowband pulse through a resonant EIT medium."""
    pulse, duration = _delay_pulse(target_delay, dt)
    schedule = ControlSchedule((StagePlan('eit_recall', 0.0, duration, omega=omega),))
    record = run(pulse, schedule, medium, grid)
    return record.e_out.centroid() - pulse.centroid()


@lru_cache(maxsize=64)
def calibrate_vg(
    target_vg: float,
    medium: MediumParams,
    grid: SpaceGrid,
    dt: float = DEFAULT_DT,
    tolerance: float = 2e-3,
    max_iterations: int = 20,
) -> float:
    """
    Control Rabi frequency giving a simulated EIT group delay of L / target_vg.

    Starts from the slow-light estimate and refines by secant iteration on
    log(delay) against log(Omega).
    """
    if not target_vg > 0:
        raise InvalidParameterError(f'target group velocity must be positive, got {target_vg}')
    target_delay = grid.L / target_vg
    cap = OMEGA_EIT_CAP * medium.gamma
    omega = medium.eit_omega_for_delay(target_delay)

    def residual(omega: float) -> float:
        if omega > cap:
            raise CalibrationError(
                f'EIT Rabi frequency {omega:.4g} rad/us exceeds the cap {cap:.4g} rad/us',
                omega=omega,
                cap=cap,
                target_delay=target_delay,
            )
        delay = measure_group_delay(omega, target_delay, medium, grid, dt)
        logger.info('calibrate_vg: Omega=%.6g rad/us -> delay %.6g us (target %.6g)',
                    omega, delay, target_delay)
        if not delay > 0:
            raise CalibrationError(f'measured non-positive delay {delay:.4g} us', omega=omega)
        return math.log(delay / target_delay)

    x0 = math.log(omega)
    f0 = residual(omega)
    if abs(math.expm1(f0)) < tolerance:
        return omega
    # Delay scales as Omega^-2 to leading order.
    x1 = x0 + 0.5 * f0
    for _ in range(max_iterations):
        f1 = residual(math.exp(x1))
        if abs(math.expm1(f1)) < tolerance:
            return math.exp(x1)
        if f1 == f0:
            break
        x0, x1, f0 = x1, x1 - f1 * (x1 - x0) / (f1 - f0), f1
    raise CalibrationError(
        f'group velocity calibration did not converge in {max_iterations} iterations',
        residual=math.expm1(f0),
        omega=math.exp(x1),
        target_delay=target_delay,
    )


@dataclass(frozen=True)
class ChirpCalibration:
    chirp_scale_in: float
    chirp_scale_out: float
    fidelity: float
    baseline_fidelity: float
    evaluations: int

    def to_dict(self) -> dict[str, float | int]:
        return {
            'chirp_scale_in': self.chirp_scale_in,
            'chirp_scale_out': self.chirp_scale_out,
            'fidelity': self.fidelity,
            'baseline_fidelity': self.baseline_fidelity,
            'evaluations': self.evaluations,
        }


def schedule_for(protocol: Protocol, spec: ProtocolSpec, medium: MediumParams, grid: SpaceGrid,
                 dt: float = DEFAULT_DT, omega_eit: float | None = None,
                 hold_duration: float | None = None,
                 dispersion_strength: float | None = None) -> ControlSchedule:
    if protocol == 'gem_eit':
        return build_frft_schedule(spec, medium, grid, dt, hold_duration=hold_duration or 0.0,
                                   omega_eit=omega_eit)
    if protocol == 'gem_gem':
        return build_gemgem_schedule(
            spec, dispersion_strength,
            DEFAULT_GEMGEM_HOLD if hold_duration is None else hold_duration,
            medium, grid, dt,
        )
    raise InvalidParameterError(f'unknown protocol {protocol!r}')


def _golden_maximize(objective: Callable[[float], float], lo: float, hi: float,
                     iterations: int, first_pair: Callable[[float, float], tuple[float, float]]
                     ) -> float:
    dist = hi - lo
    c = lo + (1.0 - GOLDEN) * dist
    d = lo + GOLDEN * dist
    yc, yd = first_pair(c, d)
    for _ in range(iterations - 1):
        dist *= GOLDEN
        if yc > yd:
            hi, d, yd = d, c, yc
            c = lo + (1.0 - GOLDEN) * dist
            yc = objective(c)
        else:
            lo, c, yc = c, d, yd
            d = lo + GOLDEN * dist
            yd = objective(d)
    return c if yc > yd else d


def calibrate_chirps(
    spec: ProtocolSpec,
    medium: MediumParams,
    grid: SpaceGrid,
    pulse: PulseSignal,
    protocol: Protocol = 'gem_eit',
    dt: float | None = None,
    omega_eit: float | None = None,
    sweeps: int = 2,
    iterations: int = 10,
    workers: int = 1,
) -> ChirpCalibration:
    """
    Coordinate search over (chirp_scale_in, chirp_scale_out) in [0.5, 2]^2,
    one golden-section line search per axis per sweep, maximising the
    conditional fidelity against the oracle.
    """
    dt = dt or pulse.grid.dt
    if protocol == 'gem_eit' and omega_eit is None:
        T_f = _snap(recall_time(spec), dt)
        omega_eit = calibrate_vg(grid.L / T_f, medium, grid, dt)

    cache: dict[tuple[float, float], float] = {}

    def fidelity(scale_in: float, scale_out: float) -> float:
        key = (round(scale_in, 12), round(scale_out, 12))
        if key not in cache:
            trial = replace(spec, chirp_scale_in=scale_in, chirp_scale_out=scale_out)
            with warnings.catch_warnings():
                warnings.simplefilter('ignore', ChirpBoundWarning)
                schedule = schedule_for(protocol, trial, medium, grid, dt, omega_eit)
            cache[key] = simulate_transform(pulse, schedule, medium, grid).metrics.conditional_fidelity
            logger.info('calibrate_chirps: scales (%.5f, %.5f) -> fidelity %.6f',
                        scale_in, scale_out, cache[key])
        return cache[key]

    start = (spec.chirp_scale_in, spec.chirp_scale_out)
    baseline = fidelity(*start)
    shear = spec.theta_extra if protocol == 'gem_eit' else spec.theta_extra / 2.0
    if math.tan(shear) == 0:
        return ChirpCalibration(start[0], start[1], baseline, baseline, len(cache))

    def pair(evaluate: Callable[[float], float]) -> Callable[[float, float], tuple[float, float]]:
        def both(a: float, b: float) -> tuple[float, float]:
            if workers > 1:
                with ThreadPoolExecutor(max_workers=2) as executor:
                    fa, fb = executor.submit(evaluate, a), executor.submit(evaluate, b)
                    return fa.result(), fb.result()
            return evaluate(a), evaluate(b)
        return both

    scale_in, scale_out = start
    for _ in range(sweeps):
        def along_in(x: float) -> float:
            return fidelity(x, scale_out)
        scale_in = _golden_maximize(along_in, *SCALE_BOUNDS, iterations, pair(along_in))

        def along_out(x: float) -> float:
            return fidelity(scale_in, x)
        scale_out = _golden_maximize(along_out, *SCALE_BOUNDS, iterations, pair(along_out))

    values = np.array(list(cache.values()))
    if values.max() - values.min() < 1e-3:
        raise CalibrationError(
            'conditional fidelity varies by less than 1e-3 over the search; '
            'chirp scales are not identifiable',
            fidelity_range=float(values.max() - values.min()),
        )
    (best_in, best_out), best = max(cache.items(), key=lambda item: item[1])
    logger.info('calibrate_chirps: best scales (%.5f, %.5f), fidelity %.6f (baseline %.6f)',
                best_in, best_out, best, baseline)
    return ChirpCalibration(best_in, best_out, best, baseline, len(cache))


def tune_omega_gem(
    candidates: list[float],
    medium: MediumParams,
    grid: SpaceGrid,
    T_i: float = 10.0,
    dt: float = DEFAULT_DT,
) -> tuple[float, list[tuple[float, float]]]:
    """Coarse sweep of the GEM Rabi frequency for the best plain-FT efficiency at m = 1."""
    base = ProtocolSpec.for_mode_volume(1, T_i)
    pulse_grid = TimeGrid.covering(0.0, _snap(T_i, dt), dt)
    pulse = hg_mode(HGParams(n=1, sigma_t=mode_volume_scale(1, T_i), center=pulse_grid.midpoint,
                             m=1), pulse_grid)
    omega_eit = calibrate_vg(grid.L / _snap(T_i, dt), medium, grid, dt)
    table = []
    for omega in candidates:
        spec = replace(base, omega_gem=omega)
        schedule = build_ft_schedule(spec, medium, grid=grid, dt=dt, omega_eit=omega_eit)
        efficiency = simulate_transform(pulse, schedule, medium, grid).metrics.efficiency
        logger.info('tune_omega_gem: Omega=%.5g rad/us -> efficiency %.5f', omega, efficiency)
        table.append((omega, efficiency))
    best = max(table, key=lambda item: item[1])[0]
    return best, table


def showcase_spec(theta_total: float, input: PulseSignal, T_i: float,
                  fill_factor: float | None = None, **kwargs: Any) -> ProtocolSpec:
    """GEM-EIT spec rotating `input` by theta_total, with W_i measured from the signal."""
    ft_sign = 1 if theta_total >= 0 else -1
    lo, hi = energy_extent(input)
    if fill_factor is None:
        fill_factor = min((hi - lo) / T_i, 1.0)
    return ProtocolSpec(
        theta_extra=theta_total - ft_sign * math.pi / 2,
        ft_sign=ft_sign,
        W_i=spectral_extent(input),
        T_i=T_i,
        fill_factor=fill_factor,
        **kwargs,
    )


def default_pair(T_i: float = 10.0, dt: float = DEFAULT_DT, separation: float = 4.0,
                 sigma_t: float = 0.8) -> PulseSignal:
    return gaussian_pair(separation, sigma_t, TimeGrid.covering(0.0, _snap(T_i, dt), dt))
