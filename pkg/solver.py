"""
Three-level Maxwell-Bloch integration on a normalised ensemble z in [0, 1].

    dS/dt = i conj(Omega) P - (gamma_S + i delta_2(z, t)) S
    dP/dt = i sqrt(d) gamma E + i Omega S - (gamma + i Delta) P
    dE/dz = i sqrt(d) P,    E(0, t) = e_in(t)

The diagonal decay/detuning rates are removed with an integrating factor and
the remaining coupling is advanced with classical RK4. E carries no time
derivative and is rebuilt from P by quadrature at every Runge-Kutta stage.
With this normalisation

    integral |e_in|^2 dt = integral |e_out|^2 dt
                           + (1/gamma) integral (|S|^2 + |P|^2) dz
                           + (1/gamma) integral integral (2 gamma |P|^2 + 2 gamma_S |S|^2) dz dt

holds exactly for the continuous equations; the ledger records each term.
"""
from __future__ import annotations

import bisect
import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.interpolate import CubicSpline

from errors import InvalidParameterError, LedgerImbalanceError
from signals import PulseSignal, TimeGrid

logger = logging.getLogger(__name__)

# Rb-87 D1 natural linewidth, 2 pi x 5.75 MHz.
RB87_D1_LINEWIDTH = 2.0 * math.pi * 5.75
STAGE_NAMES = ('gem_store', 'hold', 'eit_recall', 'gem_recall')
DEFAULT_DT = 1e-3
DEFAULT_N_Z = 512
LEDGER_TOLERANCE = 1e-3
# Largest |rate| * h accepted per RK4 substep for the coupling terms.
COUPLING_STEP_LIMIT = 2.0


@dataclass(frozen=True)
class SpaceGrid:
    n_z: int = DEFAULT_N_Z
    L: float = 1.0

    def __post_init__(self):
        if self.n_z < 64:
            raise InvalidParameterError(f'n_z must be at least 64, got {self.n_z}', n_z=self.n_z)
        if self.L != 1.0:
            raise InvalidParameterError(f'the ensemble length is normalised to 1, got {self.L}')

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.n_z)

    @property
    def dz(self) -> float:
        return self.L / (self.n_z - 1)


@dataclass(frozen=True)
class MediumParams:
    # Half the optical depth.
    d: float = 500.0
    gamma: float = RB87_D1_LINEWIDTH / 2
    gamma_S: float = 0.0

    def __post_init__(self):
        if not self.d > 0:
            raise InvalidParameterError(f'd must be positive, got {self.d}')
        if not self.gamma > 0:
            raise InvalidParameterError(f'gamma must be positive, got {self.gamma}')
        if not self.gamma_S >= 0:
            raise InvalidParameterError(f'gamma_S must be non-negative, got {self.gamma_S}')

    @staticmethod
    def rb87_d1(optical_depth: float = 1000.0, gamma_S: float = 0.0) -> MediumParams:
        return MediumParams(d=optical_depth / 2, gamma=RB87_D1_LINEWIDTH / 2, gamma_S=gamma_S)

    @property
    def linewidth(self) -> float:
        """Full natural linewidth 2 gamma in rad/us."""
        return 2.0 * self.gamma

    def eit_delay(self, omega: complex) -> float:
        """Slow-light transit time d gamma / |Omega|^2 through L = 1 at resonance."""
        return self.d * self.gamma / abs(omega) ** 2

    def eit_group_velocity(self, omega: complex) -> float:
        return abs(omega) ** 2 / (self.d * self.gamma)

    def eit_omega_for_delay(self, delay: float) -> float:
        return math.sqrt(self.d * self.gamma / delay)

    def light_shift(self, omega: complex, delta: float) -> float:
        """Two-photon shift -|Omega|^2 Delta / (Delta^2 + gamma^2) seen by S when P is slaved."""
        return -abs(omega) ** 2 * delta / (delta ** 2 + self.gamma ** 2)

    def raman_coupling(self, omega: complex, delta: float) -> float:
        """Product of the field-to-spin and spin-to-field Raman couplings at one-photon detuning Delta."""
        return self.d * self.gamma * abs(omega) ** 2 / (delta ** 2 + self.gamma ** 2)

    def propagation_wavenumber(self, delta: float) -> float:
        """Phase per unit z picked up by a weak field at one-photon detuning Delta."""
        return self.d * self.gamma * delta / (delta ** 2 + self.gamma ** 2)

    def to_dict(self) -> dict[str, float]:
        return {'d': self.d, 'gamma': self.gamma, 'gamma_S': self.gamma_S}

    @staticmethod
    def from_dict(data: dict[str, Any]) -> MediumParams:
        return MediumParams(float(data['d']), float(data['gamma']), float(data['gamma_S']))


def steady_state_transmission(d: float) -> float:
    """Intensity transmission of a resonant, undriven medium."""
    return math.exp(-2.0 * d)


@dataclass(frozen=True)
class Ramp:
    """value + rate * (t - center)."""
    value: float = 0.0
    rate: float = 0.0
    center: float = 0.0

    def __call__(self, t: float) -> float:
        return self.value + self.rate * (t - self.center)

    def to_dict(self) -> dict[str, float]:
        return {'value': self.value, 'rate': self.rate, 'center': self.center}

    @staticmethod
    def from_dict(data: dict[str, Any]) -> Ramp:
        return Ramp(float(data.get('value', 0.0)), float(data.get('rate', 0.0)),
                    float(data.get('center', 0.0)))


@dataclass(frozen=True)
class StagePlan:
    name: str
    t_start: float
    duration: float
    omega: complex = 0j
    delta: float = 0.0
    g: float = 0.0
    q: float = 0.0
    chirp: Ramp = field(default_factory=Ramp)
    # Uniform two-photon offset derived from the other terms (light-shift
    # compensation).
    bias: float = 0.0
    # Spin-wave phase applied once on entry:
    # S *= exp(-i (imprint_k (z - z_ref) + imprint_q (z - z_ref)^2)).
    imprint_k: float = 0.0
    imprint_q: float = 0.0

    def __post_init__(self):
        if self.name not in STAGE_NAMES:
            raise InvalidParameterError(
                f'unknown stage {self.name!r}; expected one of {", ".join(STAGE_NAMES)}'
            )
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise InvalidParameterError(f'stage {self.name} has invalid duration {self.duration}')

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    @property
    def midpoint(self) -> float:
        return self.t_start + 0.5 * self.duration

    def uniform_detuning(self, t: float) -> float:
        return self.chirp(t) + self.bias

    def two_photon_detuning(self, z_rel: np.ndarray, t: float) -> np.ndarray:
        return self.g * z_rel + self.q * z_rel ** 2 + self.uniform_detuning(t)

    def to_dict(self) -> dict[str, Any]:
        return {
            'name': self.name,
            't_start': self.t_start,
            'duration': self.duration,
            'omega_re': complex(self.omega).real,
            'omega_im': complex(self.omega).imag,
            'delta': self.delta,
            'g': self.g,
            'q': self.q,
            'chirp': self.chirp.to_dict(),
            'bias': self.bias,
            'imprint_k': self.imprint_k,
            'imprint_q': self.imprint_q,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> StagePlan:
        return StagePlan(
            name=data['name'],
            t_start=float(data['t_start']),
            duration=float(data['duration']),
            omega=complex(float(data.get('omega_re', 0.0)), float(data.get('omega_im', 0.0))),
            delta=float(data.get('delta', 0.0)),
            g=float(data.get('g', 0.0)),
            q=float(data.get('q', 0.0)),
            chirp=Ramp.from_dict(data.get('chirp', {})),
            bias=float(data.get('bias', 0.0)),
            imprint_k=float(data.get('imprint_k', 0.0)),
            imprint_q=float(data.get('imprint_q', 0.0)),
        )


@dataclass(frozen=True)
class ControlSchedule:
    """
    Contiguous stages. Two-photon detuning is referenced to the ensemble
    centre: delta_2 = g (z - z_ref) + q (z - z_ref)^2 + chirp(t) + bias.
    """
    stages: tuple[StagePlan, ...]
    z_reference: float = 0.5
    warnings: tuple[str, ...] = ()
    info: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.stages:
            raise InvalidParameterError('a schedule needs at least one stage')
        for before, after in zip(self.stages, self.stages[1:]):
            if abs(before.t_end - after.t_start) > 1e-9 * max(1.0, abs(after.t_start)):
                raise InvalidParameterError(
                    f'stages {before.name} and {after.name} are not contiguous '
                    f'({before.t_end} != {after.t_start})'
                )
        object.__setattr__(self, '_starts', [s.t_start for s in self.stages])

    @property
    def t_start(self) -> float:
        return self.stages[0].t_start

    @property
    def t_end(self) -> float:
        return self.stages[-1].t_end

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def stage_at(self, t: float) -> StagePlan:
        index = bisect.bisect_right(self._starts, t) - 1
        return self.stages[min(max(index, 0), len(self.stages) - 1)]

    def stage(self, name: str) -> StagePlan:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise KeyError(name)

    def omega(self, t: float) -> complex:
        return self.stage_at(t).omega

    def delta(self, t: float) -> float:
        return self.stage_at(t).delta

    def g(self, t: float) -> float:
        return self.stage_at(t).g

    def q(self, t: float) -> float:
        return self.stage_at(t).q

    def chirp(self, t: float) -> float:
        return self.stage_at(t).chirp(t)

    def two_photon_detuning(self, z: np.ndarray, t: float) -> np.ndarray:
        return self.stage_at(t).two_photon_detuning(np.asarray(z) - self.z_reference, t)

    def to_dict(self) -> dict[str, Any]:
        return {
            'z_reference': self.z_reference,
            'stages': [s.to_dict() for s in self.stages],
            'warnings': list(self.warnings),
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> ControlSchedule:
        return ControlSchedule(
            stages=tuple(StagePlan.from_dict(s) for s in data['stages']),
            z_reference=float(data.get('z_reference', 0.5)),
            warnings=tuple(data.get('warnings', ())),
        )


@dataclass(frozen=True, eq=False)
class FieldState:
    S: np.ndarray
    P: np.ndarray
    E: np.ndarray

    @staticmethod
    def zeros(grid: SpaceGrid) -> FieldState:
        return FieldState(
            np.zeros(grid.n_z, dtype=np.complex128),
            np.zeros(grid.n_z, dtype=np.complex128),
            np.zeros(grid.n_z, dtype=np.complex128),
        )


@dataclass(frozen=True, eq=False)
class EnergyLedger:
    times: np.ndarray
    input_energy: float
    output_energy: float
    # Cumulative, sampled at `times`.
    stored_energy: np.ndarray
    decayed_energy: np.ndarray

    def imbalance(self) -> float:
        return self.input_energy - self.output_energy \
            - float(self.stored_energy[-1]) - float(self.decayed_energy[-1])

    def relative_imbalance(self) -> float:
        if self.input_energy == 0:
            return abs(self.imbalance())
        return abs(self.imbalance()) / self.input_energy

    def to_dict(self) -> dict[str, float]:
        return {
            'input_energy': self.input_energy,
            'output_energy': self.output_energy,
            'stored_energy': float(self.stored_energy[-1]),
            'decayed_energy': float(self.decayed_energy[-1]),
            'relative_imbalance': self.relative_imbalance(),
        }


@dataclass(frozen=True, eq=False)
class SimulationRecord:
    e_out: PulseSignal
    snapshots: list[tuple[float, FieldState]]
    ledger: EnergyLedger
    schedule: ControlSchedule
    substeps: int

    def snapshot_at(self, t: float) -> FieldState:
        """Snapshot recorded closest to t."""
        if not self.snapshots:
            raise KeyError('no snapshots recorded')
        return min(self.snapshots, key=lambda item: abs(item[0] - t))[1]

    def window(self, stage_name: str) -> PulseSignal:
        stage = self.schedule.stage(stage_name)
        return self.e_out.window(stage.t_start, stage.t_end)


def integrate_field(P: np.ndarray, e_in: complex, d: float, dz: float) -> np.ndarray:
    """E(z) = e_in + i sqrt(d) * cumulative trapezoid of P from 0 to z."""
    E = np.empty_like(P, dtype=np.complex128)
    E[0] = 0.0
    np.cumsum(P[1:] + P[:-1], out=E[1:])
    E *= 0.5j * math.sqrt(d) * dz
    E += e_in
    return E


def _boundary(input: PulseSignal | None) -> Callable[[np.ndarray], np.ndarray]:
    """Cubic interpolation of the input envelope, zero outside its grid."""
    if input is None:
        return lambda t: np.zeros(np.shape(t), dtype=np.complex128)
    t = input.t
    spline_re = CubicSpline(t, input.amplitude.real)
    spline_im = CubicSpline(t, input.amplitude.imag)

    def evaluate(times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64)
        values = spline_re(times) + 1j * spline_im(times)
        inside = (times >= t[0] - 1e-12) & (times <= t[-1] + 1e-12)
        return np.where(inside, values, 0.0)

    return evaluate


class MaxwellBloch:
    """Right-hand side and RK4 step for one schedule, medium and grid."""

    def __init__(self, schedule: ControlSchedule, medium: MediumParams, grid: SpaceGrid):
        self.schedule = schedule
        self.medium = medium
        self.grid = grid
        self.z_rel = grid.z - schedule.z_reference
        self.sqrt_d = math.sqrt(medium.d)

    def coupling(self, stage: StagePlan, S: np.ndarray, P: np.ndarray,
                 e_in: complex) -> tuple[np.ndarray, np.ndarray]:
        E = integrate_field(P, e_in, self.medium.d, self.grid.dz)
        omega = stage.omega
        dS = 1j * np.conj(omega) * P
        dP = (1j * self.sqrt_d * self.medium.gamma) * E + 1j * omega * S
        return dS, dP

    def imprint(self, stage: StagePlan, S: np.ndarray) -> np.ndarray:
        if not (stage.imprint_k or stage.imprint_q):
            return S
        return S * np.exp(-1j * (stage.imprint_k * self.z_rel + stage.imprint_q * self.z_rel ** 2))

    def _spin_rate(self, stage: StagePlan, t: float) -> np.ndarray:
        return self.medium.gamma_S + 1j * stage.two_photon_detuning(self.z_rel, t)

    def step(self, S: np.ndarray, P: np.ndarray, t: float, h: float,
             e_in: tuple[complex, complex, complex]) -> tuple[np.ndarray, np.ndarray]:
        """
        One integrating-factor RK4 step over [t, t + h].

        `e_in` holds the boundary input at t, t + h/2 and t + h. The stage is
        taken at the step midpoint; stage boundaries must fall on step edges.
        The detuning is at most linear in t within a stage, so the
        half-interval integrals of the rates are exact at their midpoints.
        """
        stage = self.schedule.stage_at(t + 0.5 * h)
        half = 0.5 * h
        # Propagators over the first half, the second half and the full step.
        s1 = np.exp(-half * self._spin_rate(stage, t + 0.25 * h))
        s2 = np.exp(-half * self._spin_rate(stage, t + 0.75 * h))
        sf = s1 * s2
        p1 = cmath.exp(-half * (self.medium.gamma + 1j * stage.delta))
        pf = p1 * p1

        k1S, k1P = self.coupling(stage, S, P, e_in[0])
        k2S, k2P = self.coupling(stage, s1 * (S + half * k1S), p1 * (P + half * k1P), e_in[1])
        k3S, k3P = self.coupling(stage, s1 * S + half * k2S, p1 * P + half * k2P, e_in[1])
        k4S, k4P = self.coupling(stage, sf * S + h * s2 * k3S, pf * P + h * p1 * k3P, e_in[2])

        S_new = sf * S + (h / 6.0) * (sf * k1S + 2.0 * s2 * (k2S + k3S) + k4S)
        P_new = pf * P + (h / 6.0) * (pf * k1P + 2.0 * p1 * (k2P + k3P) + k4P)
        return S_new, P_new


def step(state: FieldState, schedule: ControlSchedule, t: float, dt: float,
         medium: MediumParams, grid: SpaceGrid,
         e_in: Callable[[float], complex] | None = None) -> FieldState:
    """Advance `state` from t to t + dt with a single RK4 step."""
    boundary = e_in or (lambda _: 0j)
    system = MaxwellBloch(schedule, medium, grid)
    values = (complex(boundary(t)), complex(boundary(t + 0.5 * dt)), complex(boundary(t + dt)))
    S, P = system.step(state.S, state.P, t, dt, values)
    return FieldState(S, P, integrate_field(P, values[2], medium.d, grid.dz))


def required_substeps(schedule: ControlSchedule, medium: MediumParams, dt: float,
                      minimum: int = 1) -> int:
    omega_max = max(abs(s.omega) for s in schedule.stages)
    # The integrating factor leaves the forcing rotating at Delta inside P.
    delta_max = max(abs(s.delta) for s in schedule.stages)
    rate = max(medium.d * medium.gamma, omega_max, delta_max)
    return max(minimum, int(math.ceil(dt * rate / COUPLING_STEP_LIMIT)))


def _samples_between(t0: float, t1: float, dt: float) -> int:
    n = (t1 - t0) / dt
    rounded = round(n)
    if abs(n - rounded) > 1e-6:
        raise InvalidParameterError(
            f'stage boundary at {t1} is not on the dt={dt} sample grid',
            t=t1,
            dt=dt,
        )
    return int(rounded)


def run(
    input: PulseSignal | None,
    schedule: ControlSchedule,
    medium: MediumParams,
    grid: SpaceGrid,
    dt: float | None = None,
    substeps: int = 1,
    snapshot_times: list[float] | None = None,
    ledger_tolerance: float = LEDGER_TOLERANCE,
) -> SimulationRecord:
    """
    Integrate from S = P = 0 over the whole schedule.

    `e_out` is sampled at the input's dt (or `dt` when given); each sample
    interval is split into a fixed number of RK4 substeps, at least
    `substeps` and enough to resolve the coupling rates.
    Stage imprints are applied to S at the first sample of their stage,
    after the snapshot that closes the previous stage.
    """
    if dt is None:
        if input is None:
            raise InvalidParameterError('dt is required when running without an input signal')
        dt = input.grid.dt

    t0 = schedule.t_start
    boundaries = [_samples_between(t0, stage.t_end, dt) for stage in schedule.stages]
    n_intervals = boundaries[-1]
    n_sub = required_substeps(schedule, medium, dt, substeps)
    h = dt / n_sub
    logger.debug(
        'run: %d samples, %d substeps, stages %s',
        n_intervals + 1, n_sub, ', '.join(f'{s.name}[{s.duration:g}]' for s in schedule.stages),
    )

    boundary = _boundary(input)
    # Boundary input on the half-substep lattice.
    e_half = boundary(t0 + 0.5 * h * np.arange(2 * n_intervals * n_sub + 1))
    e_samples = e_half[::2 * n_sub]

    system = MaxwellBloch(schedule, medium, grid)
    dz = grid.dz
    gamma, gamma_S = medium.gamma, medium.gamma_S
    S = np.zeros(grid.n_z, dtype=np.complex128)
    P = np.zeros(grid.n_z, dtype=np.complex128)

    e_out = np.empty(n_intervals + 1, dtype=np.complex128)
    stored = np.empty(n_intervals + 1)
    decayed = np.empty(n_intervals + 1)
    e_out[0] = e_samples[0]
    stored[0] = 0.0
    decayed[0] = 0.0

    pending = sorted(snapshot_times if snapshot_times is not None else [s.t_end for s in schedule.stages])
    snapshots: list[tuple[float, FieldState]] = []
    stage_ends = set(boundaries)
    entries = {start: stage for start, stage in zip([0, *boundaries[:-1]], schedule.stages)
               if stage.imprint_k or stage.imprint_q}

    def decay_rate(S: np.ndarray, P: np.ndarray) -> float:
        density = 2.0 * gamma * np.abs(P) ** 2
        if gamma_S:
            density = density + 2.0 * gamma_S * np.abs(S) ** 2
        return float(np.trapezoid(density, dx=dz)) / gamma

    def take_snapshots(k: int, E: np.ndarray):
        t_k = t0 + k * dt
        while pending and pending[0] <= t_k + 0.5 * dt:
            pending.pop(0)
            snapshots.append((t_k, FieldState(S.copy(), P.copy(), E.copy())))

    take_snapshots(0, integrate_field(P, e_samples[0], medium.d, dz))

    rate = 0.0
    accumulated = 0.0
    for k in range(n_intervals):
        if k in entries:
            S = system.imprint(entries[k], S)
        for s in range(n_sub):
            i = k * n_sub + s
            t = t0 + i * h
            S, P = system.step(S, P, t, h, (e_half[2 * i], e_half[2 * i + 1], e_half[2 * i + 2]))
            new_rate = decay_rate(S, P)
            accumulated += 0.5 * h * (rate + new_rate)
            rate = new_rate

        E = integrate_field(P, e_samples[k + 1], medium.d, dz)
        e_out[k + 1] = E[-1]
        stored[k + 1] = (np.trapezoid(np.abs(S) ** 2, dx=dz) + np.trapezoid(np.abs(P) ** 2, dx=dz)) / gamma
        decayed[k + 1] = accumulated
        take_snapshots(k + 1, E)

        if not np.isfinite(e_out[k + 1]) or not np.isfinite(stored[k + 1]):
            raise LedgerImbalanceError(
                f'integration became non-finite at t={t0 + (k + 1) * dt:.6g} us; '
                f'{n_sub} substeps of {h:.3g} us do not resolve the coupling',
                t=t0 + (k + 1) * dt,
                substeps=n_sub,
            )
        if k + 1 in stage_ends:
            _check_partial_ledger(e_samples[:k + 2], e_out[:k + 2], stored[k + 1],
                                  decayed[k + 1], dt, ledger_tolerance, t0 + (k + 1) * dt)

    times = t0 + dt * np.arange(n_intervals + 1)
    ledger = EnergyLedger(
        times=times,
        input_energy=float(np.trapezoid(np.abs(e_samples) ** 2, dx=dt)),
        output_energy=float(np.trapezoid(np.abs(e_out) ** 2, dx=dt)),
        stored_energy=stored,
        decayed_energy=decayed,
    )
    logger.debug('ledger %s', ledger.to_dict())
    return SimulationRecord(
        e_out=PulseSignal(TimeGrid(t0, dt, n_intervals + 1), e_out),
        snapshots=snapshots,
        ledger=ledger,
        schedule=schedule,
        substeps=n_sub,
    )


def _check_partial_ledger(e_in: np.ndarray, e_out: np.ndarray, stored: float, decayed: float,
                          dt: float, tolerance: float, t: float):
    input_energy = float(np.trapezoid(np.abs(e_in) ** 2, dx=dt))
    if input_energy == 0:
        return
    output_energy = float(np.trapezoid(np.abs(e_out) ** 2, dx=dt))
    imbalance = input_energy - output_energy - stored - decayed
    if abs(imbalance) > tolerance * input_energy:
        raise LedgerImbalanceError(
            f'energy ledger off by {imbalance / input_energy:.3e} of the input at t={t:.6g} us',
            t=t,
            input_energy=input_energy,
            output_energy=output_energy,
            stored_energy=stored,
            decayed_energy=decayed,
        )
