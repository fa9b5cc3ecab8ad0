"""
Batch runs over the memory: eigenphase and fidelity/efficiency sweeps,
the Gaussian-pair showcase, efficiency scaling fits and a substep
convergence study.
"""
from __future__ import annotations

import cmath
import csv
import logging
import math
import time
import warnings
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal, cast

import numpy as np
from tqdm import tqdm

from errors import ChirpBoundWarning, InvalidParameterError, UndefinedEfficiencyError
from fielddump import FieldDump, write_signal_csv, write_signal_dump, write_wigner_csv, write_wigner_dump
from phasespace import (
    MetricSet,
    WignerMap,
    axis_difference,
    expected_eigenphase,
    lobe_axis_angle,
    wigner,
    wigner_spinwave,
    wrap_phase,
)
from protocols import (
    DEFAULT_OMEGA_GEM,
    PROTOCOLS,
    ProtocolSpec,
    TransformResult,
    build_frft_schedule,
    calibrate_chirps,
    calibrate_vg,
    default_pair,
    recall_time,
    schedule_for,
    showcase_spec,
    simulate_transform,
    theta_extra_for,
)
from signals import HGParams, PulseSignal, TimeGrid, hermite_functions, hg_mode
from solver import (
    DEFAULT_DT,
    ControlSchedule,
    MediumParams,
    SpaceGrid,
    required_substeps,
    run,
)

logger = logging.getLogger(__name__)

COLUMNS = (
    'protocol', 'theta_rad', 'n', 'm', 'efficiency', 'cond_fidelity',
    'eigenphase_rad', 'expected_phase_rad', 'status', 'wall_time_s',
)
FLOAT_FORMAT = '%.17g'
# Efficiency and fidelity above this flag a solver failure.
METRIC_CEILING = 1.02

ExecutorKind = Literal['process', 'thread']


@dataclass(frozen=True)
class SweepSpec:
    protocol: Literal['gem_eit', 'gem_gem', 'both'] = 'gem_eit'
    theta_list: tuple[float, ...] = (math.pi / 4,)
    n_list: tuple[int, ...] = (0, 1, 2)
    m: int = 10
    # When set, sweeps m over this list with n = m (efficiency scaling).
    m_list: tuple[int, ...] | None = None
    T_i: float = 10.0
    omega_gem: float = DEFAULT_OMEGA_GEM
    hold_duration: float | None = None
    calibrate_vg: bool = True
    calibrate_chirps: bool = False
    substeps: int = 1
    dt: float = DEFAULT_DT
    medium: MediumParams = field(default_factory=MediumParams)
    grid: SpaceGrid = field(default_factory=SpaceGrid)
    output_dir: Path = Path('results')

    def __post_init__(self):
        if self.protocol not in (*PROTOCOLS, 'both'):
            raise InvalidParameterError(f'unknown protocol {self.protocol!r}')
        # Angles outside a protocol's range become error rows, not a rejected sweep.
        for theta in self.theta_list:
            if not math.isfinite(theta):
                raise InvalidParameterError(f'sweep angle {theta} is not finite', theta=theta)
        if any(n < 0 for n in self.n_list):
            raise InvalidParameterError('HG indices must be non-negative')
        if self.m < 1 or (self.m_list is not None and min(self.m_list, default=1) < 1):
            raise InvalidParameterError('mode volumes must be positive')

    @property
    def protocols(self) -> tuple[str, ...]:
        return PROTOCOLS if self.protocol == 'both' else (self.protocol,)

    def combinations(self) -> list[tuple[str, float, int, int]]:
        """(protocol, theta, n, m) for every requested row."""
        if self.m_list is not None:
            return [(p, theta, m, m) for p in self.protocols for theta in self.theta_list for m in self.m_list]
        return [(p, theta, n, self.m) for p in self.protocols for theta in self.theta_list for n in self.n_list]

    def csv_path(self, name: str) -> Path:
        return self.output_dir / f'{name}.csv'


@dataclass(frozen=True)
class ResultRow:
    protocol: str
    theta_rad: float
    n: int
    m: int
    efficiency: float = math.nan
    cond_fidelity: float = math.nan
    eigenphase_rad: float = math.nan
    expected_phase_rad: float = math.nan
    status: str = 'ok'
    wall_time_s: float = 0.0

    @property
    def key(self) -> tuple[str, float, int, int]:
        return self.protocol, self.theta_rad, self.n, self.m

    @property
    def ok(self) -> bool:
        return self.status == 'ok'

    def to_csv(self) -> list[str]:
        return [
            self.protocol,
            FLOAT_FORMAT % self.theta_rad,
            str(self.n),
            str(self.m),
            FLOAT_FORMAT % self.efficiency,
            FLOAT_FORMAT % self.cond_fidelity,
            FLOAT_FORMAT % self.eigenphase_rad,
            FLOAT_FORMAT % self.expected_phase_rad,
            self.status,
            FLOAT_FORMAT % self.wall_time_s,
        ]

    @staticmethod
    def from_csv(record: dict[str, str]) -> ResultRow:
        return ResultRow(
            protocol=record['protocol'],
            theta_rad=float(record['theta_rad']),
            n=int(record['n']),
            m=int(record['m']),
            efficiency=float(record['efficiency']),
            cond_fidelity=float(record['cond_fidelity']),
            eigenphase_rad=float(record['eigenphase_rad']),
            expected_phase_rad=float(record['expected_phase_rad']),
            status=record['status'],
            wall_time_s=float(record['wall_time_s']),
        )


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def sorted(self) -> ResultTable:
        return ResultTable(sorted(self.rows, key=lambda row: (row.protocol, row.theta_rad, row.n, row.m)))

    def keys(self) -> set[tuple[str, float, int, int]]:
        return {row.key for row in self.rows}

    def select(self, protocol: str | None = None, n: int | None = None,
               theta: float | None = None, ok_only: bool = True) -> list[ResultRow]:
        return [
            row for row in self.rows
            if (protocol is None or row.protocol == protocol)
            and (n is None or row.n == n)
            and (theta is None or row.theta_rad == theta)
            and (not ok_only or row.ok)
        ]

    def write_csv(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as csv_file:
            writer = csv.writer(csv_file)
            writer.writerow(COLUMNS)
            for row in self.sorted().rows:
                writer.writerow(row.to_csv())

    @staticmethod
    def read_csv(path: Path) -> ResultTable:
        with open(path, newline='') as csv_file:
            return ResultTable([ResultRow.from_csv(record) for record in csv.DictReader(csv_file)])


@dataclass(frozen=True)
class GroupPrep:
    """Per (protocol, theta, m) state shared by that group's rows."""
    spec: ProtocolSpec | None
    omega_eit: float | None = None
    reference_phase: float = 0.0
    error: str | None = None


def _input_grid(spec: ProtocolSpec, dt: float) -> TimeGrid:
    return TimeGrid.covering(0.0, max(1, round(spec.T_i / dt)) * dt, dt)


def _hg_input(n: int, spec: ProtocolSpec, dt: float) -> PulseSignal:
    grid = _input_grid(spec, dt)
    return hg_mode(HGParams(n=n, sigma_t=spec.sigma_t, center=grid.midpoint, m=spec.m), grid)


def _schedule(protocol: str, spec: ProtocolSpec, sweep: SweepSpec,
              omega_eit: float | None) -> ControlSchedule:
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ChirpBoundWarning)
        return schedule_for(protocol, spec, sweep.medium, sweep.grid, sweep.dt,
                            omega_eit=omega_eit, hold_duration=sweep.hold_duration)


def _hg_phase(result: TransformResult, n: int) -> float:
    """Phase of the recalled output's overlap with HG_n at the output scale."""
    frft = result.frft
    # The recall window is filled edge to edge, so HG_n is not clipping-checked here.
    x = (result.output.t - frft.center_out) / frft.scale_out
    reference = hermite_functions(n, x)[n]
    return cmath.phase(np.sum(result.output.amplitude * reference))


def prepare_group(sweep: SweepSpec, protocol: str, theta: float, m: int) -> GroupPrep:
    spec = ProtocolSpec.for_mode_volume(
        m, sweep.T_i, theta_extra=theta_extra_for(protocol, theta), omega_gem=sweep.omega_gem,
    )
    omega_eit = None
    if protocol == 'gem_eit':
        T_f = max(1, round(recall_time(spec) / sweep.dt)) * sweep.dt
        target_vg = sweep.grid.L / T_f
        omega_eit = calibrate_vg(target_vg, sweep.medium, sweep.grid, sweep.dt) if sweep.calibrate_vg \
            else sweep.medium.eit_omega_for_delay(T_f)
    if sweep.calibrate_chirps:
        pulse = _hg_input(min(2, m), spec, sweep.dt)
        calibration = calibrate_chirps(spec, sweep.medium, sweep.grid, pulse, protocol,
                                       dt=sweep.dt, omega_eit=omega_eit)
        spec = replace(spec, chirp_scale_in=calibration.chirp_scale_in,
                       chirp_scale_out=calibration.chirp_scale_out)
    result = simulate_transform(_hg_input(0, spec, sweep.dt), _schedule(protocol, spec, sweep, omega_eit),
                                sweep.medium, sweep.grid, sweep.substeps)
    return GroupPrep(spec, omega_eit, _hg_phase(result, 0))


def run_row(sweep: SweepSpec, protocol: str, theta: float, n: int, m: int, prep: GroupPrep) -> ResultRow:
    """One sweep row; failures become a status instead of an exception."""
    started = time.perf_counter()
    if prep.error is not None:
        return ResultRow(protocol, theta, n, m, status=prep.error)
    spec = cast(ProtocolSpec, prep.spec)
    try:
        schedule = _schedule(protocol, spec, sweep, prep.omega_eit)
        result = simulate_transform(_hg_input(n, spec, sweep.dt), schedule, sweep.medium, sweep.grid,
                                    sweep.substeps)
    except Exception as e:
        logger.warning('row %s theta=%.6g n=%d m=%d failed: %s', protocol, theta, n, m, e)
        return ResultRow(protocol, theta, n, m, status=f'error:{type(e).__name__}',
                         wall_time_s=time.perf_counter() - started)

    alpha = schedule.info['alpha']
    eigenphase = wrap_phase(_hg_phase(result, n) - prep.reference_phase)
    expected = expected_eigenphase(n, alpha)
    status = 'ok'
    efficiency, fidelity = result.metrics.efficiency, result.metrics.conditional_fidelity
    if not (0 <= efficiency <= METRIC_CEILING and 0 <= fidelity <= METRIC_CEILING):
        logger.warning('row %s theta=%.6g n=%d m=%d out of range: efficiency %.4g, fidelity %.4g',
                       protocol, theta, n, m, efficiency, fidelity)
        status = 'error:MetricOutOfRange'
    return ResultRow(protocol, theta, n, m, efficiency, fidelity, eigenphase, expected, status,
                     time.perf_counter() - started)


def _prepare_worker(args: tuple[int, SweepSpec, tuple[str, float, int]]) -> tuple[int, GroupPrep]:
    index, sweep, (protocol, theta, m) = args
    try:
        return index, prepare_group(sweep, protocol, theta, m)
    except Exception as e:
        logger.warning('preparing %s theta=%.6g m=%d failed: %s', protocol, theta, m, e)
        return index, GroupPrep(None, error=f'error:{type(e).__name__}')


def _row_worker(args: tuple[int, SweepSpec, tuple[str, float, int, int], GroupPrep]) -> tuple[int, ResultRow]:
    index, sweep, (protocol, theta, n, m), prep = args
    return index, run_row(sweep, protocol, theta, n, m, prep)


def _executor(kind: ExecutorKind, workers: int) -> Executor:
    if kind == 'process':
        return ProcessPoolExecutor(max_workers=workers)
    if kind == 'thread':
        return ThreadPoolExecutor(max_workers=workers)
    raise InvalidParameterError(f'unknown executor {kind!r}')


def run_sweep(
    sweep: SweepSpec,
    name: str = 'sweep',
    *,
    workers: int = 1,
    executor: ExecutorKind = 'process',
    do_prints: bool = True,
) -> ResultTable:
    """
    Runs every (protocol, theta, n, m) combination of `sweep` that the CSV
    at sweep.csv_path(name) does not already hold, appending rows as they
    finish, then rewrites the file canonically sorted.
    """
    csv_path = sweep.csv_path(name)
    done = ResultTable.read_csv(csv_path) if csv_path.exists() else ResultTable()
    todo = [combo for combo in sweep.combinations() if combo not in done.keys()]
    if not todo:
        logger.info('%s: all %d rows present in %s', name, len(done.rows), csv_path)
        done.sorted().write_csv(csv_path)
        return done.sorted()
    logger.info('%s: %d rows to run, %d already in %s', name, len(todo), len(done.rows), csv_path)

    groups = sorted({(protocol, theta, m) for protocol, theta, _, m in todo})
    preps: list[GroupPrep | None] = [None] * len(groups)
    with _executor(executor, workers) as pool:
        futures = [pool.submit(_prepare_worker, (i, sweep, group)) for i, group in enumerate(groups)]
        progress_bar = tqdm(total=len(groups), desc=f'Preparing {name}', unit='group', disable=not do_prints)
        for future in as_completed(futures):
            index, prep = future.result()
            preps[index] = prep
            progress_bar.update(1)
            progress_bar.set_postfix(status='✓' if prep.error is None else '✗', name=str(groups[index]))
        progress_bar.close()
    prep_for = dict(zip(groups, cast(list[GroupPrep], preps)))

    csv_path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not csv_path.exists()
    rows: list[ResultRow | None] = [None] * len(todo)
    with open(csv_path, 'a', newline='') as csv_file, _executor(executor, workers) as pool:
        writer = csv.writer(csv_file)
        if new_file:
            writer.writerow(COLUMNS)
        futures = [
            pool.submit(_row_worker, (i, sweep, combo, prep_for[(combo[0], combo[1], combo[3])]))
            for i, combo in enumerate(todo)
        ]
        progress_bar = tqdm(total=len(todo), desc=f'Running {name}', unit='row', disable=not do_prints)
        for future in as_completed(futures):
            index, row = future.result()
            rows[index] = row
            writer.writerow(row.to_csv())
            csv_file.flush()
            progress_bar.update(1)
            progress_bar.set_postfix(status='✓' if row.ok else '✗',
                                     name=f'{row.protocol} θ={row.theta_rad:.4f} n={row.n} m={row.m}')
        progress_bar.close()

    table = ResultTable(done.rows + cast(list[ResultRow], rows)).sorted()
    table.write_csv(csv_path)
    failed = sum(not row.ok for row in table.rows)
    logger.info('%s: wrote %d rows (%d failed) to %s', name, len(table.rows), failed, csv_path)
    return table


def run_eigenphase_sweep(sweep: SweepSpec, **kwargs: Any) -> ResultTable:
    return run_sweep(sweep, 'eigenphase', **kwargs)


def run_fidelity_efficiency_sweep(sweep: SweepSpec, **kwargs: Any) -> ResultTable:
    name = 'efficiency_scaling' if sweep.m_list is not None else 'fidelity_efficiency'
    return run_sweep(sweep, name, **kwargs)


def eigenphase_slope(table: ResultTable, protocol: str, theta: float) -> float:
    """Least-squares slope of unwrapped eigenphase against n, through the n = 0 reference."""
    rows = sorted(table.select(protocol=protocol, theta=theta), key=lambda row: row.n)
    if len(rows) < 2:
        raise InvalidParameterError('need at least two modes to fit an eigenphase slope')
    n = np.array([row.n for row in rows], dtype=np.float64)
    phase = np.unwrap(np.array([row.eigenphase_rad for row in rows]))
    slope, _ = np.polyfit(n, phase, 1)
    return float(slope)


@dataclass(frozen=True)
class ScalingFit:
    inverse_c: float
    inverse_rss: float
    exponential_c: float
    exponential_a: float
    exponential_rss: float

    @property
    def preferred(self) -> str:
        return 'inverse' if self.inverse_rss < self.exponential_rss else 'exponential'

    def to_dict(self) -> dict[str, float | str]:
        return {
            'inverse_c': self.inverse_c,
            'inverse_rss': self.inverse_rss,
            'exponential_c': self.exponential_c,
            'exponential_a': self.exponential_a,
            'exponential_rss': self.exponential_rss,
            'preferred': self.preferred,
        }


def fit_efficiency_scaling(m_values: list[int] | np.ndarray, efficiencies: list[float] | np.ndarray) -> ScalingFit:
    """
    Least squares on log efficiency for eta = c / m and eta = c exp(-a sqrt(m)).
    """
    m = np.asarray(m_values, dtype=np.float64)
    eta = np.asarray(efficiencies, dtype=np.float64)
    if len(m) < 3 or len(m) != len(eta):
        raise InvalidParameterError('scaling fits need at least three (m, efficiency) pairs')
    if np.any(eta <= 0):
        raise UndefinedEfficiencyError('efficiencies must be positive to fit on a log scale')
    log_eta = np.log(eta)

    log_c = float(np.mean(log_eta + np.log(m)))
    inverse_rss = float(np.sum((log_eta - (log_c - np.log(m))) ** 2))

    design = np.column_stack([np.ones_like(m), -np.sqrt(m)])
    (exp_log_c, a), *_ = np.linalg.lstsq(design, log_eta, rcond=None)
    exponential_rss = float(np.sum((log_eta - design @ np.array([exp_log_c, a])) ** 2))

    fit = ScalingFit(math.exp(log_c), inverse_rss, math.exp(float(exp_log_c)), float(a), exponential_rss)
    logger.info('efficiency scaling fit: %s', fit.to_dict())
    return fit


def scaling_fits(table: ResultTable) -> dict[str, ScalingFit]:
    fits = {}
    for protocol in sorted({row.protocol for row in table.rows}):
        rows = sorted((row for row in table.select(protocol=protocol) if row.n == row.m), key=lambda row: row.m)
        fits[protocol] = fit_efficiency_scaling([row.m for row in rows], [row.efficiency for row in rows])
    return fits


@dataclass(frozen=True, eq=False)
class ShowcaseResult:
    alpha: float
    transform: TransformResult
    input_wigner: WignerMap
    output_wigner: WignerMap
    spinwave_wigner: WignerMap
    spinwave: np.ndarray
    dz: float
    lobe_angle: float
    angle_error: float
    intensity_l1: float

    @property
    def metrics(self) -> MetricSet:
        return self.transform.metrics

    def summary(self) -> dict[str, float]:
        return {
            'alpha': self.alpha,
            'lobe_angle': self.lobe_angle,
            'angle_error': self.angle_error,
            'intensity_l1': self.intensity_l1,
            'stored_energy': float(np.sum(np.abs(self.spinwave) ** 2) * self.dz),
            **self.metrics.to_dict(),
        }


def intensity_l1(output: PulseSignal, target: PulseSignal) -> float:
    """L1 distance between unit-area intensity profiles, target resampled onto the output grid."""
    a = output.intensity
    b = target.resample(output.grid).intensity
    if a.sum() == 0 or b.sum() == 0:
        raise UndefinedEfficiencyError('cannot normalise an empty intensity profile')
    return float(np.sum(np.abs(a / a.sum() - b / b.sum())))


def run_showcase(
    theta_total: float,
    input: PulseSignal | None = None,
    medium: MediumParams | None = None,
    grid: SpaceGrid | None = None,
    T_i: float = 10.0,
    omega_eit: float | None = None,
    output_dir: Path | None = None,
    workers: int = 1,
    formats: tuple[str, ...] = ('dump', 'csv'),
) -> ShowcaseResult:
    """
    Rotate a Gaussian pulse pair by theta_total through GEM-EIT and collect
    input, spinwave and output Wigner maps.
    """
    medium = medium or MediumParams()
    grid = grid or SpaceGrid()
    input = input if input is not None else default_pair(T_i)
    spec = showcase_spec(theta_total, input, T_i)
    dt = input.grid.dt
    schedule = build_frft_schedule(spec, medium, grid, dt, omega_eit=omega_eit)
    transform = simulate_transform(input, schedule, medium, grid)

    frft = transform.frft
    input_map = wigner(input, workers=workers, band_limit=True)
    output_map = wigner(transform.output, workers=workers, band_limit=True)
    stored = transform.record.snapshot_at(schedule.stage('gem_store').t_end)
    spin_map = wigner_spinwave(stored.S, dz=grid.dz, workers=workers)

    angle = lobe_axis_angle(output_map, frft.center_out, frft.scale_out)
    result = ShowcaseResult(
        alpha=frft.alpha,
        transform=transform,
        input_wigner=input_map,
        output_wigner=output_map,
        spinwave_wigner=spin_map,
        spinwave=stored.S,
        dz=grid.dz,
        lobe_angle=angle,
        angle_error=axis_difference(angle, frft.alpha),
        intensity_l1=intensity_l1(transform.output, transform.target),
    )
    logger.info('showcase: %s', result.summary())
    if output_dir is not None:
        write_showcase(result, input, output_dir, formats)
    return result


def write_showcase(result: ShowcaseResult, input: PulseSignal, output_dir: Path,
                   formats: tuple[str, ...] = ('dump', 'csv')):
    output_dir.mkdir(parents=True, exist_ok=True)
    signals = {'input': input, 'output': result.transform.output, 'target': result.transform.target}
    maps = {'input': result.input_wigner, 'output': result.output_wigner, 'spinwave': result.spinwave_wigner}
    if 'dump' in formats:
        for name, signal in signals.items():
            write_signal_dump(output_dir / f'{name}_signal.gefd', signal)
        for name, wmap in maps.items():
            write_wigner_dump(output_dir / f'{name}_wigner.gefd', wmap)
        FieldDump.from_spinwave(result.spinwave, 0.0, result.dz).write(output_dir / 'spinwave.gefd')
    if 'csv' in formats:
        for name, signal in signals.items():
            write_signal_csv(output_dir / f'{name}_signal.csv', signal)
        for name, wmap in maps.items():
            write_wigner_csv(output_dir / f'{name}_wigner.csv', wmap)
    if 'svg' in formats:
        from plotting import plot_intensities, plot_wigner

        for name, wmap in maps.items():
            plot_wigner(wmap, output_dir / f'{name}_wigner.svg', title=name)
        plot_intensities(signals, output_dir / 'intensity.svg')
    logger.info('showcase artifacts written to %s', output_dir)


@dataclass(frozen=True)
class ConvergenceReport:
    substeps: tuple[int, int, int]
    differences: tuple[float, float]

    @property
    def ratio(self) -> float:
        coarse, fine = self.differences
        return coarse / fine if fine > 0 else math.inf

    def to_dict(self) -> dict[str, Any]:
        return {'substeps': list(self.substeps), 'differences': list(self.differences), 'ratio': self.ratio}


def storage_schedule(spec: ProtocolSpec, medium: MediumParams, dt: float) -> ControlSchedule:
    """A lone gem_store stage as used by build_frft_schedule."""
    full = build_frft_schedule(spec, medium, dt=dt, omega_eit=medium.eit_omega_for_delay(spec.T_i))
    return ControlSchedule((full.stage('gem_store'),), info=full.info)


def convergence_study(
    spec: ProtocolSpec,
    medium: MediumParams,
    grid: SpaceGrid,
    dt: float = DEFAULT_DT,
    substeps: int = 1,
) -> ConvergenceReport:
    """
    Richardson ratio |u_s - u_2s| / |u_2s - u_4s| for a GEM storage run,
    where u is the transmitted field together with the stored spinwave.
    A fourth-order scheme gives a ratio near 16.
    """
    schedule = storage_schedule(spec, medium, dt)
    base = max(substeps, required_substeps(schedule, medium, dt))
    counts = (base, 2 * base, 4 * base)
    pulse = _hg_input(min(2, spec.m), spec, dt)
    solutions = []
    for count in counts:
        record = run(pulse, schedule, medium, grid, substeps=count)
        final = record.snapshot_at(schedule.t_end)
        solutions.append(np.concatenate([record.e_out.amplitude * math.sqrt(dt), final.S * math.sqrt(grid.dz)]))
        logger.info('convergence: %d substeps done', count)
    coarse = float(np.linalg.norm(solutions[0] - solutions[1]))
    fine = float(np.linalg.norm(solutions[1] - solutions[2]))
    report = ConvergenceReport(counts, (coarse, fine))
    logger.info('convergence: %s', report.to_dict())
    return report
