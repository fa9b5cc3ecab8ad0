#!/usr/bin/env python3

import argparse
import cmath
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from config import ConfigDoc, default_threads, load_config, parse_angle
from errors import ChirpBoundWarning, ConfigError, error_payload, exit_code_for
from experiments import (
    SweepSpec,
    run_eigenphase_sweep,
    run_fidelity_efficiency_sweep,
    run_showcase,
    scaling_fits,
    write_showcase,
)
from fielddump import read_signal_dump, write_signal_csv, write_signal_dump, write_wigner_csv
from phasespace import FrftSpec, frft_oracle, wigner
from protocols import (
    ProtocolSpec,
    calibrate_chirps,
    calibrate_vg,
    recall_time,
    schedule_for,
    simulate_transform,
    total_rotation,
    tune_omega_gem,
)
from signals import HGParams, PulseSignal, TimeGrid, energy_extent, gaussian_pair, hg_mode, spectral_extent

logger = logging.getLogger('gemfrft')

INTERRUPTED = 130


def configure_logging(level: str, log_file: Path | None):
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s [%(levelname)s] %(message)s',
        handlers=handlers,
        force=True,
    )
    logging.captureWarnings(True)


def storage_grid(config: ConfigDoc) -> TimeGrid:
    dt = config.grid.dt
    return TimeGrid.covering(0.0, max(1, round(config.protocol.T_i / dt)) * dt, dt)


def build_input(config: ConfigDoc, spec: ProtocolSpec) -> PulseSignal:
    signal = config.signal
    if signal.kind == 'dump':
        return read_signal_dump(signal.dump)
    grid = storage_grid(config)
    if signal.kind == 'gaussian_pair':
        return gaussian_pair(signal.separation, signal.sigma_t, grid)
    return hg_mode(HGParams(n=signal.n, sigma_t=spec.sigma_t, center=grid.midpoint, m=spec.m), grid)


def fit_spec_to_input(config: ConfigDoc, spec: ProtocolSpec, input: PulseSignal) -> ProtocolSpec:
    """Measure W_i and the fill factor from a signal that is not a mode-volume HG mode."""
    if config.signal.kind == 'hg' or config.protocol.W_i is not None:
        return spec
    lo, hi = energy_extent(input)
    return replace(spec, W_i=spectral_extent(input), fill_factor=min((hi - lo) / spec.T_i, 1.0))


def cmd_simulate(config: ConfigDoc, threads: int) -> int:
    medium = config.medium.to_medium()
    grid = config.grid.to_space_grid()
    protocol = config.protocol
    spec = protocol.to_spec()
    input = build_input(config, spec)
    spec = fit_spec_to_input(config, spec, input)
    output_dir = config.output.directory
    formats = tuple(config.output.formats)

    if config.signal.kind == 'gaussian_pair' and protocol.name == 'gem_eit':
        result = run_showcase(total_rotation(spec), input, medium, grid, spec.T_i,
                              omega_eit=protocol.omega_eit, workers=threads)
        write_showcase(result, input, output_dir, formats)
        write_signal_dump(output_dir / 'e_out.gefd', result.transform.record.e_out)
        write_signal_dump(output_dir / 'output.gefd', result.transform.output)
        print(json.dumps(result.summary()))
        return 0

    schedule = schedule_for(protocol.name, spec, medium, grid, config.grid.dt, protocol.omega_eit,
                            protocol.hold_duration, protocol.dispersion_strength)
    transform = simulate_transform(input, schedule, medium, grid, config.grid.substeps)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_signal_dump(output_dir / 'e_out.gefd', transform.record.e_out)
    write_signal_dump(output_dir / 'output.gefd', transform.output)
    output_map = wigner(transform.output, workers=threads, band_limit=True) \
        if {'csv', 'svg'} & set(formats) else None
    if 'csv' in formats:
        write_signal_csv(output_dir / 'output_signal.csv', transform.output)
        write_signal_csv(output_dir / 'target_signal.csv', transform.target)
        write_wigner_csv(output_dir / 'output_wigner.csv', output_map)
    if 'svg' in formats:
        from plotting import plot_intensities, plot_wigner

        plot_intensities({'input': input, 'output': transform.output, 'target': transform.target},
                         output_dir / 'intensity.svg')
        plot_wigner(output_map, output_dir / 'output_wigner.svg', 'output')
    summary = {
        'protocol': protocol.name,
        'alpha': transform.frft.alpha,
        **transform.metrics.to_dict(),
        'ledger_relative_imbalance': transform.record.ledger.relative_imbalance(),
        'warnings': list(schedule.warnings),
    }
    print(json.dumps(summary))
    return 0


def sweep_spec(config: ConfigDoc) -> SweepSpec:
    sweep = config.sweep
    return SweepSpec(
        protocol=sweep.protocol,
        theta_list=tuple(sweep.theta_list),
        n_list=tuple(sweep.n_list),
        m=sweep.m,
        m_list=None if sweep.m_list is None else tuple(sweep.m_list),
        T_i=config.protocol.T_i,
        omega_gem=config.protocol.omega_gem,
        hold_duration=config.protocol.hold_duration,
        calibrate_vg=sweep.calibrate_vg,
        calibrate_chirps=sweep.calibrate_chirps,
        substeps=config.grid.substeps,
        dt=config.grid.dt,
        medium=config.medium.to_medium(),
        grid=config.grid.to_space_grid(),
        output_dir=config.output.directory,
    )


def cmd_sweep(config: ConfigDoc, threads: int) -> int:
    spec = sweep_spec(config)
    kwargs = {'workers': threads, 'executor': config.sweep.executor}
    if config.sweep.mode == 'eigenphase':
        table = run_eigenphase_sweep(spec, **kwargs)
    else:
        table = run_fidelity_efficiency_sweep(spec, **kwargs)

    failed = [row for row in table.rows if not row.ok]
    summary: dict = {'rows': len(table.rows), 'failed': len(failed)}
    if spec.m_list is not None and len(spec.m_list) >= 3:
        try:
            summary['scaling'] = {p: fit.to_dict() for p, fit in scaling_fits(table).items()}
        except Exception as e:
            logger.warning('scaling fit skipped: %s', e)
    if 'svg' in config.output.formats:
        from plotting import plot_table

        for column in ('efficiency', 'cond_fidelity', 'eigenphase_rad'):
            plot_table(table, column, spec.output_dir / f'{config.sweep.mode}_{column}.svg')
    print(json.dumps(summary))
    return 0


def cmd_calibrate(config: ConfigDoc, threads: int) -> int:
    medium = config.medium.to_medium()
    grid = config.grid.to_space_grid()
    dt = config.grid.dt
    protocol = config.protocol
    spec = protocol.to_spec()
    result: dict = {'protocol': protocol.name}

    omega_eit = None
    if protocol.name == 'gem_eit':
        T_f = max(1, round(recall_time(spec) / dt)) * dt
        target_vg = grid.L / T_f
        omega_eit = calibrate_vg(target_vg, medium, grid, dt)
        result.update(target_group_velocity=target_vg, omega_eit=omega_eit,
                      slow_light_estimate=medium.eit_omega_for_delay(T_f))

    if config.calibration.chirps:
        pulse = build_input(config, spec)
        spec = fit_spec_to_input(config, spec, pulse)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', ChirpBoundWarning)
            chirps = calibrate_chirps(spec, medium, grid, pulse, protocol.name, dt=dt, omega_eit=omega_eit,
                                      sweeps=config.calibration.sweeps,
                                      iterations=config.calibration.iterations, workers=threads)
        result['chirps'] = chirps.to_dict()

    if config.calibration.omega_gem_candidates:
        best, table = tune_omega_gem(config.calibration.omega_gem_candidates, medium, grid, spec.T_i, dt)
        result['omega_gem'] = {'best': best, 'candidates': [list(item) for item in table]}

    path = config.output.directory / 'calibration.json'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2) + '\n')
    logger.info('calibration written to %s', path)
    print(json.dumps(result))
    return 0


def cmd_oracle(input_path: Path, alpha: float, output_path: Path, t_scale: float,
               method: str) -> int:
    signal = read_signal_dump(input_path)
    rotated = frft_oracle(signal, FrftSpec(alpha=alpha, t_scale_in=t_scale), method=method)
    write_signal_dump(output_path, rotated)
    overlap = complex(np.sum(rotated.amplitude * np.conj(signal.amplitude)) * signal.grid.dt)
    print(json.dumps({
        'alpha': alpha,
        'phase': cmath.phase(overlap) if overlap != 0 else 0.0,
        'overlap_magnitude': abs(overlap) / signal.energy() if signal.energy() else 0.0,
        'output': str(output_path),
    }))
    return 0


def main(argv: list[str] | None = None) -> int:
    load_dotenv(override=True)
    parser = argparse.ArgumentParser(
        description='Simulate fractional Fourier transforms in a GEM storage / EIT recall memory.'
    )
    parser.add_argument(
        '--config',
        type=Path,
        default=None,
        help='TOML configuration file (default: built-in defaults)'
    )
    parser.add_argument(
        '--set',
        dest='overrides',
        action='append',
        default=[],
        metavar='SECTION.KEY=VALUE',
        help='Override one configuration value. May be repeated.'
    )
    parser.add_argument(
        '--log-level',
        default='INFO',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Logging level. (default: INFO)'
    )
    parser.add_argument(
        '--log-file',
        type=Path,
        default=None,
        help='Also write the log to this file.'
    )
    parser.add_argument(
        '--threads',
        type=int,
        default=None,
        help='Worker count. (default: $GEMFRFT_THREADS, else the CPU count)'
    )
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('simulate', help='Run one protocol and write its output field and metrics')
    commands.add_parser('sweep', help='Run the configured sweep, resuming an existing table')
    commands.add_parser('calibrate', help='Calibrate the EIT Rabi frequency and chirp scales')
    oracle = commands.add_parser('oracle', help='Apply the analytic FrFT to a signal dump')
    oracle.add_argument('input', type=Path, help='Signal dump to transform')
    oracle.add_argument('--alpha', required=True, help="FrFT order in rad, e.g. 0.785 or 'pi/4'")
    oracle.add_argument('--output', type=Path, required=True, help='Where to write the transformed dump')
    oracle.add_argument('--t-scale', type=float, default=1.0, help='Time scale in us. (default: 1)')
    oracle.add_argument('--method', choices=['chirp', 'quadrature'], default='chirp',
                        help='Evaluation method. (default: chirp)')

    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_file)

    try:
        threads = args.threads if args.threads is not None else default_threads()
        if args.command == 'oracle':
            try:
                alpha = parse_angle(args.alpha)
            except ValueError as e:
                raise ConfigError(str(e), key='alpha') from e
            return cmd_oracle(args.input, alpha, args.output, args.t_scale, args.method)
        config = load_config(args.config, args.overrides)
        if args.command == 'simulate':
            return cmd_simulate(config, threads)
        if args.command == 'sweep':
            return cmd_sweep(config, threads)
        return cmd_calibrate(config, threads)
    except KeyboardInterrupt:
        print('\n\nExiting...', file=sys.stderr)
        print('When running again, rows already in the results table are skipped.', file=sys.stderr)
        return INTERRUPTED
    except Exception as e:
        payload = error_payload(e)
        code = exit_code_for(e)
        if code == 1:
            logger.exception('unexpected failure')
        print(json.dumps(payload, default=str), file=sys.stderr)
        return code


if __name__ == '__main__':
    sys.exit(main())
