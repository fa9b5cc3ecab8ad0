import math
import warnings
from dataclasses import replace
from types import SimpleNamespace

import pytest

import protocols
from errors import CalibrationError, ChirpBoundWarning, InvalidParameterError
from experiments import _hg_input, _hg_phase
from phasespace import wrap_phase
from protocols import (
    GEM_DETUNING,
    ProtocolSpec,
    build_frft_schedule,
    build_ft_schedule,
    build_gemgem_schedule,
    calibrate_chirps,
    calibrate_vg,
    default_dispersion_strength,
    eit_chirp_span,
    frft_target_spec,
    gemgem_chirp_rates,
    input_chirp_rate,
    measure_group_delay,
    output_chirp_rate,
    recall_time,
    schedule_for,
    simulate_transform,
    storage_bandwidth,
    stored_phase,
    theta_extra_for,
    total_rotation,
)
from solver import MediumParams, SpaceGrid

OMEGA_EIT = 30.0


def quiet_schedule(spec: ProtocolSpec, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ChirpBoundWarning)
        return build_frft_schedule(spec, MediumParams(), omega_eit=OMEGA_EIT, **kwargs)


def test_quarter_rotation_formulas():
    spec = ProtocolSpec(theta_extra=math.pi / 4, W_i=2.0, T_i=10.0)
    assert storage_bandwidth(spec) == pytest.approx(4.0)
    assert recall_time(spec) == pytest.approx(10.0 * math.sqrt(2.0))
    assert input_chirp_rate(spec) == pytest.approx(-2.0 * math.pi * 0.2)
    assert output_chirp_rate(spec) == pytest.approx(input_chirp_rate(spec))


def test_third_rotation_formulas():
    spec = ProtocolSpec(theta_extra=math.pi / 3, W_i=2.0, T_i=10.0)
    assert storage_bandwidth(spec) == pytest.approx(5.464, abs=1e-3)
    assert recall_time(spec) == pytest.approx(13.66, abs=1e-2)


def test_theta_extra_limits():
    with pytest.raises(InvalidParameterError):
        ProtocolSpec(theta_extra=math.pi / 2)
    with pytest.raises(InvalidParameterError):
        ProtocolSpec(theta_extra=-math.pi / 2 + 1e-4)
    ProtocolSpec(theta_extra=math.pi / 2 - 2e-3)


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        ProtocolSpec(ft_sign=0)
    with pytest.raises(InvalidParameterError):
        ProtocolSpec(W_i=-1.0)
    with pytest.raises(InvalidParameterError):
        ProtocolSpec(fill_factor=1.5)


def test_spec_dict_round_trip():
    spec = ProtocolSpec.for_mode_volume(4, 10.0, theta_extra=-0.3, ft_sign=-1, chirp_scale_out=1.2)
    assert ProtocolSpec.from_dict(spec.to_dict()) == spec


def test_total_rotation_and_inverse():
    for theta in (math.pi / 12, math.pi / 4, 2.0 * math.pi / 3, 11.0 * math.pi / 12):
        for protocol in ('gem_eit', 'gem_gem'):
            spec = ProtocolSpec(theta_extra=theta_extra_for(protocol, theta))
            rotation = total_rotation(spec, protocol)
            assert math.remainder(rotation - theta, math.pi) == pytest.approx(0.0, abs=1e-12)
    assert total_rotation(ProtocolSpec(ft_sign=-1)) == pytest.approx(-math.pi / 2)


def test_plain_ft_schedule_is_theta_zero_schedule():
    spec = ProtocolSpec.for_mode_volume(2, 10.0)
    frft = build_frft_schedule(spec, MediumParams(), omega_eit=OMEGA_EIT)
    ft = build_ft_schedule(replace(spec, theta_extra=0.4), MediumParams(), omega_eit=OMEGA_EIT)
    assert frft == ft
    store, recall = frft.stage('gem_store'), frft.stage('eit_recall')
    assert store.chirp.rate == 0
    assert recall.chirp.rate == 0
    assert store.g == pytest.approx(2.0 * math.pi * spec.W_i)
    assert recall.duration == pytest.approx(spec.T_i)


def test_frft_schedule_layout():
    spec = ProtocolSpec.for_mode_volume(4, 10.0, theta_extra=math.pi / 4)
    schedule = quiet_schedule(spec, hold_duration=0.5)
    assert [stage.name for stage in schedule.stages] == ['gem_store', 'hold', 'eit_recall']
    store, hold, recall = schedule.stages
    assert store.duration == pytest.approx(10.0)
    assert hold.duration == pytest.approx(0.5)
    assert recall.duration == pytest.approx(10.0 * math.sqrt(2.0), abs=1e-3)
    assert schedule.duration == pytest.approx(store.duration + hold.duration + recall.duration)
    assert store.delta == GEM_DETUNING
    assert recall.delta == 0.0 and recall.g == 0.0
    assert recall.omega == OMEGA_EIT
    assert store.chirp.rate == pytest.approx(input_chirp_rate(spec))
    assert recall.chirp.rate == pytest.approx(-output_chirp_rate(spec))
    assert schedule.info['group_velocity'] == pytest.approx(1.0 / recall.duration)


def test_stage_durations_land_on_samples():
    spec = ProtocolSpec.for_mode_volume(2, 10.0, theta_extra=math.pi / 3)
    dt = 0.01
    schedule = quiet_schedule(spec, dt=dt)
    for stage in schedule.stages:
        samples = stage.t_end / dt
        assert samples == pytest.approx(round(samples), abs=1e-6)


def test_gradient_sign_flips_rotation():
    spec = ProtocolSpec.for_mode_volume(2, 10.0)
    flipped = replace(spec, ft_sign=-1)
    medium = MediumParams()
    plus = build_frft_schedule(spec, medium, omega_eit=OMEGA_EIT)
    minus = build_frft_schedule(flipped, medium, omega_eit=OMEGA_EIT)
    assert minus.stage('gem_store').g == -plus.stage('gem_store').g
    assert replace(minus.stage('gem_store'), g=plus.stage('gem_store').g) == plus.stage('gem_store')

    # The recall imprint is derived from g; everything else in the recall is shared.
    recall = minus.stage('eit_recall')
    T_store = plus.stage('gem_store').duration
    g_minus = minus.stage('gem_store').g
    assert (recall.imprint_k, recall.imprint_q) == stored_phase(flipped, medium, g_minus, T_store)
    assert replace(recall, imprint_k=0.0, imprint_q=0.0) == \
        replace(plus.stage('eit_recall'), imprint_k=0.0, imprint_q=0.0)
    assert recall.bias == 0.0
    assert frft_target_spec(plus).alpha == pytest.approx(math.pi / 2)
    assert frft_target_spec(minus).alpha == pytest.approx(-math.pi / 2)


def test_stored_phase_terms():
    medium = MediumParams()
    spec = ProtocolSpec.for_mode_volume(2, 10.0)
    g = 2.0 * math.pi * storage_bandwidth(spec)
    beta = medium.raman_coupling(spec.omega_gem, GEM_DETUNING) / g
    k, q = stored_phase(spec, medium, g, 10.0)
    assert k == pytest.approx(medium.propagation_wavenumber(GEM_DETUNING) - 5.0 * g - 2.0 * beta)
    assert q == pytest.approx(2.0 * beta)
    k_minus, q_minus = stored_phase(spec, medium, -g, 10.0)
    assert q_minus == -q
    assert k + k_minus == pytest.approx(2.0 * medium.propagation_wavenumber(GEM_DETUNING))


def test_output_scale_at_plain_ft():
    spec = ProtocolSpec.for_mode_volume(2, 10.0)
    target = frft_target_spec(build_frft_schedule(spec, MediumParams(), omega_eit=OMEGA_EIT))
    assert target.t_scale_in == pytest.approx(spec.sigma_t)
    assert target.scale_out == pytest.approx(spec.sigma_t / spec.fill_factor, rel=1e-9)


def test_wide_chirp_warns():
    spec = ProtocolSpec.for_mode_volume(10, 10.0, theta_extra=1.4)
    with pytest.warns(ChirpBoundWarning):
        schedule = build_frft_schedule(spec, MediumParams(), omega_eit=OMEGA_EIT)
    assert schedule.warnings


def test_plain_ft_does_not_warn():
    spec = ProtocolSpec.for_mode_volume(10, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter('error', ChirpBoundWarning)
        schedule = build_frft_schedule(spec, MediumParams(), omega_eit=OMEGA_EIT)
    assert schedule.warnings == ()


def test_chirp_span_reaches_linewidth_at_sweep_edge():
    medium = MediumParams()
    spans = {}
    for k in range(1, 12):
        theta = k * math.pi / 12
        spec = ProtocolSpec.for_mode_volume(10, 10.0, theta_extra=theta_extra_for('gem_eit', theta))
        spans[k] = eit_chirp_span(spec)
    assert spans[1] == pytest.approx(medium.linewidth, rel=0.1)
    assert spans[1] == pytest.approx(max(spans.values()))
    assert spans[6] == 0


def test_gemgem_plain_echo():
    spec = ProtocolSpec.for_mode_volume(2, 10.0)
    schedule = build_gemgem_schedule(spec)
    store, hold, recall = schedule.stages
    assert hold.q == 0
    assert store.chirp.rate == 0 and recall.chirp.rate == 0
    assert recall.g == -store.g
    assert recall.duration == store.duration
    assert schedule.info['alpha'] == pytest.approx(math.pi)


def test_gemgem_dispersion():
    spec = ProtocolSpec.for_mode_volume(2, 10.0, theta_extra=math.pi / 4)
    q = default_dispersion_strength(spec, 1.0)
    schedule = build_gemgem_schedule(spec, hold_duration=1.0)
    assert schedule.stage('hold').q == pytest.approx(q)
    assert q > 0
    rate_in, rate_out = gemgem_chirp_rates(spec)
    assert rate_in == pytest.approx(-rate_out)
    with pytest.raises(InvalidParameterError):
        default_dispersion_strength(spec, 0.0)
    with pytest.raises(InvalidParameterError):
        build_gemgem_schedule(spec, hold_duration=0.0)


def test_schedule_for_unknown_protocol():
    with pytest.raises(InvalidParameterError):
        schedule_for('eit_eit', ProtocolSpec(), MediumParams(), SpaceGrid())


def test_calibrate_vg_rejects_unreachable_velocity():
    with pytest.raises(CalibrationError):
        calibrate_vg(1000.0, MediumParams(), SpaceGrid())


def test_calibrate_vg_rejects_non_positive_velocity():
    with pytest.raises(InvalidParameterError):
        calibrate_vg(0.0, MediumParams(), SpaceGrid())


@pytest.mark.slow
def test_calibrated_group_delay():
    medium, grid = MediumParams(), SpaceGrid()
    for theta_extra in (0.0, math.pi / 4, math.pi / 3):
        target_delay = round(recall_time(ProtocolSpec(theta_extra=theta_extra)) / 1e-3) * 1e-3
        omega = calibrate_vg(grid.L / target_delay, medium, grid)
        delay = measure_group_delay(omega, target_delay, medium, grid)
        assert delay == pytest.approx(target_delay, rel=0.02)


@pytest.mark.slow
def test_chirp_calibration_at_plain_ft_returns_baseline():
    medium, grid = MediumParams(), SpaceGrid()
    spec = ProtocolSpec.for_mode_volume(4, 10.0)
    pulse = _hg_input(2, spec, 1e-3)
    result = calibrate_chirps(spec, medium, grid, pulse)
    assert result.fidelity == result.baseline_fidelity
    assert (result.chirp_scale_in, result.chirp_scale_out) == (1.0, 1.0)
    assert result.evaluations == 1


@pytest.mark.slow
def test_gemgem_outperforms_gemeit():
    medium, grid = MediumParams(), SpaceGrid()
    theta = math.pi / 4
    efficiency = {}
    for protocol in ('gem_eit', 'gem_gem'):
        spec = ProtocolSpec.for_mode_volume(4, 10.0, theta_extra=theta_extra_for(protocol, theta))
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', ChirpBoundWarning)
            schedule = schedule_for(protocol, spec, medium, grid)
        result = simulate_transform(_hg_input(4, spec, 1e-3), schedule, medium, grid)
        efficiency[protocol] = result.metrics.efficiency
        assert math.isfinite(result.metrics.eigenphase)
    assert efficiency['gem_gem'] > efficiency['gem_eit']


@pytest.mark.slow
def test_gradient_sign_reverses_measured_rotation():
    medium, grid = MediumParams(), SpaceGrid()
    phases = {}
    for ft_sign in (1, -1):
        spec = ProtocolSpec.for_mode_volume(2, 10.0, ft_sign=ft_sign)
        schedule = schedule_for('gem_eit', spec, medium, grid)
        results = [simulate_transform(_hg_input(n, spec, 1e-3), schedule, medium, grid) for n in (0, 1)]
        assert all(r.metrics.conditional_fidelity > 0.5 for r in results), ft_sign
        phases[ft_sign] = wrap_phase(_hg_phase(results[1], 1) - _hg_phase(results[0], 0))
    assert abs(phases[1]) == pytest.approx(math.pi / 2, rel=0.1)
    assert phases[-1] == pytest.approx(-phases[1], rel=0.02)


def fidelity_from_chirps(landscape):
    """simulate_transform stand-in scoring a schedule by its chirp rates."""
    def fake(pulse, schedule, medium, grid, substeps=1):
        rate_in = schedule.stage('gem_store').chirp.rate
        rate_out = -schedule.stage('eit_recall').chirp.rate
        return SimpleNamespace(metrics=SimpleNamespace(conditional_fidelity=landscape(rate_in, rate_out)))
    return fake


def test_chirp_calibration_finds_landscape_peak(monkeypatch):
    spec = ProtocolSpec.for_mode_volume(2, 10.0, theta_extra=math.pi / 4)
    unit_in, unit_out = input_chirp_rate(spec), output_chirp_rate(spec)

    def landscape(rate_in, rate_out):
        return 1.0 - (rate_in / unit_in - 1.25) ** 2 - (rate_out / unit_out - 0.8) ** 2

    monkeypatch.setattr(protocols, 'simulate_transform', fidelity_from_chirps(landscape))
    pulse = _hg_input(1, spec, 1e-3)
    result = calibrate_chirps(spec, MediumParams(), SpaceGrid(), pulse, omega_eit=OMEGA_EIT)
    assert result.chirp_scale_in == pytest.approx(1.25, abs=0.02)
    assert result.chirp_scale_out == pytest.approx(0.8, abs=0.02)
    assert result.fidelity >= result.baseline_fidelity


def test_chirp_calibration_flat_landscape(monkeypatch):
    spec = ProtocolSpec.for_mode_volume(2, 10.0, theta_extra=math.pi / 4)
    monkeypatch.setattr(protocols, 'simulate_transform', fidelity_from_chirps(lambda a, b: 0.6))
    with pytest.raises(CalibrationError) as info:
        calibrate_chirps(spec, MediumParams(), SpaceGrid(), _hg_input(1, spec, 1e-3), omega_eit=OMEGA_EIT)
    assert info.value.details['fidelity_range'] == 0.0


@pytest.mark.slow
def test_chirp_calibration_never_loses_to_baseline():
    medium, grid = MediumParams(), SpaceGrid()
    spec = ProtocolSpec.for_mode_volume(2, 10.0, theta_extra=math.pi / 4)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ChirpBoundWarning)
        result = calibrate_chirps(spec, medium, grid, _hg_input(2, spec, 1e-3), sweeps=1, iterations=3)
    assert result.fidelity >= result.baseline_fidelity
    assert result.evaluations > 1
