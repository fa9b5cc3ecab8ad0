import math
from types import SimpleNamespace

import numpy as np
import pytest

import experiments
from errors import InvalidParameterError, UndefinedEfficiencyError
from experiments import (
    COLUMNS,
    GroupPrep,
    ResultRow,
    ResultTable,
    SweepSpec,
    eigenphase_slope,
    fit_efficiency_scaling,
    intensity_l1,
    run_eigenphase_sweep,
    run_fidelity_efficiency_sweep,
    run_showcase,
    run_sweep,
    scaling_fits,
)
from fielddump import DumpKind, FieldDump
from phasespace import FrftSpec, MetricSet, eigenphase_sign
from protocols import ProtocolSpec, theta_extra_for
from signals import HGParams, TimeGrid, hg_mode


def fake_prepare(sweep, protocol, theta, m):
    spec = ProtocolSpec.for_mode_volume(m, sweep.T_i, theta_extra=theta_extra_for(protocol, theta))
    return GroupPrep(spec, omega_eit=30.0)


def fake_transform(input, schedule, medium, grid, substeps=1):
    center = input.grid.midpoint
    return SimpleNamespace(
        output=input,
        frft=FrftSpec(alpha=schedule.info['alpha'], t_scale_in=1.0, center_in=center, center_out=center),
        metrics=MetricSet(0.5, 0.9, 0.0),
    )


@pytest.fixture
def fast_sweep(monkeypatch, tmp_path):
    monkeypatch.setattr(experiments, 'prepare_group', fake_prepare)
    monkeypatch.setattr(experiments, 'simulate_transform', fake_transform)
    return SweepSpec(theta_list=(math.pi / 4, 3.5), n_list=(0, 1, 2), m=4, dt=0.01, output_dir=tmp_path)


def test_sweep_spec_combinations(tmp_path):
    sweep = SweepSpec(protocol='both', theta_list=(0.5, 1.0), n_list=(0, 1), m=3, output_dir=tmp_path)
    assert len(sweep.combinations()) == 8
    scaling = SweepSpec(theta_list=(math.pi / 4,), m_list=(1, 2, 4), output_dir=tmp_path)
    assert scaling.combinations() == [('gem_eit', math.pi / 4, m, m) for m in (1, 2, 4)]
    assert sweep.csv_path('eigenphase') == tmp_path / 'eigenphase.csv'


def test_sweep_spec_validation():
    with pytest.raises(InvalidParameterError):
        SweepSpec(protocol='eit')
    with pytest.raises(InvalidParameterError):
        SweepSpec(theta_list=(math.nan,))
    with pytest.raises(InvalidParameterError):
        SweepSpec(n_list=(-1,))


def test_result_table_csv_round_trip(tmp_path):
    rows = [
        ResultRow('gem_gem', 0.5, 1, 4, 0.25, 0.9, -0.5, -0.5, 'ok', 1.5),
        ResultRow('gem_eit', 0.5, 2, 4, 0.1, 0.8, 1.0 / 3.0, 0.2, 'ok', 0.1),
        ResultRow('gem_eit', 0.5, 0, 4, status='error:TruncationError'),
    ]
    path = tmp_path / 'table.csv'
    ResultTable(rows).write_csv(path)
    assert path.read_text().splitlines()[0] == ','.join(COLUMNS)

    table = ResultTable.read_csv(path)
    assert [(row.protocol, row.n) for row in table.rows] == [('gem_eit', 0), ('gem_eit', 2), ('gem_gem', 1)]
    assert table.rows[1] == rows[1]
    assert math.isnan(table.rows[0].efficiency)
    assert not table.rows[0].ok
    assert len(table.select(protocol='gem_eit')) == 1
    assert len(table.select(protocol='gem_eit', ok_only=False)) == 2


def test_sweep_isolates_poisoned_angle(fast_sweep):
    table = run_eigenphase_sweep(fast_sweep, workers=2, executor='thread', do_prints=False)
    assert len(table.rows) == 6
    good = [row for row in table.rows if row.theta_rad == math.pi / 4]
    bad = [row for row in table.rows if row.theta_rad == 3.5]
    assert all(row.ok for row in good)
    assert all(row.status == 'error:InvalidParameterError' for row in bad)
    assert [row.n for row in good] == [0, 1, 2]
    for row in good:
        assert row.expected_phase_rad == pytest.approx(
            math.remainder(eigenphase_sign() * row.n * math.pi / 4, 2.0 * math.pi))
        assert row.efficiency == 0.5
    assert fast_sweep.csv_path('eigenphase').exists()


def test_sweep_resumes_complete_table(fast_sweep, monkeypatch):
    run_eigenphase_sweep(fast_sweep, executor='thread', do_prints=False)
    path = fast_sweep.csv_path('eigenphase')
    before = path.read_bytes()

    def must_not_run(*args, **kwargs):
        raise AssertionError('row re-run')

    monkeypatch.setattr(experiments, 'run_row', must_not_run)
    monkeypatch.setattr(experiments, 'prepare_group', must_not_run)
    table = run_eigenphase_sweep(fast_sweep, executor='thread', do_prints=False)
    assert path.read_bytes() == before
    assert len(table.rows) == 6


def test_sweep_fills_missing_rows(fast_sweep):
    path = fast_sweep.csv_path('eigenphase')
    ResultTable([ResultRow('gem_eit', math.pi / 4, 1, 4, 0.3, 0.7, 0.1, 0.2)]).write_csv(path)
    table = run_eigenphase_sweep(fast_sweep, executor='thread', do_prints=False)
    assert len(table.rows) == 6
    kept = table.select(n=1, theta=math.pi / 4)
    assert kept[0].efficiency == 0.3


def test_sweep_is_deterministic(fast_sweep):
    first = run_sweep(fast_sweep, 'first', executor='thread', do_prints=False)
    second = run_sweep(fast_sweep, 'second', executor='thread', workers=3, do_prints=False)
    strip = [row.to_csv()[:-1] for row in first.rows]
    assert strip == [row.to_csv()[:-1] for row in second.rows]


def test_fidelity_sweep_file_names(fast_sweep):
    run_fidelity_efficiency_sweep(fast_sweep, executor='thread', do_prints=False)
    assert fast_sweep.csv_path('fidelity_efficiency').exists()


def test_eigenphase_slope():
    theta = math.pi / 4
    rows = [ResultRow('gem_eit', theta, n, 10, 0.5, 0.9, math.remainder(-n * theta, 2 * math.pi), 0.0)
            for n in range(6)]
    assert eigenphase_slope(ResultTable(rows), 'gem_eit', theta) == pytest.approx(-theta)
    with pytest.raises(InvalidParameterError):
        eigenphase_slope(ResultTable(rows[:1]), 'gem_eit', theta)


def test_scaling_fit_prefers_generating_model():
    m = np.array([1, 2, 4, 6, 8])
    inverse = fit_efficiency_scaling(m, 0.6 / m)
    assert inverse.preferred == 'inverse'
    assert inverse.inverse_c == pytest.approx(0.6)
    assert inverse.inverse_rss == pytest.approx(0.0, abs=1e-20)

    exponential = fit_efficiency_scaling(m, 0.9 * np.exp(-0.3 * np.sqrt(m)))
    assert exponential.preferred == 'exponential'
    assert exponential.exponential_a == pytest.approx(0.3)
    assert exponential.exponential_c == pytest.approx(0.9)


def test_scaling_fit_needs_positive_efficiencies():
    with pytest.raises(UndefinedEfficiencyError):
        fit_efficiency_scaling([1, 2, 4], [0.5, 0.0, 0.1])
    with pytest.raises(InvalidParameterError):
        fit_efficiency_scaling([1, 2], [0.5, 0.2])


def test_scaling_fits_per_protocol():
    rows = [ResultRow('gem_eit', 0.8, m, m, 0.5 / m) for m in (1, 2, 4, 8)]
    rows += [ResultRow('gem_gem', 0.8, m, m, 0.9 * math.exp(-0.2 * math.sqrt(m))) for m in (1, 2, 4, 8)]
    fits = scaling_fits(ResultTable(rows))
    assert fits['gem_eit'].preferred == 'inverse'
    assert fits['gem_gem'].preferred == 'exponential'


def test_intensity_l1():
    grid = TimeGrid(-8.0, 0.01, 1601)
    mode = hg_mode(HGParams(n=1, sigma_t=1.0), grid)
    assert intensity_l1(mode, mode.scaled(3.0)) == pytest.approx(0.0, abs=1e-12)
    other = hg_mode(HGParams(n=0, sigma_t=1.0, center=4.0), grid)
    assert intensity_l1(mode, other) > 1.0


@pytest.mark.slow
def test_showcase_fourier_transform(tmp_path):
    result = run_showcase(-math.pi / 2, output_dir=tmp_path)
    assert result.intensity_l1 < 0.1
    assert result.transform.record.ledger.relative_imbalance() < 1e-3
    assert (tmp_path / 'output_wigner.csv').exists()
    assert (tmp_path / 'spinwave_wigner.gefd').exists()
    stored = FieldDump.read(tmp_path / 'spinwave.gefd')
    assert stored.kind is DumpKind.SPINWAVE
    assert stored.axes[0].count == len(result.spinwave)
    assert result.metrics.efficiency <= result.summary()['stored_energy'] <= 1.0 + 1e-3


@pytest.mark.slow
def test_showcase_fractional_rotation():
    result = run_showcase(-3.0 * math.pi / 4)
    assert result.angle_error < math.radians(5.0)


@pytest.mark.slow
def test_eigenphase_slope_after_calibration(tmp_path):
    theta = math.pi / 4
    sweep = SweepSpec(theta_list=(theta,), n_list=tuple(range(6)), m=10, calibrate_chirps=True,
                      output_dir=tmp_path)
    table = run_eigenphase_sweep(sweep, executor='thread', do_prints=False)
    assert all(row.ok for row in table.rows)
    slope = eigenphase_slope(table, 'gem_eit', theta)
    assert slope == pytest.approx(eigenphase_sign() * theta, rel=0.05)


@pytest.mark.slow
def test_fidelity_falls_away_from_fourier_point(tmp_path):
    thetas = tuple(k * math.pi / 12 for k in range(1, 12))
    sweep = SweepSpec(theta_list=thetas, n_list=(2,), m=10, output_dir=tmp_path)
    table = run_fidelity_efficiency_sweep(sweep, workers=4, do_prints=False)
    rows = sorted(table.select(n=2), key=lambda row: abs(row.theta_rad - math.pi / 2))
    assert len(rows) == len(thetas)
    fidelity = [row.cond_fidelity for row in rows]
    rises = sum(later > earlier + 1e-3 for earlier, later in zip(fidelity, fidelity[1:]))
    assert rises <= 1


@pytest.mark.slow
def test_efficiency_scaling(tmp_path):
    sweep = SweepSpec(protocol='both', theta_list=(math.pi / 4,), m_list=(1, 2, 4, 6, 8), output_dir=tmp_path)
    table = run_fidelity_efficiency_sweep(sweep, workers=4, do_prints=False)
    fits = scaling_fits(table)
    assert fits['gem_eit'].preferred == 'inverse'
    assert fits['gem_gem'].preferred == 'exponential'
    for m in (4, 6, 8):
        eit = table.select(protocol='gem_eit', n=m)[0].efficiency
        gem = table.select(protocol='gem_gem', n=m)[0].efficiency
        assert gem > eit


def lobe_centroids(wmap):
    """(z, k) centroids of the map on either side of its k centroid."""
    z, k = wmap.axis1.values, wmap.axis2.values
    split = wmap.centroid()[1]
    centroids = []
    for side in (k < split, k >= split):
        weights = wmap.values[:, side]
        total = weights.sum()
        centroids.append((float(weights.sum(axis=1) @ z / total), float(weights.sum(axis=0) @ k[side] / total)))
    return centroids


@pytest.mark.slow
def test_showcase_spinwave_lobes_are_sheared():
    result = run_showcase(-3.0 * math.pi / 4)
    (z_a, k_a), (z_b, k_b) = lobe_centroids(result.spinwave_wigner)
    g = result.transform.record.schedule.stage('gem_store').g
    assert abs(k_b - k_a) == pytest.approx(abs(g) * 4.0, rel=0.15)
    assert abs(z_b - z_a) > 0.05

    plain = run_showcase(-math.pi / 2)
    (z_a, _), (z_b, _) = lobe_centroids(plain.spinwave_wigner)
    assert abs(z_b - z_a) < 0.02


@pytest.mark.slow
def test_eigenphase_is_continuous_in_theta(tmp_path):
    thetas = tuple(k * math.pi / 12 for k in range(4, 9))
    sweep = SweepSpec(theta_list=thetas, n_list=(1,), m=2, output_dir=tmp_path)
    table = run_eigenphase_sweep(sweep, executor='thread', workers=4, do_prints=False)
    rows = sorted(table.select(n=1), key=lambda row: row.theta_rad)
    assert len(rows) == len(thetas)
    phases = np.array([row.eigenphase_rad for row in rows])
    assert np.max(np.abs(np.diff(phases))) < math.pi / 4


@pytest.mark.slow
def test_gemgem_efficiency_oscillates_with_mode_volume(tmp_path):
    sweep = SweepSpec(protocol='gem_gem', theta_list=(math.pi / 4,), m_list=tuple(range(1, 9)), output_dir=tmp_path)
    table = run_fidelity_efficiency_sweep(sweep, workers=4, do_prints=False)
    efficiency = [table.select(n=m)[0].efficiency for m in range(1, 9)]
    assert efficiency[0] > efficiency[-1]
    assert any(later > earlier for earlier, later in zip(efficiency, efficiency[1:]))
