import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import ResolutionError, UndefinedEfficiencyError, WraparoundError
from phasespace import (
    WIGNER_MIN_ROWS,
    FrftSpec,
    axis_difference,
    eigenphase_sign,
    expected_eigenphase,
    frft_oracle,
    lobe_axis_angle,
    metrics,
    wigner,
    wigner_spinwave,
    wrap_phase,
)
from signals import HGParams, PulseSignal, TimeGrid, gaussian_pair, hg_mode, mode_volume_scale


def centred(alpha: float, **kwargs) -> FrftSpec:
    return FrftSpec(alpha=alpha, center_in=0.0, center_out=0.0, **kwargs)


def l2(a: PulseSignal, b: PulseSignal) -> float:
    return float(np.sqrt(np.sum(np.abs(a.amplitude - b.amplitude) ** 2) * a.grid.dt))


def band_limited(grid: TimeGrid, seed: int = 0) -> PulseSignal:
    """Random combination of the first few HG modes, displaced and modulated."""
    rng = np.random.default_rng(seed)
    coefficients = rng.normal(size=6) + 1j * rng.normal(size=6)
    amplitude = sum(c * hg_mode(HGParams(n=n, sigma_t=1.0, center=0.7), grid).amplitude
                    for n, c in enumerate(coefficients))
    return PulseSignal(grid, amplitude * np.exp(0.8j * grid.t)).normalized()


def test_wrap_phase():
    assert wrap_phase(-math.pi) == math.pi
    assert wrap_phase(3.0 * math.pi) == pytest.approx(math.pi)
    assert wrap_phase(0.5) == 0.5
    assert wrap_phase(2.0 * math.pi + 0.1) == pytest.approx(0.1)


def test_zero_order_is_identity(centred_grid):
    signal = band_limited(centred_grid)
    assert np.array_equal(frft_oracle(signal, centred(0.0)).amplitude, signal.amplitude)


def test_full_turn_is_identity(centred_grid):
    signal = band_limited(centred_grid)
    assert l2(frft_oracle(signal, centred(2.0 * math.pi)), signal) < 1e-12


def test_hermite_gauss_eigenrelation(centred_grid):
    alpha = math.pi / 4
    for n in range(11):
        mode = hg_mode(HGParams(n=n, sigma_t=1.0), centred_grid)
        rotated = frft_oracle(mode, centred(alpha))
        expected = mode.scaled(np.exp(1j * eigenphase_sign() * n * alpha))
        assert_allclose(rotated.amplitude, expected.amplitude, atol=1e-6, err_msg=f'HG_{n}')


def test_eigenphase_sign_is_negative():
    assert eigenphase_sign() == -1
    assert expected_eigenphase(3, math.pi / 4) == pytest.approx(-3.0 * math.pi / 4)


def test_quarter_turn_matches_direct_fourier_sum(centred_grid):
    signal = band_limited(centred_grid, seed=3)
    x = centred_grid.t
    direct = np.exp(-1j * np.outer(x, x)) @ signal.amplitude * centred_grid.dt / math.sqrt(2.0 * math.pi)
    rotated = frft_oracle(signal, centred(math.pi / 2))
    error = np.linalg.norm(rotated.amplitude - direct) / np.linalg.norm(direct)
    assert error < 1e-8


def test_composition():
    grid = TimeGrid(-16.0, 1.0 / 32.0, 1025)
    signal = band_limited(grid, seed=1)
    rng = np.random.default_rng(0)
    pairs = []
    while len(pairs) < 10:
        a, b = rng.uniform(-math.pi, math.pi, size=2)
        if min(abs(math.sin(a)), abs(math.sin(b)), abs(math.sin(a + b))) >= 0.5:
            pairs.append((a, b))
    for a, b in pairs:
        twice = frft_oracle(frft_oracle(signal, centred(b)), centred(a))
        once = frft_oracle(signal, centred(a + b))
        assert l2(twice, once) < 1e-6, (a, b)


def test_quarter_turn_composes_to_half_turn(centred_grid):
    signal = band_limited(centred_grid, seed=2)
    eighth = centred(math.pi / 4)
    assert l2(frft_oracle(frft_oracle(signal, eighth), eighth), frft_oracle(signal, centred(math.pi / 2))) < 1e-6


def test_two_quarter_turns_give_parity(centred_grid):
    shifted = hg_mode(HGParams(n=0, sigma_t=1.0, center=2.0), centred_grid)
    quarter = centred(math.pi / 2)
    twice = frft_oracle(frft_oracle(shifted, quarter), quarter)
    assert_allclose(twice.amplitude, shifted.amplitude[::-1], atol=1e-7)


def test_oracle_is_unitary(centred_grid):
    signal = band_limited(centred_grid, seed=4)
    for k in range(1, 12):
        rotated = frft_oracle(signal, centred(k * math.pi / 12))
        assert rotated.energy() == pytest.approx(signal.energy(), rel=1e-8), k


def test_chirp_and_quadrature_agree(centred_grid):
    signal = band_limited(centred_grid, seed=5)
    for alpha in (0.3, math.pi / 3, 2.0, -1.1):
        spec = centred(alpha)
        fast = frft_oracle(signal, spec, method='chirp')
        slow = frft_oracle(signal, spec, method='quadrature')
        assert l2(fast, slow) < 1e-6, alpha


def test_scaled_transform_maps_between_scales():
    grid_in = TimeGrid(-8.0, 1.0 / 64.0, 1025)
    grid_out = TimeGrid(-16.0, 1.0 / 32.0, 1025)
    mode = hg_mode(HGParams(n=2, sigma_t=0.5), grid_in)
    spec = FrftSpec(alpha=math.pi / 3, t_scale_in=0.5, t_scale_out=1.0, center_in=0.0, center_out=0.0)
    rotated = frft_oracle(mode, spec, output_grid=grid_out)
    expected = hg_mode(HGParams(n=2, sigma_t=1.0), grid_out).scaled(np.exp(-2j * math.pi / 3))
    assert_allclose(rotated.amplitude, expected.amplitude, atol=1e-6)


def test_coarse_grid_raises_resolution_error():
    grid = TimeGrid(-16.0, 0.5, 65)
    signal = hg_mode(HGParams(n=0, sigma_t=1.0), grid)
    with pytest.raises(ResolutionError):
        frft_oracle(signal, centred(math.pi / 12))


def test_wigner_marginal_is_intensity():
    grid = TimeGrid(0.0, 0.01, 1001)
    pair = gaussian_pair(4.0, 0.8, grid)
    wmap = wigner(pair)
    assert wmap.axis2.unit == 'MHz'
    assert_allclose(wmap.marginal(), pair.intensity, atol=1e-12)
    assert wmap.total() == pytest.approx(1.0, rel=1e-9)


def test_wigner_threads_match_serial():
    grid = TimeGrid(0.0, 0.01, 1001)
    pair = gaussian_pair(4.0, 0.8, grid)
    assert np.array_equal(wigner(pair, workers=4).values, wigner(pair).values)


def test_wigner_too_few_lags():
    grid = TimeGrid(0.0, 0.01, 1001)
    with pytest.raises(WraparoundError):
        wigner(gaussian_pair(4.0, 0.8, grid), n_lags=16)


def test_spinwave_wigner_marginal():
    z = np.linspace(0.0, 1.0, 256)
    spinwave = np.exp(-0.5 * ((z - 0.4) / 0.05) ** 2 + 12j * z)
    wmap = wigner_spinwave(spinwave)
    assert wmap.axis2.unit == 'rad/L'
    assert_allclose(wmap.marginal(), np.abs(spinwave) ** 2, atol=1e-12)
    assert wmap.centroid()[1] == pytest.approx(12.0, rel=1e-2)


def test_lobe_axis_of_pair_and_rotated_pair():
    grid = TimeGrid(-12.0, 0.05, 481)
    pair = gaussian_pair(4.0, 0.8, grid)
    tolerance = math.radians(5.0)
    assert axis_difference(lobe_axis_angle(wigner(pair), 0.0), 0.0) < tolerance

    alpha = math.pi / 4
    rotated = frft_oracle(pair, centred(alpha))
    assert axis_difference(lobe_axis_angle(wigner(rotated), 0.0, 1.0), alpha) < tolerance


def test_axis_difference_is_modulo_pi():
    assert axis_difference(0.1, 0.1 + math.pi) == pytest.approx(0.0, abs=1e-12)
    assert axis_difference(-3.0 * math.pi / 4, math.pi / 4) == pytest.approx(0.0, abs=1e-12)


def test_metrics_identity_and_scaling(centred_grid):
    mode = hg_mode(HGParams(n=2, sigma_t=1.0), centred_grid)
    result = metrics(mode, mode, mode)
    assert result.efficiency == pytest.approx(1.0)
    assert result.conditional_fidelity == pytest.approx(1.0)
    assert result.eigenphase == pytest.approx(0.0, abs=1e-12)

    halved = metrics(mode.scaled(0.5j), mode, mode)
    assert halved.efficiency == pytest.approx(0.25)
    assert halved.conditional_fidelity == pytest.approx(1.0)
    assert halved.eigenphase == pytest.approx(math.pi / 2)


def test_metrics_of_orthogonal_output(centred_grid):
    zero = hg_mode(HGParams(n=0, sigma_t=1.0), centred_grid)
    one = hg_mode(HGParams(n=1, sigma_t=1.0), centred_grid)
    assert metrics(one, zero, zero).conditional_fidelity == pytest.approx(0.0, abs=1e-12)


def test_metrics_zero_input(centred_grid):
    mode = hg_mode(HGParams(n=0, sigma_t=1.0), centred_grid)
    silent = PulseSignal(centred_grid, np.zeros(centred_grid.n_samples))
    with pytest.raises(UndefinedEfficiencyError):
        metrics(mode, silent, mode)


def origin_value(wmap) -> float:
    row = int(np.argmin(np.abs(wmap.axis1.values)))
    column = int(np.argmin(np.abs(wmap.axis2.values)))
    return float(wmap.values[row, column])


def test_first_hermite_mode_is_negative_at_its_centre(centred_grid):
    one = wigner(hg_mode(HGParams(n=1, sigma_t=1.0), centred_grid))
    assert origin_value(one) == pytest.approx(-2.0, rel=1e-6)
    assert one.values.min() == origin_value(one)


def test_gaussian_wigner_is_non_negative(centred_grid):
    ground = wigner(hg_mode(HGParams(n=0, sigma_t=1.0), centred_grid))
    assert ground.values.min() >= -1e-10 * ground.values.max()
    assert origin_value(ground) == pytest.approx(2.0, rel=1e-6)


def test_band_limited_wigner_of_long_recording():
    grid = TimeGrid.covering(0.0, 10.0, 1e-3)
    mode = hg_mode(HGParams(n=2, sigma_t=mode_volume_scale(2, 10.0), center=grid.midpoint, m=2), grid)
    wmap = wigner(mode, workers=2, band_limit=True)
    factor = grid.n_samples // WIGNER_MIN_ROWS
    assert wmap.axis1.step == pytest.approx(factor * grid.dt)
    assert wmap.values.shape[0] == len(range(0, grid.n_samples, factor))
    assert wmap.values.dtype == np.float64
    assert_allclose(wmap.marginal(), mode.intensity[::factor], atol=1e-12)
    assert wmap.total() == pytest.approx(mode.energy(), rel=1e-5)


def test_short_signal_is_not_band_limited():
    grid = TimeGrid(0.0, 0.01, 1001)
    pair = gaussian_pair(4.0, 0.8, grid)
    assert np.array_equal(wigner(pair, band_limit=True).values, wigner(pair).values)
