"""
Run configuration: a TOML document with one table per section, validated
by pydantic models that reject unknown keys.

    [medium]      d, gamma, gamma_S
    [grid]        n_z, dt, substeps
    [signal]      kind, n, separation, sigma_t, dump
    [protocol]    ProtocolSpec fields plus name, hold_duration, dispersion_strength
    [sweep]       SweepSpec fields
    [calibration] chirp search and omega_gem tuning settings
    [output]      directory, formats

Angles may be given as numbers or as multiples of pi ('pi/4', '-3pi/4').
"""
from __future__ import annotations

import math
import os
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError
from protocols import DEFAULT_OMEGA_GEM, MAX_THETA_EXTRA, ProtocolSpec
from signals import DEFAULT_FILL_FACTOR
from solver import DEFAULT_DT, DEFAULT_N_Z, RB87_D1_LINEWIDTH, MediumParams, SpaceGrid

THREADS_ENV = 'GEMFRFT_THREADS'
OUTPUT_DIR_ENV = 'GEMFRFT_OUTPUT_DIR'

_PI_MULTIPLE = re.compile(r'^\s*([+-]?)\s*(\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d*\.?\d+))?\s*$')


def parse_angle(value: Any) -> float:
    """A float, or a string such as 'pi/12', '3pi/4', '-0.5*pi'."""
    if isinstance(value, str):
        match = _PI_MULTIPLE.match(value)
        if match is None:
            try:
                return float(value)
            except ValueError:
                raise ValueError(f'cannot read {value!r} as an angle') from None
        sign, factor, divisor = match.groups()
        angle = (float(factor) if factor.strip(".") else 1.0) * math.pi / (float(divisor) if divisor else 1.0)
        return -angle if sign == '-' else angle
    return float(value)


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            threads = int(value)
        except ValueError:
            raise ConfigError(f'{THREADS_ENV}={value!r} is not an integer') from None
        if threads < 1:
            raise ConfigError(f'{THREADS_ENV} must be at least 1, got {threads}')
        return threads
    return os.cpu_count() or 1


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, 'results'))


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class MediumConfig(Section):
    d: float = Field(500.0, gt=0)
    gamma: float = Field(RB87_D1_LINEWIDTH / 2, gt=0)
    gamma_S: float = Field(0.0, ge=0)

    def to_medium(self) -> MediumParams:
        return MediumParams(self.d, self.gamma, self.gamma_S)


class GridConfig(Section):
    n_z: int = Field(DEFAULT_N_Z, ge=64)
    dt: float = Field(DEFAULT_DT, gt=0)
    substeps: int = Field(1, ge=1)

    def to_space_grid(self) -> SpaceGrid:
        return SpaceGrid(self.n_z)


class SignalConfig(Section):
    kind: Literal['hg', 'gaussian_pair', 'dump'] = 'hg'
    n: int = Field(1, ge=0)
    separation: float = Field(4.0, ge=0)
    sigma_t: float = Field(0.8, gt=0)
    dump: Path | None = None

    @model_validator(mode='after')
    def _dump_needs_path(self) -> SignalConfig:
        if self.kind == 'dump' and self.dump is None:
            raise ValueError("signal.kind = 'dump' needs signal.dump")
        return self


class ProtocolConfig(Section):
    name: Literal['gem_eit', 'gem_gem'] = 'gem_eit'
    theta_extra: float = 0.0
    ft_sign: Literal[-1, 1] = 1
    # None: the 99.9% bandwidth of HG_m at the mode-volume scale.
    W_i: float | None = Field(None, gt=0)
    T_i: float = Field(10.0, gt=0)
    m: int = Field(1, ge=1)
    omega_gem: float = Field(DEFAULT_OMEGA_GEM, gt=0)
    chirp_scale_in: float = Field(1.0, gt=0)
    chirp_scale_out: float = Field(1.0, gt=0)
    fill_factor: float = Field(DEFAULT_FILL_FACTOR, gt=0, le=1)
    hold_duration: float | None = Field(None, ge=0)
    dispersion_strength: float | None = None
    omega_eit: float | None = Field(None, gt=0)

    @field_validator('theta_extra', mode='before')
    @classmethod
    def _angle(cls, value: Any) -> float:
        return parse_angle(value)

    @field_validator('theta_extra')
    @classmethod
    def _within_limits(cls, value: float) -> float:
        if not abs(value) < MAX_THETA_EXTRA:
            raise ValueError(f'|theta_extra| must be below pi/2 - 1e-3, got {value:.6g}')
        return value

    def to_spec(self) -> ProtocolSpec:
        common = {
            'theta_extra': self.theta_extra,
            'ft_sign': self.ft_sign,
            'omega_gem': self.omega_gem,
            'chirp_scale_in': self.chirp_scale_in,
            'chirp_scale_out': self.chirp_scale_out,
        }
        if self.W_i is None:
            return ProtocolSpec.for_mode_volume(self.m, self.T_i, self.fill_factor, **common)
        return ProtocolSpec(W_i=self.W_i, T_i=self.T_i, m=self.m, fill_factor=self.fill_factor, **common)

    @staticmethod
    def from_spec(spec: ProtocolSpec, **extra: Any) -> ProtocolConfig:
        return ProtocolConfig(**spec.to_dict(), **extra)


class SweepConfig(Section):
    mode: Literal['eigenphase', 'fidelity_efficiency'] = 'eigenphase'
    protocol: Literal['gem_eit', 'gem_gem', 'both'] = 'gem_eit'
    theta_list: list[float] = Field(default_factory=lambda: [math.pi / 4])
    n_list: list[int] = Field(default_factory=lambda: [0, 1, 2, 3])
    m: int = Field(10, ge=1)
    m_list: list[int] | None = None
    calibrate_vg: bool = True
    calibrate_chirps: bool = False
    executor: Literal['process', 'thread'] = 'process'

    @field_validator('theta_list', mode='before')
    @classmethod
    def _angles(cls, value: Any) -> list[float]:
        if not isinstance(value, list):
            value = [value]
        return [parse_angle(v) for v in value]

    @field_validator('n_list')
    @classmethod
    def _non_negative(cls, value: list[int]) -> list[int]:
        if any(n < 0 for n in value):
            raise ValueError('HG indices must be non-negative')
        return value

    @field_validator('m_list')
    @classmethod
    def _positive(cls, value: list[int] | None) -> list[int] | None:
        if value is not None and any(m < 1 for m in value):
            raise ValueError('mode volumes must be positive')
        return value


class CalibrationConfig(Section):
    sweeps: int = Field(2, ge=1)
    iterations: int = Field(10, ge=2)
    chirps: bool = True
    omega_gem_candidates: list[float] = Field(default_factory=list)

    @field_validator('omega_gem_candidates')
    @classmethod
    def _positive(cls, value: list[float]) -> list[float]:
        if any(not v > 0 for v in value):
            raise ValueError('candidate Rabi frequencies must be positive')
        return value


class OutputConfig(Section):
    directory: Path = Field(default_factory=default_output_dir)
    formats: list[Literal['dump', 'csv', 'svg']] = Field(default_factory=lambda: ['dump', 'csv'])


class ConfigDoc(Section):
    medium: MediumConfig = Field(default_factory=MediumConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    signal: SignalConfig = Field(default_factory=SignalConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


def parse_override(text: str) -> tuple[list[str], Any]:
    """'section.key=value' with value read as a TOML value, else kept as a string."""
    key, sep, raw = text.partition('=')
    path = [part.strip() for part in key.split('.')]
    if not sep or len(path) < 2 or not all(path):
        raise ConfigError(f'override {text!r} is not of the form section.key=value', override=text)
    try:
        value = tomllib.loads(f'v = {raw.strip()}')['v']
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f'override {text!r} descends into non-table {part!r}', key='.'.join(path))
            node = child
        node[path[-1]] = value
    return data


def _translate(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    key = '.'.join(str(part) for part in first['loc'])
    if first['type'] == 'extra_forbidden':
        message = f'unknown configuration key {key}'
    else:
        message = f'invalid value for {key}: {first["msg"]}'
    return ConfigError(message, key=key, errors=len(error.errors()))


def load_config(path: Path | None = None, overrides: list[str] | None = None) -> ConfigDoc:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, 'rb') as config_file:
                data = tomllib.load(config_file)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f'cannot parse {path}: {e}', path=str(path)) from e
    apply_overrides(data, overrides or [])
    try:
        return ConfigDoc.model_validate(data)
    except ValidationError as e:
        raise _translate(e) from e
