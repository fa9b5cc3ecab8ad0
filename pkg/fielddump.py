"""
Binary field dumps and CSV exports.

Dump layout, little-endian:

    magic    4 bytes  b'GEFD'
    version  u16
    kind     u8       0 signal, 1 spinwave, 2 wigner
    n_axes   u8
    n_axes x (start f64, step f64, count u64)
    payload  complex128 (signal, spinwave) or float64 (wigner), row-major
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from errors import DumpFormatError
from phasespace import Axis, WignerMap
from signals import PulseSignal, TimeGrid

MAGIC = b'GEFD'
VERSION = 1
FLOAT_FORMAT = '%.17g'

_HEADER = struct.Struct('<4sHBB')
_AXIS = struct.Struct('<ddQ')


class DumpKind(IntEnum):
    SIGNAL = 0
    SPINWAVE = 1
    WIGNER = 2

    @property
    def dtype(self) -> np.dtype:
        return np.dtype('<f8') if self is DumpKind.WIGNER else np.dtype('<c16')

    @property
    def n_axes(self) -> int:
        return 2 if self is DumpKind.WIGNER else 1


@dataclass(frozen=True, eq=False)
class FieldDump:
    kind: DumpKind
    axes: tuple[Axis, ...]
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(axis.count for axis in self.axes)
        if len(self.axes) != self.kind.n_axes:
            raise DumpFormatError(
                f'{self.kind.name.lower()} dumps have {self.kind.n_axes} axes, got {len(self.axes)}'
            )
        if self.values.shape != shape:
            raise DumpFormatError(f'values have shape {self.values.shape}, axes give {shape}')

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, VERSION, int(self.kind), len(self.axes))
        axes = b''.join(_AXIS.pack(axis.start, axis.step, axis.count) for axis in self.axes)
        payload = np.ascontiguousarray(self.values, dtype=self.kind.dtype).tobytes()
        return header + axes + payload

    @staticmethod
    def from_bytes(data: bytes) -> FieldDump:
        if len(data) < _HEADER.size:
            raise DumpFormatError(f'dump is {len(data)} bytes, shorter than its header')
        magic, version, kind, n_axes = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DumpFormatError(f'bad magic {magic!r}', magic=magic.hex())
        if version != VERSION:
            raise DumpFormatError(f'unsupported dump version {version}', version=version)
        try:
            kind = DumpKind(kind)
        except ValueError:
            raise DumpFormatError(f'unknown dump kind {kind}', kind=kind) from None
        if n_axes != kind.n_axes:
            raise DumpFormatError(f'{kind.name.lower()} dump declares {n_axes} axes')

        offset = _HEADER.size
        if len(data) < offset + n_axes * _AXIS.size:
            raise DumpFormatError('dump truncated inside its axis descriptors')
        axes = []
        for _ in range(n_axes):
            start, step, count = _AXIS.unpack_from(data, offset)
            axes.append(Axis(start, step, count))
            offset += _AXIS.size

        shape = tuple(axis.count for axis in axes)
        expected = int(np.prod(shape)) * kind.dtype.itemsize
        if len(data) - offset != expected:
            raise DumpFormatError(
                f'payload is {len(data) - offset} bytes, axes need {expected}',
                payload_bytes=len(data) - offset,
                expected_bytes=expected,
            )
        values = np.frombuffer(data, dtype=kind.dtype, offset=offset).reshape(shape).copy()
        return FieldDump(kind, tuple(axes), values)

    def write(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())

    @staticmethod
    def read(path: Path) -> FieldDump:
        return FieldDump.from_bytes(path.read_bytes())

    @staticmethod
    def from_signal(signal: PulseSignal) -> FieldDump:
        grid = signal.grid
        return FieldDump(DumpKind.SIGNAL, (Axis(grid.t_start, grid.dt, grid.n_samples),), signal.amplitude)

    def to_signal(self) -> PulseSignal:
        if self.kind is not DumpKind.SIGNAL:
            raise DumpFormatError(f'expected a signal dump, got {self.kind.name.lower()}')
        axis = self.axes[0]
        return PulseSignal(TimeGrid(axis.start, axis.step, axis.count), self.values)

    @staticmethod
    def from_spinwave(spinwave: np.ndarray, z_start: float, dz: float) -> FieldDump:
        spinwave = np.asarray(spinwave, dtype=np.complex128)
        return FieldDump(DumpKind.SPINWAVE, (Axis(z_start, dz, len(spinwave)),), spinwave)

    @staticmethod
    def from_wigner(wmap: WignerMap) -> FieldDump:
        return FieldDump(DumpKind.WIGNER, (wmap.axis1, wmap.axis2), wmap.values)

    def to_wigner(self) -> WignerMap:
        if self.kind is not DumpKind.WIGNER:
            raise DumpFormatError(f'expected a wigner dump, got {self.kind.name.lower()}')
        return WignerMap(self.axes[0], self.axes[1], self.values)


def write_signal_dump(path: Path, signal: PulseSignal):
    FieldDump.from_signal(signal).write(path)


def read_signal_dump(path: Path) -> PulseSignal:
    return FieldDump.read(path).to_signal()


def write_wigner_dump(path: Path, wmap: WignerMap):
    FieldDump.from_wigner(wmap).write(path)


def write_signal_csv(path: Path, signal: PulseSignal):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(['t_us', 're', 'im', 'intensity'])
        for t, value, intensity in zip(signal.t, signal.amplitude, signal.intensity):
            writer.writerow([FLOAT_FORMAT % t, FLOAT_FORMAT % value.real, FLOAT_FORMAT % value.imag,
                             FLOAT_FORMAT % intensity])


def write_wigner_csv(path: Path, wmap: WignerMap):
    """Long format: one (axis1, axis2, value) row per sample."""
    path.parent.mkdir(parents=True, exist_ok=True)
    first = f'{wmap.axis1.name or "axis1"}_{wmap.axis1.unit}'.rstrip('_')
    second = f'{wmap.axis2.name or "axis2"}_{wmap.axis2.unit}'.rstrip('_').replace('/', '_per_')
    with open(path, 'w', newline='') as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow([first, second, 'wigner'])
        axis2 = [FLOAT_FORMAT % v for v in wmap.axis2.values]
        for a, row in zip(wmap.axis1.values, wmap.values):
            label = FLOAT_FORMAT % a
            writer.writerows([label, b, FLOAT_FORMAT % v] for b, v in zip(axis2, row))
