"""SVG figures drawn from the same data the CSV exports hold."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from experiments import ResultTable
from phasespace import WignerMap
from signals import PulseSignal

logger = logging.getLogger(__name__)


def save_figure(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.tight_layout()
    plt.savefig(path, format='svg', bbox_inches='tight')
    plt.close()
    logger.info('figure saved to %s', path)
    return path


def plot_wigner(wmap: WignerMap, path: Path, title: str = '') -> Path:
    limit = float(np.max(np.abs(wmap.values))) or 1.0
    plt.figure(figsize=(5, 4))
    plt.pcolormesh(wmap.axis1.values, wmap.axis2.values, wmap.values.T,
                   cmap='RdBu_r', vmin=-limit, vmax=limit, shading='auto')
    plt.colorbar()
    plt.xlabel(f'{wmap.axis1.name} ({wmap.axis1.unit})')
    plt.ylabel(f'{wmap.axis2.name} ({wmap.axis2.unit})')
    if title:
        plt.title(title)
    return save_figure(path)


def plot_intensities(signals: dict[str, PulseSignal], path: Path) -> Path:
    plt.figure(figsize=(6, 3.5))
    for name, signal in signals.items():
        plt.plot(signal.t, signal.intensity, label=name)
    plt.xlabel('t (us)')
    plt.ylabel('intensity')
    plt.legend()
    return save_figure(path)


def plot_table(table: ResultTable, column: str, path: Path) -> Path:
    """One line per (protocol, n) of `column` against theta, or against m for scaling tables."""
    plt.figure(figsize=(6, 4))
    scaling = all(row.n == row.m for row in table.rows) and len({row.m for row in table.rows}) > 1
    groups = sorted({(row.protocol, None if scaling else row.n) for row in table.rows}, key=str)
    for protocol, n in groups:
        rows = table.select(protocol=protocol, n=n)
        x = [row.m if scaling else row.theta_rad for row in rows]
        y = [getattr(row, column) for row in rows]
        label = protocol if scaling else f'{protocol} n={n}'
        plt.plot(x, y, marker='o', label=label)
    plt.xlabel('m' if scaling else 'theta (rad)')
    plt.ylabel(column)
    plt.legend()
    return save_figure(path)
