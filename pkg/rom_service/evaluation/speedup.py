"""
Wall-clock comparison of the ROM stages against the FOM.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import pandas as pd

logger = logging.getLogger(__name__)

SPEEDUP_COLUMNS = [
    'M', 'steps', 'ode_s', 'post1_s', 'post2_s', 'fom_s',
    'speedup_heat', 'speedup_chip', 'speedup_ode', 'dof_reduction',
]


@dataclass(frozen=True)
class StageTimings:
    """
    Seconds spent per stage over the same number of time steps.

    post1 reconstructs the heating layer and post2 the whole chip at every
    recorded step.
    """

    M: int
    ode_s: float
    post1_s: float
    post2_s: float
    fom_s: float
    steps: int
    n_cells: int


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else float('inf')


def speedup_report(timings: Sequence[StageTimings]) -> pd.DataFrame:
    """One row per timing set; speedup = FOM / (ODEs + PostX)"""
    rows = []
    for t in timings:
        rows.append({
            'M': t.M,
            'steps': t.steps,
            'ode_s': t.ode_s,
            'post1_s': t.post1_s,
            'post2_s': t.post2_s,
            'fom_s': t.fom_s,
            'speedup_heat': _ratio(t.fom_s, t.ode_s + t.post1_s),
            'speedup_chip': _ratio(t.fom_s, t.ode_s + t.post2_s),
            'speedup_ode': _ratio(t.fom_s, t.ode_s),
            'dof_reduction': t.n_cells / t.M,
        })

    df = pd.DataFrame(rows, columns=SPEEDUP_COLUMNS)
    for row in df.itertuples():
        logger.info(
            f"  M={row.M}: heating {row.speedup_heat:.1f}x, chip {row.speedup_chip:.1f}x, "
            f"ODE only {row.speedup_ode:.1f}x, DoF reduction {row.dof_reduction:.0f}x"
        )
    return df
