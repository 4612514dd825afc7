import json
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from delayhjb.core.histories import Trajectory
from delayhjb.core.integrator import ControlSignal
from delayhjb.utils.logger import get_logger

logger = get_logger(__name__)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def canonical_json(data: Any) -> str:
    return json.dumps(_jsonable(data), sort_keys=True, separators=(',', ':'))


def write_json_report(path: str, payload: Dict[str, Any], manifest: Optional[Dict[str, Any]] = None) -> str:
    document = dict(payload)
    if manifest is not None:
        document['manifest'] = manifest
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_jsonable(document), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.debug(f"JSON report written: {os.path.basename(path)}")
    return path


def _write_frame(path: str, frame: pd.DataFrame, manifest: Optional[Dict[str, Any]]) -> str:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        if manifest is not None:
            f.write(f"# manifest: {canonical_json(manifest)}\n")
        frame.to_csv(f, index=False, float_format='%.17g', lineterminator='\n')
    logger.debug(f"CSV written: {os.path.basename(path)} ({len(frame)} rows)")
    return path


def trajectory_frame(trajectory: Trajectory, control: Optional[ControlSignal] = None,
                     running=None) -> pd.DataFrame:
    """Rows per node from t to theta; the control row at the last node repeats the final interval."""
    grid = trajectory.grid
    k = trajectory.start_index
    nodes = np.arange(k, grid.n_intervals + 1)
    columns: Dict[str, Any] = {'tau': grid.t0 + grid.delta * nodes}
    for i in range(trajectory.n):
        columns[f"x{i + 1}"] = trajectory.forward[:, i]
    if control is not None:
        values = np.vstack([control.values, control.values[-1:]]) if len(control.values) else control.values
        for i in range(values.shape[1]):
            columns[f"u{i + 1}"] = values[:, i]
    if running is not None:
        columns['running_cost'] = np.asarray(running, dtype=float).reshape(-1)
    return pd.DataFrame(columns)


def write_trajectory_csv(path: str, trajectory: Trajectory, control: Optional[ControlSignal] = None,
                         running=None, manifest: Optional[Dict[str, Any]] = None) -> str:
    return _write_frame(path, trajectory_frame(trajectory, control, running), manifest)


def write_control_csv(path: str, control: ControlSignal, manifest: Optional[Dict[str, Any]] = None) -> str:
    grid = control.grid
    starts = control.start_index + np.arange(len(control.values))
    columns: Dict[str, Any] = {'tau_start': grid.t0 + grid.delta * starts,
                               'tau_end': grid.t0 + grid.delta * (starts + 1)}
    for i in range(control.values.shape[1]):
        columns[f"u{i + 1}"] = control.values[:, i]
    return _write_frame(path, pd.DataFrame(columns), manifest)


def write_verdict_table(path: str, rows: List[Dict[str, Any]], manifest: Optional[Dict[str, Any]] = None) -> str:
    frame = pd.DataFrame([{k: (canonical_json(v) if isinstance(v, (list, tuple, np.ndarray, dict)) else v)
                           for k, v in row.items()} for row in rows])
    return _write_frame(path, frame, manifest)


def write_battery_summary(path: str, report, manifest: Optional[Dict[str, Any]] = None) -> str:
    """Per (probe label, check) pass counts and worst margins of a BatteryReport."""
    frame = report.to_frame()
    if frame.empty:
        summary = pd.DataFrame(columns=['label', 'check', 'rows', 'passed', 'worst_margin', 'refutation'])
    else:
        summary = (frame.groupby(['label', 'check'], sort=True)
                   .agg(rows=('passed', 'size'), passed=('passed', 'sum'),
                        worst_margin=('margin', 'min'), refutation=('refutation', 'max'))
                   .reset_index())
    return _write_frame(path, summary, manifest)


def read_table_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def read_manifest_line(path: str) -> Optional[Dict[str, Any]]:
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline()
    if first.startswith('# manifest: '):
        return json.loads(first[len('# manifest: '):])
    return None
