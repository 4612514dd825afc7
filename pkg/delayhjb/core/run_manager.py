import hashlib
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from delayhjb import __version__
from delayhjb.config.config import Config
from delayhjb.utils import exporter
from delayhjb.utils.logger import DelayHJBLogger, get_logger
from delayhjb.utils.security import PathValidator

logger = get_logger(__name__)
run_logger = DelayHJBLogger.get_logger('run_manager')


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    problem_hash: str
    config: Dict[str, Any] = field(default_factory=dict)
    version: str = __version__
    problem: Optional[str] = None

    def body(self) -> Dict[str, Any]:
        return {'command': self.command, 'problem_hash': self.problem_hash, 'problem': self.problem,
                'config': self.config, 'version': self.version}

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(exporter.canonical_json(self.body()).encode('utf-8')).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        return {**self.body(), 'config_hash': self.config_hash}


def build_manifest(command: str, problem_path: Optional[str], config: Dict[str, Any]) -> RunManifest:
    problem_hash = file_sha256(problem_path) if problem_path else ''
    problem = os.path.basename(problem_path) if problem_path else None
    return RunManifest(command=command, problem_hash=problem_hash, config=dict(config), problem=problem)


class RunManager:
    """Per-run output directories `<command>_<config_hash[:12]>` and manifest-stamped artifacts."""

    def __init__(self, output_root: Optional[str] = None):
        self.output_root = os.path.abspath(output_root or Config.OUTPUT_FOLDER)

    def run_directory(self, manifest: RunManifest) -> str:
        name = PathValidator.sanitize_run_name(f"{manifest.command}_{manifest.config_hash[:12]}")
        is_valid, message = PathValidator.validate_run_name(name)
        if not is_valid:
            raise ValueError(message)
        path = PathValidator.safe_join(self.output_root, name)
        os.makedirs(path, exist_ok=True)
        return path

    def start(self, manifest: RunManifest) -> str:
        path = self.run_directory(manifest)
        exporter.write_json_report(os.path.join(path, 'manifest.json'), manifest.to_dict())
        DelayHJBLogger.log_run_event('run_started', f"{manifest.command} -> {os.path.basename(path)}")
        return path

    def _target(self, run_dir: str, filename: str) -> str:
        return PathValidator.safe_join(run_dir, PathValidator.sanitize_run_name(filename))

    def write_json(self, run_dir: str, filename: str, payload: Dict[str, Any], manifest: RunManifest) -> str:
        return exporter.write_json_report(self._target(run_dir, filename), payload, manifest.to_dict())

    def write_trajectory(self, run_dir: str, filename: str, trajectory, manifest: RunManifest,
                         control=None, running=None) -> str:
        return exporter.write_trajectory_csv(self._target(run_dir, filename), trajectory, control, running,
                                             manifest.to_dict())

    def write_control(self, run_dir: str, filename: str, control, manifest: RunManifest) -> str:
        return exporter.write_control_csv(self._target(run_dir, filename), control, manifest.to_dict())

    def write_verdicts(self, run_dir: str, filename: str, rows: List[Dict[str, Any]], manifest: RunManifest) -> str:
        return exporter.write_verdict_table(self._target(run_dir, filename), rows, manifest.to_dict())

    def write_battery(self, run_dir: str, report, manifest: RunManifest) -> List[str]:
        return [
            exporter.write_verdict_table(self._target(run_dir, 'battery_rows.csv'), report.rows, manifest.to_dict()),
            exporter.write_battery_summary(self._target(run_dir, 'battery_summary.csv'), report, manifest.to_dict()),
            exporter.write_json_report(self._target(run_dir, 'battery.json'), report.to_dict(), manifest.to_dict()),
        ]

    def finish(self, run_dir: str, manifest: RunManifest, refuted: bool = False) -> None:
        if refuted:
            DelayHJBLogger.log_run_event('check_failed', f"{manifest.command} in {os.path.basename(run_dir)}",
                                         severity='medium')
        else:
            DelayHJBLogger.log_run_event('run_finished', f"{manifest.command} in {os.path.basename(run_dir)}")

    def list_runs(self) -> List[Dict[str, Any]]:
        runs = []
        if not os.path.isdir(self.output_root):
            return runs
        for name in sorted(os.listdir(self.output_root)):
            manifest_path = os.path.join(self.output_root, name, 'manifest.json')
            if os.path.isfile(manifest_path):
                runs.append({'name': name, 'path': os.path.join(self.output_root, name)})
        return runs
