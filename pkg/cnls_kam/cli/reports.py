"""
Run manifests and deterministic JSON / CSV writers
"""

import csv
import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from pydantic import BaseModel, Field


class RunManifest(BaseModel):
    """What was run, with which inputs, by which version"""
    subcommand: str = Field(..., description="lattice | normalform | melnikov | simulate | verify")
    config: Dict[str, Any] = Field(..., description="Fully resolved configuration")
    seed: int = Field(..., description="Seed used")
    tool_version: str = Field(..., description="cnls_kam version")
    input_hashes: Dict[str, str] = Field(default_factory=dict, description="sha256 of every input file")
    manifest_id: str = Field(..., description="sha256 of everything above")
    wall_time: Optional[float] = Field(None, description="Seconds spent")
    exit_code: Optional[int] = Field(None, description="0 pass, 1 verdict failure, 2 error")
    artifacts: Dict[str, str] = Field(default_factory=dict, description="Output file -> sha256")
    created_at: datetime = Field(default_factory=datetime.utcnow, description="Start of the run")

    class Config:
        json_schema_extra = {
            "example": {
                "subcommand": "lattice",
                "config": {"d": 2, "sites": [[1, 0], [-1, 0]], "radius": 5},
                "seed": 0,
                "tool_version": "0.3.0",
                "input_hashes": {},
                "manifest_id": "5f0c...",
                "wall_time": 0.04,
                "exit_code": 0,
                "artifacts": {"lattice_report.json": "9a1b..."},
            }
        }


def manifest_id(subcommand: str, config: Dict[str, Any], seed: int, tool_version: str,
                input_hashes: Dict[str, str]) -> str:
    payload = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "tool_version": tool_version,
        "input_hashes": input_hashes,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _plain(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_json(path: Path, payload: Any, run_manifest_id: Optional[str] = None) -> Path:
    """Sorted, indented JSON; the manifest id is embedded under 'manifest_id'"""
    data = _plain(payload)
    if run_manifest_id is not None:
        data = {"manifest_id": run_manifest_id, "report": data}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    return path


def format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]],
              run_manifest_id: Optional[str] = None) -> Path:
    """CSV with a leading '# manifest_id=...' comment and exact float formatting"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        if run_manifest_id is not None:
            handle.write(f"# manifest_id={run_manifest_id}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    """Rows of a file written by write_csv, comment line skipped"""
    with open(path, newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))
