import json
import uuid
from datetime import datetime
from typing import Dict, List, Optional

from sqlalchemy.orm import Session

from cnls_kam.database.models import ArtifactRecord, RunRecord


class RunLedgerService:
    def __init__(self, db: Session):
        self.db = db

    def create_run(self, subcommand: str, manifest_id: str, seed: int, tool_version: str,
                   config: dict, input_hashes: Optional[Dict[str, str]] = None) -> str:
        """Record the start of a run and return its run_id"""
        run_id = uuid.uuid4().hex

        run = RunRecord(
            run_id=run_id,
            subcommand=subcommand,
            manifest_id=manifest_id,
            seed=seed,
            tool_version=tool_version,
            config_json=json.dumps(config, sort_keys=True),
            input_hashes_json=json.dumps(input_hashes or {}, sort_keys=True)
        )

        self.db.add(run)
        self.db.commit()
        self.db.refresh(run)

        return run_id

    def get_run(self, run_id: str) -> Optional[RunRecord]:
        """Get a run by ID"""
        return self.db.query(RunRecord).filter(RunRecord.run_id == run_id).first()

    def get_runs(self, subcommand: Optional[str] = None, manifest_id: Optional[str] = None,
                 limit: int = 50) -> List[RunRecord]:
        """Most recent runs, optionally filtered by subcommand or manifest"""
        query = self.db.query(RunRecord)
        if subcommand is not None:
            query = query.filter(RunRecord.subcommand == subcommand)
        if manifest_id is not None:
            query = query.filter(RunRecord.manifest_id == manifest_id)
        return query.order_by(RunRecord.created_at.desc(), RunRecord.id.desc()).limit(limit).all()

    def add_artifact(self, run_id: str, path: str, kind: str, sha256: str) -> ArtifactRecord:
        """Attach an output file to a run"""
        artifact = ArtifactRecord(run_id=run_id, path=path, kind=kind, sha256=sha256)

        self.db.add(artifact)

        # Touch the run's updated_at timestamp
        run = self.get_run(run_id)
        if run:
            run.updated_at = datetime.utcnow()

        self.db.commit()
        self.db.refresh(artifact)

        return artifact

    def get_artifacts(self, run_id: str) -> List[ArtifactRecord]:
        """Artifacts of a run in the order they were written"""
        return self.db.query(ArtifactRecord).filter(
            ArtifactRecord.run_id == run_id
        ).order_by(ArtifactRecord.id.asc()).all()

    def finish_run(self, run_id: str, exit_code: int, wall_time: float) -> bool:
        """Store the exit code and wall time of a finished run"""
        run = self.get_run(run_id)
        if run:
            run.exit_code = exit_code
            run.wall_time = wall_time
            run.updated_at = datetime.utcnow()
            self.db.commit()
            return True
        return False

    def delete_run(self, run_id: str) -> bool:
        """Permanently delete a run and all its artifacts"""
        run = self.get_run(run_id)
        if run:
            self.db.delete(run)
            self.db.commit()
            return True
        return False

    def get_run_stats(self, run_id: str) -> dict:
        """Get statistics for a run"""
        run = self.get_run(run_id)
        if not run:
            return {}

        artifacts = self.get_artifacts(run_id)
        # Reruns of the same manifest should have produced the same files
        same_manifest = self.db.query(RunRecord).filter(RunRecord.manifest_id == run.manifest_id).count()

        return {
            "run_id": run_id,
            "subcommand": run.subcommand,
            "manifest_id": run.manifest_id,
            "created_at": run.created_at,
            "updated_at": run.updated_at,
            "exit_code": run.exit_code,
            "wall_time": run.wall_time,
            "artifact_count": len(artifacts),
            "artifacts": {a.path: a.sha256 for a in artifacts},
            "runs_with_same_manifest": same_manifest
        }
