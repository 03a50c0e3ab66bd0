from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(64), unique=True, index=True, nullable=False)
    subcommand = Column(String(32), index=True, nullable=False)  # 'lattice', 'normalform', 'melnikov', 'simulate', 'verify'
    manifest_id = Column(String(64), index=True, nullable=False)  # sha256 of the deterministic manifest part
    seed = Column(Integer, nullable=False, default=0)
    tool_version = Column(String(32), nullable=False)
    config_json = Column(Text, nullable=False)
    input_hashes_json = Column(Text, nullable=False, default="{}")
    exit_code = Column(Integer, nullable=True)  # None while the run is in progress
    wall_time = Column(Float, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)
    updated_at = Column(DateTime, default=datetime.utcnow, onupdate=datetime.utcnow)

    artifacts = relationship("ArtifactRecord", back_populates="run", cascade="all, delete-orphan")


class ArtifactRecord(Base):
    __tablename__ = "artifacts"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(64), ForeignKey("runs.run_id"), nullable=False)
    path = Column(String(1024), nullable=False)
    kind = Column(String(16), nullable=False)  # 'json', 'csv'
    sha256 = Column(String(64), nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)

    run = relationship("RunRecord", back_populates="artifacts")
