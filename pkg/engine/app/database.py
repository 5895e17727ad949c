from sqlalchemy import create_engine, Column, Integer, Float, String, DateTime, Boolean
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker, Session
from datetime import datetime
from pathlib import Path
from typing import Iterator, Optional, Union
import csv
import logging
import os

logger = logging.getLogger(__name__)

DATABASE_ENV = "IIG_DATABASE_URL"
BENCH_DB_NAME = "bench.db"


# Database configuration
def _resolve_database_url(output_dir: Union[str, Path] = ".") -> str:
    env_url = os.getenv(DATABASE_ENV)
    if not env_url or env_url.strip() == "":
        return f"sqlite:///{Path(output_dir) / BENCH_DB_NAME}"
    return env_url.strip()


def session_factory(url: str) -> sessionmaker:
    # SQLite needs special thread option; others don't
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    engine = create_engine(url, connect_args=connect_args)
    create_tables(engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)


Base = declarative_base()


class BenchRun(Base):
    """One planner or mission run of a benchmark sweep"""
    __tablename__ = "bench_runs"

    id = Column(Integer, primary_key=True, index=True)
    created_at = Column(DateTime, default=datetime.utcnow)

    sweep = Column(String, index=True)       # 'beams', 'range', 'radius'
    setting = Column(Float, index=True)      # swept parameter value
    seed = Column(Integer)
    info_kind = Column(String)               # 'mi', 'miub', 'gpvr', 'ugpvr'

    # Planner outcome
    samples = Column(Integer)
    nodes = Column(Integer)
    total_info = Column(Float)
    total_cost = Column(Float)
    converged = Column(Boolean, default=False)
    final_mean = Column(Float, nullable=True)

    # Monitoring sweeps only
    rmse = Column(Float, nullable=True)

    runtime_s = Column(Float)


BENCH_COLUMNS = ("sweep", "setting", "seed", "info_kind", "samples", "nodes", "total_info", "total_cost",
                 "converged", "final_mean", "rmse")


def create_tables(engine: Engine):
    """Create database tables"""
    Base.metadata.create_all(bind=engine)


def get_db(factory: sessionmaker) -> Iterator[Session]:
    """Get database session"""
    db = factory()
    try:
        yield db
    finally:
        db.close()


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def export_bench_csv(db: Session, path: Union[str, Path], sweep: Optional[str] = None) -> int:
    """Write the stored runs ordered by (setting, seed); returns the row count"""
    query = db.query(BenchRun)
    if sweep is not None:
        query = query.filter(BenchRun.sweep == sweep)
    rows = query.order_by(BenchRun.setting, BenchRun.seed).all()
    path = Path(path)
    try:
        with path.open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(BENCH_COLUMNS)
            for row in rows:
                writer.writerow([_cell(getattr(row, c)) for c in BENCH_COLUMNS])
    except OSError as e:
        raise OSError(f"Could not write bench CSV {path}: {e}") from e
    logger.info(f"Exported {len(rows)} bench rows to {path}")
    return len(rows)
