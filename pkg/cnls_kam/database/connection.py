import os
from functools import lru_cache
from typing import Iterator, Optional

from dotenv import load_dotenv
from sqlalchemy import create_engine
from sqlalchemy.engine import URL, Engine
from sqlalchemy.orm import Session, sessionmaker

from cnls_kam.database.models import Base

load_dotenv()


def get_database_url(db_path: Optional[str] = None) -> str:
    """
    Ledger URL: PostgreSQL from the DB_* variables when ENVIRONMENT=production,
    otherwise a SQLite file (db_path, then LEDGER_DB_PATH, then runs.db).
    """
    if os.getenv("ENVIRONMENT", "development") == "production":
        url = URL.create(
            "postgresql",
            username=os.getenv("DB_USER", "postgres"),
            password=os.getenv("DB_PASSWORD") or None,
            host=os.getenv("DB_HOST", "localhost"),
            port=int(os.getenv("DB_PORT", "5432")),
            database=os.getenv("DB_NAME", "cnls_kam"),
        )
        return url.render_as_string(hide_password=False)
    return f"sqlite:///{db_path or os.getenv('LEDGER_DB_PATH', 'runs.db')}"


@lru_cache(maxsize=None)
def get_engine(url: Optional[str] = None) -> Engine:
    # one engine per URL; SQL echo in debug mode
    return create_engine(url or get_database_url(), echo=os.getenv("DEBUG", "false").lower() == "true")


def create_tables(engine: Optional[Engine] = None):
    Base.metadata.create_all(bind=engine or get_engine())


def get_db(engine: Optional[Engine] = None) -> Iterator[Session]:
    """Yield a ledger session and close it afterwards"""
    db = sessionmaker(autocommit=False, autoflush=False, bind=engine or get_engine())()
    try:
        yield db
    finally:
        db.close()
