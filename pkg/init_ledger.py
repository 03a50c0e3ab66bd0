"""
Run ledger setup

Creates the runs/artifacts tables and prints what the ledger already holds.
Usage: python init_ledger.py [--db-path runs.db]
"""

import argparse
import sys
from typing import List, Optional

from sqlalchemy import func, inspect, select
from sqlalchemy.engine import Engine

from cnls_kam.database.connection import create_tables, get_database_url, get_engine
from cnls_kam.database.models import Base, RunRecord


def missing_tables(engine: Engine) -> List[str]:
    existing = set(inspect(engine).get_table_names())
    return [name for name in Base.metadata.tables if name not in existing]


def count_runs(engine: Engine) -> int:
    with engine.connect() as conn:
        return conn.execute(select(func.count()).select_from(RunRecord.__table__)).scalar_one()


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Create the cnls_kam run ledger")
    parser.add_argument("--db-path", default=None, help="SQLite file (development only)")
    args = parser.parse_args(argv)

    url = get_database_url(args.db_path)
    print(f"🚀 cnls_kam ledger at {url}")
    engine = get_engine(url)

    try:
        todo = missing_tables(engine)
    except Exception as e:
        print(f"❌ Cannot reach the ledger database: {e}")
        print("💡 Check ENVIRONMENT and the DB_* variables, or pass --db-path.")
        return 1

    if todo:
        print(f"🔄 Creating {', '.join(todo)}...")
        try:
            create_tables(engine)
        except Exception as e:
            print(f"❌ Failed to create tables: {e}")
            return 1
        print("✅ Ledger tables created")
    else:
        print("✅ Ledger tables already present")

    print(f"📊 {count_runs(engine)} run(s) recorded")
    return 0


if __name__ == "__main__":
    sys.exit(main())
