from pathlib import Path

from sqlalchemy import text

from app.config import DATABASE_URL


def init_db():
    from app.logger import get_engine

    engine = get_engine()
    if engine is None:
        return None

    if DATABASE_URL.startswith("sqlite:///"):
        Path(DATABASE_URL[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)

    # Schema creation
    create_table_sql = """
    CREATE TABLE IF NOT EXISTS run_logs (
        id INTEGER PRIMARY KEY,
        command TEXT,
        problem TEXT,
        config_hash TEXT,
        seed INTEGER,
        metrics TEXT,
        meta TEXT,
        created_at TIMESTAMP
    );
    """

    with engine.begin() as conn:
        conn.execute(text(create_table_sql))

    return engine
