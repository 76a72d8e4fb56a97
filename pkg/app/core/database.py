"""
SQLAlchemy Run Ledger
Records CLI runs and hyperparameter-selection trials in SQLite
"""
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from app.core.logging import get_logger
from app.models.base import Base
from app.models.run_models import RunRecord, SelectionTrial

_log = get_logger(__name__)


class RunLedger:
    """SQLAlchemy database manager for run bookkeeping"""

    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.engine = create_engine(
            f"sqlite:///{self.db_path}",
            connect_args={"check_same_thread": False},
            echo=False,
        )
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        self.init_database()

    def init_database(self):
        """Initialize database schema"""
        Base.metadata.create_all(bind=self.engine)
        _log.debug("run ledger initialized: %s", self.db_path)

    @contextmanager
    def get_session(self):
        """Context manager for database sessions"""
        session = self.SessionLocal()
        try:
            yield session
            session.commit()
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

    # ==================== Runs ====================

    def log_run(self, command: str, status: str, message: str = "", seed: Optional[int] = None):
        with self.get_session() as session:
            session.add(
                RunRecord(
                    command=command,
                    status=status,
                    message=message,
                    seed=seed,
                    finished_at=datetime.utcnow(),
                )
            )

    def get_recent_runs(self, limit: int = 10) -> List[Dict]:
        with self.get_session() as session:
            results = session.query(RunRecord).order_by(RunRecord.id.desc()).limit(limit).all()
            return [result.to_dict() for result in results]

    # ==================== Selection Trials ====================

    def bulk_insert_trials(self, trials: Iterable[Dict]):
        """Bulk insert grid-point outcomes"""
        with self.get_session() as session:
            objects = [
                SelectionTrial(
                    method=t["method"],
                    d=t.get("d"),
                    samples=t.get("samples"),
                    alpha=t.get("alpha"),
                    recall_good=t.get("recall_good"),
                    recall_bad=t.get("recall_bad"),
                    recall_diff=t.get("recall_diff"),
                    n_terms=t.get("n_terms"),
                )
                for t in trials
            ]
            session.bulk_save_objects(objects)

    def get_trials(self, method: Optional[str] = None) -> List[Dict]:
        with self.get_session() as session:
            query = session.query(SelectionTrial)
            if method:
                query = query.filter(SelectionTrial.method == method)
            return [result.to_dict() for result in query.order_by(SelectionTrial.id).all()]


def open_ledger(path: Optional[str]) -> Optional[RunLedger]:
    """Ledger at ``path``, or None when bookkeeping is disabled"""
    if not path:
        return None
    return RunLedger(Path(path))
