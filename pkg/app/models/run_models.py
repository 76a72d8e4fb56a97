"""
SQLAlchemy Models for the run ledger
"""
from sqlalchemy import Column, DateTime, Float, Index, Integer, String, Text

from app.models.base import LedgerRow


class RunRecord(LedgerRow):
    """One CLI command invocation"""

    __tablename__ = "run_records"

    command = Column(String(50), nullable=False)
    status = Column(String(20), nullable=False)
    message = Column(Text)
    seed = Column(Integer)
    finished_at = Column(DateTime, nullable=False)

    __table_args__ = (
        Index("idx_run_command", "command"),
    )

    def to_dict(self):
        return {
            "command": self.command,
            "status": self.status,
            "message": self.message or "",
            "seed": self.seed,
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
        }


class SelectionTrial(LedgerRow):
    """Validation outcome of one hyperparameter grid point"""

    __tablename__ = "selection_trials"

    method = Column(String(100), nullable=False)
    d = Column(Integer)
    samples = Column(Integer)
    alpha = Column(Float)
    recall_good = Column(Float)
    recall_bad = Column(Float)
    recall_diff = Column(Float)
    n_terms = Column(Integer)

    __table_args__ = (
        Index("idx_trial_method", "method"),
    )

    def to_dict(self):
        return self.fields("method", "d", "samples", "alpha", "recall_good", "recall_bad", "recall_diff", "n_terms")
