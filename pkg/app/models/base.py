"""
Declarative base for run-ledger tables
"""
from datetime import datetime
from typing import Any, Dict

from sqlalchemy import Column, DateTime, Integer
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class LedgerRow(Base):
    """Append-only row: an autoincrement id and the time it was written"""

    __abstract__ = True

    id = Column(Integer, primary_key=True, autoincrement=True)
    recorded_at = Column(DateTime, default=datetime.utcnow, nullable=False)

    def fields(self, *names: str) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in names}
