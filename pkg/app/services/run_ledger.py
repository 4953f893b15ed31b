import logging
from typing import List, Optional

from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from app.models.database import SessionLocal
from app.models.init_db import init_db
from app.models.records import RunRecord

logger = logging.getLogger(__name__)


def record_run(
    db: Session,
    command: str,
    status: str,
    exit_code: int,
    scenario: Optional[str] = None,
    seed: Optional[int] = None,
    config_digest: Optional[str] = None,
    output_dir: Optional[str] = None,
    message: Optional[str] = None,
) -> Optional[RunRecord]:
    """Append one ledger row; a ledger failure is logged, never raised."""
    record = RunRecord(
        command=command,
        scenario=scenario,
        seed=seed,
        status=status,
        exit_code=exit_code,
        config_digest=config_digest,
        output_dir=output_dir,
        message=message,
    )
    try:
        db.add(record)
        db.commit()
        db.refresh(record)
    except SQLAlchemyError as e:
        logger.error(f"could not record {command} run: {e}", exc_info=True)
        db.rollback()
        return None
    return record


def list_runs(db: Session, limit: int = 50, command: Optional[str] = None) -> List[RunRecord]:
    query = db.query(RunRecord)
    if command:
        query = query.filter(RunRecord.command == command)
    return query.order_by(RunRecord.id.desc()).limit(limit).all()


def record_cli_run(**fields) -> None:
    """Open a session on the configured ledger, creating tables on first use."""
    try:
        init_db()
    except SQLAlchemyError as e:
        logger.error(f"run ledger unavailable: {e}", exc_info=True)
        return
    db = SessionLocal()
    try:
        record_run(db, **fields)
    finally:
        db.close()
