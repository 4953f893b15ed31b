from datetime import datetime

from sqlalchemy import Column, DateTime, Integer, String, Text

from app.models.database import Base


class RunRecord(Base):
    """One CLI or API run. Ledger rows never feed back into outputs."""

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, index=True)
    scenario = Column(String, nullable=True)
    seed = Column(Integer, nullable=True)
    status = Column(String)
    exit_code = Column(Integer)
    config_digest = Column(String, nullable=True)
    output_dir = Column(String, nullable=True)
    message = Column(Text, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "command": self.command,
            "scenario": self.scenario,
            "seed": self.seed,
            "status": self.status,
            "exit_code": self.exit_code,
            "config_digest": self.config_digest,
            "output_dir": self.output_dir,
            "message": self.message,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }
