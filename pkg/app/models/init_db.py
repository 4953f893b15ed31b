import logging

from app.models.database import Base, engine
from app.models.records import RunRecord  # noqa: F401  registers the table

logger = logging.getLogger(__name__)


def init_db(bind=None):
    """Create the run ledger tables if they do not exist."""
    bind = bind or engine
    logger.info(f"creating ledger tables on {bind.url}")
    Base.metadata.create_all(bind=bind)


if __name__ == "__main__":
    from app.config import configure_logging

    configure_logging()
    init_db()
