import logging
import os

from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


class Settings:
    def __init__(self):
        self.database_url = os.getenv("MNAR_DATABASE_URL", "sqlite:///./data/runs.db")
        self.log_level = os.getenv("MNAR_LOG_LEVEL", "INFO")
        self.workers = int(os.getenv("MNAR_WORKERS", "1"))
        self.api_max_replicates = int(os.getenv("MNAR_API_MAX_REPLICATES", "50"))
        self.run_slow_tests = _flag("MNAR_RUN_SLOW")


settings = Settings()


def configure_logging(level: str = None) -> None:
    name = (level or settings.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
