from app.config import configure_logging
from app.models.init_db import init_db

if __name__ == "__main__":
    configure_logging()
    init_db()
    print("Run ledger initialized successfully!")
