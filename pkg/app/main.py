from fastapi import FastAPI

from app.config import configure_logging
from app.models.init_db import init_db
from app.routers import analysis

configure_logging()

app = FastAPI(title="Nonignorable Response Models")

# Include routers
app.include_router(analysis.router, prefix="/api", tags=["analysis"])


@app.on_event("startup")
def startup_event():
    # Create run ledger tables
    init_db()


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
