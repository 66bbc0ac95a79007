from datetime import datetime, timezone

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from .database import init_database
from .middleware import setup_middleware

from .api.incidents import router as incidents_router
from .api.runs import router as runs_router

app = FastAPI(
    title="Incident Aggregation API",
    description="Online incident aggregation and pipeline run registry",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["*"],
    max_age=86400
)

# logging, error handling
setup_middleware(app)


@app.on_event("startup")
async def startup_event():
    init_database()

app.include_router(incidents_router, prefix="/api/v1", tags=["incidents"])
app.include_router(runs_router, prefix="/api/v1", tags=["runs"])


@app.get("/")
async def root():
    return {"message": "Incident Aggregation API", "version": "1.0.0"}


@app.get("/health")
async def health_check():
    return {"status": "healthy", "timestamp": datetime.now(timezone.utc).isoformat()}
