"""
Main FastAPI Application
Purpose: Entry point for the RescueSight post-detector API
"""

import logging
import os
import time
from contextlib import asynccontextmanager

import uvicorn
from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from utils.config import VERSION

load_dotenv()

# Set up logging
logging.basicConfig(level=os.getenv("RESCUE_LOG_LEVEL", "INFO").upper())
logger = logging.getLogger(__name__)

ROUTERS = ("anchors", "fusion", "tracking", "reid", "evaluation")


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    logger.info("🚀 Starting RescueSight API...")
    include_routers()
    logger.info("✅ API startup complete!")
    yield
    # Shutdown
    logger.info("🛑 Shutting down API...")


# Create FastAPI app with lifespan
app = FastAPI(
    title="RescueSight API",
    description="Post-detector pipeline for aerial search-and-rescue human detection",
    version=VERSION,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan
)

cors_origins = [o for o in os.getenv("CORS_ORIGINS", "http://localhost:3000,http://localhost:5173").split(",") if o]

app.add_middleware(
    CORSMiddleware,
    allow_origins=cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def include_routers() -> int:
    """Include every API router, skipping any that fail to import"""
    routers_loaded = 0
    for name in ROUTERS:
        try:
            module = __import__(f"api.{name}", fromlist=["router"])
            app.include_router(module.router)
            logger.info(f"{name.capitalize()} router loaded")
            routers_loaded += 1
        except Exception as e:
            logger.warning(f"Failed to load {name} router: {str(e)}")

    logger.info(f"Loaded {routers_loaded}/{len(ROUTERS)} routers")
    return routers_loaded


@app.get("/")
def root():
    """Root endpoint with API information"""
    return {
        "message": "RescueSight API",
        "version": VERSION,
        "status": "running",
        "documentation": "/docs",
        "endpoints": {
            "health_check": "/health",
            "detailed_health": "/health/detailed",
            "anchor_analysis": "/anchors/analyze",
            "frame_fusion": "/fusion/frame",
            "sequence_tracking": "/tracking/sequence",
            "patch_histogram": "/reid/histogram",
            "evaluation_curve": "/evaluation/curve"
        },
        "features": [
            "Anchor coverage analysis and k-means anchor shapes",
            "Optical/thermal detection fusion",
            "IoU tracking",
            "Appearance histograms for re-identification",
            "Miss rate / FPPI evaluation"
        ]
    }


@app.get("/health")
def health_check():
    """General health check endpoint"""
    return {
        "status": "healthy",
        "service": "rescuesight-api",
        "version": VERSION,
        "timestamp": int(time.time()),
        "message": "Service is running"
    }


@app.get("/health/detailed")
def detailed_health_check():
    """Detailed health check endpoint with agent status"""
    try:
        from agents.detector_support import get_anchor_analysis_agent
        from agents.evaluation import get_evaluation_agent
        from agents.fusion import FusionAgent
        from agents.reid import ReidAgent
        from agents.tracking import get_tracking_agent
        from utils.calibration import default_rig

        checks = {
            "anchor_analysis": get_anchor_analysis_agent,
            "fusion": lambda: FusionAgent(default_rig()),
            "tracking": get_tracking_agent,
            "reid": ReidAgent,
            "evaluation": get_evaluation_agent,
        }
        agents_status = {}
        for name, build in checks.items():
            try:
                build()
                agents_status[name] = "healthy"
            except Exception as e:
                agents_status[name] = f"error: {str(e)}"

        healthy_agents = sum(1 for status in agents_status.values() if status == "healthy")
        total_agents = len(agents_status)
        overall_status = "healthy" if healthy_agents == total_agents else "degraded" if healthy_agents > 0 else "unhealthy"

        return {
            "status": overall_status,
            "service": "rescuesight-api",
            "agents": agents_status,
            "agent_summary": f"{healthy_agents}/{total_agents} agents healthy",
            "timestamp": int(time.time())
        }

    except Exception as e:
        logger.error(f"Health check failed: {str(e)}")
        return {
            "status": "unhealthy",
            "service": "rescuesight-api",
            "error": str(e),
            "timestamp": int(time.time())
        }


if __name__ == "__main__":
    logger.info("Starting FastAPI server on http://localhost:8000")
    uvicorn.run("main:app", host="0.0.0.0", port=8000, reload=True)
