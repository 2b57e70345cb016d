from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from dotenv import load_dotenv

load_dotenv()

from app.routes import episodes, modulator

# --- FastAPI main app code---

app = FastAPI(title="Social Navigation Modulator API", version="1.0")
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # tighten to the dashboard domain in prod
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(modulator.router)
app.include_router(episodes.router)

@app.get("/")
def test():
    return {"success": True, "project": "social-nav-modulator"}
