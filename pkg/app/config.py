import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# --- Paths ---
APP_DIR = Path(__file__).resolve().parent
DATA_DIR = Path(os.getenv("NAV_DATA_DIR", str(APP_DIR / "data")))
OUTPUT_DIR = Path(os.getenv("NAV_OUTPUT_DIR", "runs"))

RULES_PATH = DATA_DIR / "rules.yaml"
METRICS_PATH = DATA_DIR / "metrics.yaml"
SCENARIO_DIR = DATA_DIR / "scenarios"
SUITE_DIR = DATA_DIR / "suites"

# --- Reasoning service ---
MODULATOR_URL = os.getenv("MODULATOR_URL")
MODULATOR_TIMEOUT = float(os.getenv("MODULATOR_TIMEOUT", "15"))

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()


def scenario_path(name: str) -> Path:
    """Bundled scenario file for a short name like 'follow_doctor'."""
    return SCENARIO_DIR / f"{name}.yaml"


def bundled_scenarios():
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))
