from pydantic import BaseModel

# --- Error Models ---
# --- For Documentation Page ---

class HTTPError(BaseModel):
    detail: str

    model_config = {
        "json_schema_extra": {
            "example": {
                "detail": "Unknown scenario 'follow_nurse'"
            }
        }
    }
