"""HTTP JSON facade over AuthService.

POST /users/{id}/enroll        {"images": [3 x base64 PNG]}
POST /users/{id}/authenticate  {"image": base64 PNG}
POST /users/{id}/reset
GET  /healthz
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .authsvc import AuthService, decode_request_image
from .errors import (
    AlreadyEnrolled,
    BadImage,
    BadRequest,
    FallbackRequired,
    NotEnrolled,
)
from .filters import FEEDBACK_MESSAGES, FeedbackCode


class EnrollRequest(BaseModel):
    images: list[str]


class AuthenticateRequest(BaseModel):
    image: str


def _feedback_payload(codes) -> list[dict]:
    return [
        {"code": c, "message": FEEDBACK_MESSAGES[FeedbackCode(c)]} for c in codes
    ]


def create_app(service: AuthService) -> FastAPI:
    app = FastAPI(title="trinket authentication service")

    @app.exception_handler(BadRequest)
    @app.exception_handler(BadImage)
    def bad_input(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(AlreadyEnrolled)
    def already_enrolled(request, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(NotEnrolled)
    def not_enrolled(request, exc):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(FallbackRequired)
    def locked(request, exc):
        return JSONResponse(
            status_code=403,
            content={"error": str(exc), "fallback_required": True},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/users/{user_id}/enroll")
    def enroll(user_id: str, req: EnrollRequest):
        images = [decode_request_image(b) for b in req.images]
        result = service.enroll(user_id, images)
        if not result.ok:
            return JSONResponse(
                status_code=422,
                content={"feedback": _feedback_payload(result.feedback)},
            )
        return {"status": "enrolled"}

    @app.post("/users/{user_id}/authenticate")
    def authenticate(user_id: str, req: AuthenticateRequest):
        decision = service.authenticate(user_id, decode_request_image(req.image))
        return {
            "accepted": decision.accepted,
            "score": decision.score,
            "feedback": _feedback_payload(decision.feedback),
            "fallback_required": decision.fallback_required,
        }

    @app.post("/users/{user_id}/reset")
    def reset(user_id: str):
        service.reset_trinket(user_id)
        return {"status": "reset"}

    return app
