"""HTTP annotation-session service.

Backs the browser annotation tool: sessions hold a working list of
circles (auto-proposed or manually placed) over one image. Mutations use
optimistic concurrency: every mutating request carries the client's
last-seen revision; a stale revision gets a 409 with the current state
so the client can re-sync. Sessions live in memory and are snapshotted to
disk as JSON after every mutation for crash recovery.
"""

from __future__ import annotations

import io
import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .classical import CandidateCircle, ClassicalParams, propose_candidates
from .raster import convert_depth_16_to_8, rasterize_disc, read_image, write_image
from .synthgen import write_circles


@dataclass
class SessionCircle:
    circle_id: int
    cx: float
    cy: float
    r: float
    provenance: str  # "auto" | "manual"

    def to_json(self) -> dict:
        return {"id": self.circle_id, "cx": self.cx, "cy": self.cy,
                "r": self.r, "provenance": self.provenance}


@dataclass
class AnnotationSession:
    session_id: str
    image_id: str
    image: np.ndarray  # 8-bit working copy
    circles: dict = field(default_factory=dict)  # id -> SessionCircle
    revision: int = 0
    next_circle_id: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def state(self) -> dict:
        return {
            "id": self.session_id,
            "image": self.image_id,
            "width": int(self.image.shape[1]),
            "height": int(self.image.shape[0]),
            "revision": self.revision,
            "circles": [self.circles[k].to_json() for k in sorted(self.circles)],
        }

    def check_bounds(self, cx: float, cy: float, r: float) -> str | None:
        h, w = self.image.shape
        if not (0 <= cx < w and 0 <= cy < h):
            return f"circle center ({cx}, {cy}) outside {w}x{h} image"
        if r <= 0:
            return "radius must be positive"
        return None


class CreateSessionBody(BaseModel):
    image: str


class ProposeBody(BaseModel):
    revision: int
    params: dict = {}


class AddCircleBody(BaseModel):
    revision: int
    cx: float
    cy: float
    r: float


class PatchCircleBody(BaseModel):
    revision: int
    cx: float | None = None
    cy: float | None = None
    r: float | None = None


class RevisionBody(BaseModel):
    revision: int


def create_app(data_dir: str = "temviro_sessions") -> FastAPI:
    app = FastAPI(title="temviro annotation service")
    os.makedirs(os.path.join(data_dir, "sessions"), exist_ok=True)
    os.makedirs(os.path.join(data_dir, "exports"), exist_ok=True)

    sessions: dict[str, AnnotationSession] = {}
    images: dict[str, np.ndarray] = {}
    registry_lock = threading.Lock()
    counters = {"session": 0, "image": 0}

    def snapshot(s: AnnotationSession) -> None:
        path = os.path.join(data_dir, "sessions", f"{s.session_id}.json")
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump({"state": s.state(), "next_circle_id": s.next_circle_id}, f)
        os.replace(tmp, path)

    def restore(session_id: str) -> AnnotationSession | None:
        path = os.path.join(data_dir, "sessions", f"{session_id}.json")
        if not os.path.exists(path):
            return None
        with open(path) as f:
            snap = json.load(f)
        st = snap["state"]
        img = images.get(st["image"])
        if img is None:
            img_path = os.path.join(data_dir, "exports", f"{st['image']}.pgm")
            if not os.path.exists(img_path):
                return None
            img = read_image(img_path)
            images[st["image"]] = img
        s = AnnotationSession(session_id=session_id, image_id=st["image"], image=img,
                              revision=st["revision"], next_circle_id=snap["next_circle_id"])
        for c in st["circles"]:
            s.circles[c["id"]] = SessionCircle(c["id"], c["cx"], c["cy"], c["r"],
                                               c["provenance"])
        return s

    def get_session(session_id: str) -> AnnotationSession | None:
        s = sessions.get(session_id)
        if s is None:
            with registry_lock:
                s = sessions.get(session_id)
                if s is None:
                    s = restore(session_id)
                    if s is not None:
                        sessions[session_id] = s
        return s

    def not_found(what: str):
        return JSONResponse(status_code=404, content={"error": f"unknown {what}"})

    def conflict(s: AnnotationSession):
        return JSONResponse(status_code=409,
                            content={"error": "stale revision", "state": s.state()})

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        try:
            img = read_image(body.image)
        except (OSError, ValueError) as e:
            return JSONResponse(status_code=422, content={"error": str(e)})
        if img.dtype == np.uint16:
            img = convert_depth_16_to_8(img)
        with registry_lock:
            counters["image"] += 1
            counters["session"] += 1
            image_id = f"img{counters['image']}"
            session_id = f"s{counters['session']}"
            images[image_id] = img
            s = AnnotationSession(session_id=session_id, image_id=image_id, image=img)
            sessions[session_id] = s
        # The image is persisted beside the snapshots so sessions survive
        # restarts even when the source file moves.
        write_image(img, os.path.join(data_dir, "exports", f"{image_id}.pgm"))
        snapshot(s)
        return s.state()

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        s = get_session(session_id)
        if s is None:
            return not_found("session")
        with s.lock:
            return s.state()

    @app.post("/sessions/{session_id}/propose")
    def propose(session_id: str, body: ProposeBody):
        s = get_session(session_id)
        if s is None:
            return not_found("session")
        try:
            params = ClassicalParams(**body.params)
        except TypeError as e:
            return JSONResponse(status_code=422, content={"error": str(e)})
        candidates = propose_candidates(s.image, params)
        with s.lock:
            if body.revision != s.revision:
                return conflict(s)
            for c in candidates:
                s.circles[s.next_circle_id] = SessionCircle(
                    s.next_circle_id, c.cx, c.cy, c.r, "auto")
                s.next_circle_id += 1
            s.revision += 1
            snapshot(s)
            return s.state()

    @app.post("/sessions/{session_id}/circles")
    def add_circle(session_id: str, body: AddCircleBody):
        s = get_session(session_id)
        if s is None:
            return not_found("session")
        with s.lock:
            if body.revision != s.revision:
                return conflict(s)
            problem = s.check_bounds(body.cx, body.cy, body.r)
            if problem:
                return JSONResponse(status_code=422, content={"error": problem})
            s.circles[s.next_circle_id] = SessionCircle(
                s.next_circle_id, body.cx, body.cy, body.r, "manual")
            s.next_circle_id += 1
            s.revision += 1
            snapshot(s)
            return s.state()

    @app.patch("/sessions/{session_id}/circles/{circle_id}")
    def move_circle(session_id: str, circle_id: int, body: PatchCircleBody):
        s = get_session(session_id)
        if s is None:
            return not_found("session")
        with s.lock:
            if body.revision != s.revision:
                return conflict(s)
            c = s.circles.get(circle_id)
            if c is None:
                return not_found("circle")
            cx = body.cx if body.cx is not None else c.cx
            cy = body.cy if body.cy is not None else c.cy
            r = body.r if body.r is not None else c.r
            problem = s.check_bounds(cx, cy, r)
            if problem:
                return JSONResponse(status_code=422, content={"error": problem})
            c.cx, c.cy, c.r = cx, cy, r
            s.revision += 1
            snapshot(s)
            return s.state()

    @app.delete("/sessions/{session_id}/circles/{circle_id}")
    def delete_circle(session_id: str, circle_id: int, body: RevisionBody):
        s = get_session(session_id)
        if s is None:
            return not_found("session")
        with s.lock:
            if body.revision != s.revision:
                return conflict(s)
            if circle_id not in s.circles:
                return not_found("circle")
            del s.circles[circle_id]
            s.revision += 1
            snapshot(s)
            return s.state()

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        s = get_session(session_id)
        if s is None:
            return not_found("session")
        with s.lock:
            h, w = s.image.shape
            mask = np.zeros((h, w), dtype=np.uint8)
            circles = [s.circles[k] for k in sorted(s.circles)]
            for c in circles:
                mask[rasterize_disc(h, w, c.cx, c.cy, c.r)] = 1
            mask_path = os.path.join(data_dir, "exports", f"{s.session_id}_mask.pgm")
            circles_path = os.path.join(data_dir, "exports", f"{s.session_id}_circles.jsonl")
            write_image(mask, mask_path)
            write_circles(
                [CandidateCircle(c.cx, c.cy, c.r) for c in circles], circles_path)
            return {
                "mask_path": os.path.abspath(mask_path),
                "circles_path": os.path.abspath(circles_path),
                "circles": [c.to_json() for c in circles],
                "revision": s.revision,
            }

    @app.get("/images/{image_id}.png")
    def get_image(image_id: str):
        img = images.get(image_id)
        if img is None:
            img_path = os.path.join(data_dir, "exports", f"{image_id}.pgm")
            if os.path.exists(img_path):
                img = read_image(img_path)
                images[image_id] = img
        if img is None:
            return not_found("image")
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(img, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    return app
