"""HTTP labeling service: serves query items to a human rater and feeds
their scores into the running learning loop.

The loop runs in a background thread and blocks on `HttpLabeler` whenever
it needs labels; the rater works through the current query set over the
JSON API, and completing the set wakes the loop to retrain and build the
next one. Every label and the loop's own bookkeeping are persisted on
write, so killing and restarting the process loses nothing. The rater
only ever sees images and ids: reference labels and pool margins stay
server-side.
"""

import json
import os
import secrets
import struct
import tempfile
import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np
from fastapi import Depends, FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .active import ActiveLearningConfig, extract_features, run_active_learning
from .corpus import N_CLASSES

DEFAULT_INSTRUCTIONS = """\
Score each dataset's overall image quality on a 1-5 scale:

  1 - excellent: no visible artifacts, fully diagnostic
  2 - good: minor artifacts that do not affect interpretation
  3 - acceptable: visible artifacts, still diagnostically usable
  4 - poor: artifacts impair interpretation of some structures
  5 - non-diagnostic: artifacts make the images unusable

Scroll through every slice before scoring. Judge only what you see; base
the score on the worst clinically relevant slice. You can revisit and
revise any score until the current query set is complete, and you can
stop at any time - your progress is saved and the session resumes where
you left off.
"""


class ServerShutdown(Exception):
    """Raised inside the loop thread when the service is stopping."""


class QuerySetComplete(Exception):
    """Submission arrived after the current query set was already done."""


def render_slice_png(volume, k):
    """Deterministic 8-bit grayscale PNG of slice k of a volume.

    The window spans the volume's 1st-99th intensity percentiles; a zero
    window (constant volume) renders uniform mid-gray 128.
    """
    vox = np.asarray(volume.voxels, dtype=np.float64)
    if not 0 <= k < vox.shape[0]:
        raise IndexError(f"slice {k} outside volume of depth {vox.shape[0]}")
    lo, hi = np.percentile(vox, [1.0, 99.0])
    sl = vox[k]
    if hi <= lo:
        gray = np.full(sl.shape, 128, dtype=np.uint8)
    else:
        gray = np.rint(np.clip((sl - lo) / (hi - lo), 0.0, 1.0) * 255.0)
        gray = gray.astype(np.uint8)
    return _encode_png_gray8(gray)


def _encode_png_gray8(gray):
    """Minimal PNG writer (grayscale, bit depth 8, filter 0 rows)."""
    h, w = gray.shape

    def chunk(tag, payload):
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload)))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + gray[r].tobytes() for r in range(h))
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(raw, 6))
            + chunk(b"IEND", b""))


def _atomic_write(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


class SessionState:
    """Rater-facing view of the run: current query set, labels, history.

    All mutations happen under one condition variable and are persisted
    immediately, so a killed process can resume mid-query-set. Items are
    served in the order the loop produced them (ascending uncertainty
    margin for the learning run).
    """

    def __init__(self, path=None, instructions=DEFAULT_INSTRUCTIONS,
                 rater_id="rater-1"):
        self.cond = threading.Condition()
        self.path = os.fspath(path) if path is not None else None
        self.instructions = instructions
        self.rater_id = rater_id
        self.session_id = secrets.token_hex(8)
        self.query_order = []
        self.status = {}
        self.labels = {}
        self.history = []
        self.audit = []
        self.run_state = "starting"
        self.curve = []
        self.pool_sizes = {"labeled": 0, "unlabeled": 0}
        if self.path is not None and os.path.exists(self.path):
            self._load()

    def _load(self):
        with open(self.path) as f:
            payload = json.load(f)
        self.session_id = payload["session_id"]
        self.query_order = payload["query_order"]
        self.status = payload["status"]
        self.labels = {k: int(v) for k, v in payload["labels"].items()}
        self.history = payload["history"]
        self.audit = payload["audit"]
        self.curve = [tuple(p) for p in payload["curve"]]
        self.pool_sizes = payload["pool_sizes"]

    def _persist_locked(self):
        if self.path is None:
            return
        payload = {
            "version": 1,
            "session_id": self.session_id,
            "query_order": self.query_order,
            "status": self.status,
            "labels": self.labels,
            "history": self.history,
            "audit": self.audit,
            "curve": [list(p) for p in self.curve],
            "pool_sizes": self.pool_sizes,
        }
        _atomic_write(self.path, json.dumps(payload))

    def set_run_state(self, value):
        with self.cond:
            self.run_state = value
            self.cond.notify_all()

    def record_curve_point(self, n_labeled, accuracy, ts):
        with self.cond:
            self.curve.append((n_labeled, accuracy, ts))
            self._persist_locked()

    def set_pool_sizes(self, labeled, unlabeled):
        with self.cond:
            self.pool_sizes = {"labeled": int(labeled), "unlabeled": int(unlabeled)}
            self._persist_locked()

    def begin_query_set(self, ids):
        """Install a new query set; labels persisted earlier are kept."""
        with self.cond:
            self.query_order = list(ids)
            self.status = {i: ("labeled" if i in self.labels else "pending")
                           for i in self.query_order}
            self.run_state = "waiting_for_labels"
            self._persist_locked()
            self.cond.notify_all()

    def next_pending(self):
        with self.cond:
            for pos, vid in enumerate(self.query_order):
                if self.status.get(vid) == "pending":
                    return vid, pos
            return None, None

    def submit_label(self, dataset_id, cls):
        """Record one score; returns (progress dict, query_complete)."""
        with self.cond:
            if dataset_id not in self.status:
                raise KeyError(dataset_id)
            if all(s == "labeled" for s in self.status.values()):
                # the loop may already have consumed this set; revisions
                # would desync the label store from the learner
                raise QuerySetComplete(dataset_id)
            record = {
                "dataset_id": dataset_id,
                "rater_id": self.rater_id,
                "class": int(cls),
                "submitted_at": time.time(),
                "session_id": self.session_id,
            }
            if self.status[dataset_id] == "labeled":
                self.audit.append({
                    "event": "overwrite",
                    "dataset_id": dataset_id,
                    "previous_class": self.labels[dataset_id],
                    "new_class": int(cls),
                    "at": record["submitted_at"],
                })
                self.history = [h for h in self.history
                                if h["dataset_id"] != dataset_id]
            self.labels[dataset_id] = int(cls)
            self.status[dataset_id] = "labeled"
            self.history.append(record)
            done = sum(1 for s in self.status.values() if s == "labeled")
            complete = done == len(self.query_order)
            self._persist_locked()
            self.cond.notify_all()
            return {"labeled": done, "total": len(self.query_order)}, complete

    def wait_for_completion(self, shutdown, poll=0.2):
        """Block until every current item is labeled; honors shutdown."""
        with self.cond:
            while True:
                if shutdown.is_set():
                    raise ServerShutdown("service stopping before the query "
                                         "set was completed")
                if self.query_order and all(self.status[i] == "labeled"
                                            for i in self.query_order):
                    return {i: self.labels[i] for i in self.query_order}
                self.cond.wait(poll)


class HttpLabeler:
    """Labeler interface backed by the rater session.

    Looks exactly like the oracle labeler to the loop: called with a list
    of ids, returns {id: class} - it just takes as long as the human does.
    """

    def __init__(self, session, shutdown):
        self.session = session
        self.shutdown = shutdown

    def __call__(self, ids):
        self.session.begin_query_set(list(ids))
        answers = self.session.wait_for_completion(self.shutdown)
        self.session.set_run_state("retraining")
        return answers


class LabelingService:
    """Owns the database, the session, and the background learning loop."""

    def __init__(self, db, cfg=None, features=None, run_dir=None,
                 rater_id="rater-1", instructions=DEFAULT_INSTRUCTIONS):
        self.db = db
        self.cfg = cfg or ActiveLearningConfig()
        self.features = features
        self.run_dir = os.fspath(run_dir) if run_dir is not None else None
        self.al_state_path = None
        session_path = None
        if self.run_dir is not None:
            os.makedirs(self.run_dir, exist_ok=True)
            self.al_state_path = os.path.join(self.run_dir, "al_state.json")
            session_path = os.path.join(self.run_dir, "session.json")
        self.session = SessionState(session_path, instructions, rater_id)
        self.shutdown = threading.Event()
        self.thread = None
        self.curve = None
        self.error = None

    def start(self):
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()
        return self

    def _run(self):
        try:
            if self.features is None:
                self.session.set_run_state("extracting_features")
                self.features = extract_features(self.db)
            self.session.set_run_state("retraining")
            labeler = HttpLabeler(self.session, self.shutdown)
            self.curve = run_active_learning(
                self.db, self.cfg, labeler, features=self.features,
                state_path=self.al_state_path, on_point=self._on_point)
            self.session.set_run_state("done")
        except ServerShutdown:
            self.session.set_run_state("paused")
        except Exception as exc:  # surfaced via /api/status, not swallowed
            self.error = exc
            self.session.set_run_state("failed")

    def _on_point(self, n_labeled, accuracy, ts):
        self.session.record_curve_point(n_labeled, accuracy, ts)
        self.session.set_pool_sizes(len(self.db.labeled), len(self.db.unlabeled))

    def stop(self, timeout=10.0):
        self.shutdown.set()
        if self.thread is not None:
            self.thread.join(timeout)


class LabelBody(BaseModel):
    dataset_id: str
    label_class: int = Field(alias="class", ge=1, le=N_CLASSES)


def create_app(service, token):
    """The JSON API in front of a LabelingService."""
    app = FastAPI(title="labeling service", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.service = service

    def authed(request: Request):
        header = request.headers.get("authorization", "")
        supplied = header.removeprefix("Bearer ").strip() if header else \
            request.headers.get("x-auth-token", "")
        if not secrets.compare_digest(supplied, token):
            raise HTTPException(status_code=401, detail="invalid token")

    @app.get("/api/query", dependencies=[Depends(authed)])
    def get_query():
        s = service.session
        with s.cond:
            state = s.run_state
            if state in ("done", "failed", "paused"):
                raise HTTPException(
                    status_code=409,
                    detail=f"no active run (state: {state}); start or resume "
                           "a labeling run to receive queries")
            vid, pos = None, None
            for p, i in enumerate(s.query_order):
                if s.status.get(i) == "pending":
                    vid, pos = i, p
                    break
            if state != "waiting_for_labels" or vid is None:
                return {"status": "waiting", "reason": "retraining"}
            total = len(s.query_order)
            labeled = sum(1 for v in s.status.values() if v == "labeled")
        vol = service.db.volumes[vid]
        depth = int(vol.voxels.shape[0])
        return {
            "status": "item",
            "item": {
                "dataset_id": vid,
                "position": pos + 1,
                "total": total,
                "labeled": labeled,
                "n_slices": depth,
                "height": int(vol.voxels.shape[1]),
                "width": int(vol.voxels.shape[2]),
                "image_uris": [f"/api/image/{vid}/{k}" for k in range(depth)],
            },
        }

    @app.post("/api/label", dependencies=[Depends(authed)])
    def post_label(body: LabelBody):
        try:
            progress, complete = service.session.submit_label(
                body.dataset_id, body.label_class)
        except KeyError:
            raise HTTPException(
                status_code=409,
                detail=f"{body.dataset_id!r} is not in the current query set")
        except QuerySetComplete:
            raise HTTPException(
                status_code=409,
                detail="the current query set is already complete; wait for "
                       "the next one")
        return {"ok": True, "progress": progress, "query_complete": complete}

    @app.get("/api/history", dependencies=[Depends(authed)])
    def get_history():
        s = service.session
        with s.cond:
            items = [{"dataset_id": h["dataset_id"], "class": h["class"],
                      "submitted_at": h["submitted_at"],
                      "n_slices": int(service.db.volumes[
                          h["dataset_id"]].voxels.shape[0])}
                     for h in s.history]
        return {"items": items, "count": len(items)}

    @app.get("/api/instructions", dependencies=[Depends(authed)])
    def get_instructions():
        return {"instructions": service.session.instructions}

    @app.get("/api/status", dependencies=[Depends(authed)])
    def get_status():
        s = service.session
        with s.cond:
            labeled = len(service.db.labeled)
            unlabeled = len(service.db.unlabeled)
            point = s.curve[-1] if s.curve else None
            query = None
            if s.query_order:
                query = {
                    "labeled": sum(1 for v in s.status.values()
                                   if v == "labeled"),
                    "total": len(s.query_order),
                }
            return {
                "run_state": s.run_state,
                "n_labeled": labeled,
                "n_unlabeled": unlabeled,
                "curve_point": list(point) if point else None,
                "query": query,
            }

    @app.get("/api/image/{dataset_id}/{k}")
    def get_image(dataset_id: str, k: int):
        vol = service.db.volumes.get(dataset_id)
        if vol is None:
            raise HTTPException(status_code=404, detail="unknown dataset")
        try:
            png = render_slice_png(vol, k)
        except IndexError:
            raise HTTPException(status_code=404, detail="slice out of range")
        return Response(content=png, media_type="image/png")

    return app


def serve(db, cfg=None, features=None, run_dir=None, token=None,
          host="127.0.0.1", port=8000, static_dir=None):
    """Start the labeling service and block serving HTTP."""
    import uvicorn

    token = token or os.environ.get("ALQA_TOKEN") or secrets.token_urlsafe(16)
    service = LabelingService(db, cfg, features=features, run_dir=run_dir)
    app = create_app(service, token)
    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=os.fspath(static_dir), html=True),
                  name="ui")
    service.start()
    print(f"labeling service on http://{host}:{port}  token: {token}")
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        service.stop()
    return service
