"""HTTP editing service: instances, revisions, edits, renders, mix, inversion.

All edit semantics live in the edit module; handlers only translate between
HTTP and library calls. Edits on one instance are serialized by a
non-blocking per-instance lock (the loser gets 409); renders are pure reads
of (checkpoint, revision, camera) and may run concurrently.
"""

from __future__ import annotations

import io
import json
import re
import threading
import traceback
import uuid
from email.parser import BytesParser
from email.policy import default as email_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import edit as E
from . import pngio
from .geometry import CameraPose, orbit_pose
from .mesh import extract_mesh, mesh_to_obj, object_occupancy
from .render import RenderConfig, render_image
from .training import TrainState

__all__ = ["ServiceState", "make_server", "run_service"]


class HttpError(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status


class ServiceState:
    """Checkpoint + instance registry + job table behind the endpoints."""

    def __init__(self, train_state):
        self.train = train_state
        self.weights = train_state.weights
        self.dtype = train_state.config.dtype
        self.instances = {}  # id -> list[InstanceState] (append-only revisions)
        self.edit_locks = {}
        self.jobs = {}
        self.registry_lock = threading.Lock()
        self.render_cache = {}

    # -- registry -----------------------------------------------------------

    def new_instance(self, first_state):
        iid = uuid.uuid4().hex[:12]
        with self.registry_lock:
            self.instances[iid] = [first_state]
            self.edit_locks[iid] = threading.Lock()
        return iid

    def revisions(self, iid):
        try:
            return self.instances[iid]
        except KeyError:
            raise HttpError(404, f"unknown instance {iid}") from None

    def state_at(self, iid, rev=None):
        revs = self.revisions(iid)
        if rev is None:
            return revs[-1], len(revs) - 1
        if not 0 <= rev < len(revs):
            raise HttpError(404, f"instance {iid} has no revision {rev}")
        return revs[rev], rev

    def instance_from_source(self, source, seed=0):
        if source == "sample":
            table = {
                oid: {"s": e["s"].data, "t": e["t"].data}
                for oid, e in self.train.embeddings.items()
            }
            prior = E.fit_prior(table)
            z_s, z_t = E.sample_latents(prior, np.random.default_rng(seed))
            return E.InstanceState.from_latents(self.weights, z_s, z_t, source={"kind": "sample"})
        if source not in self.train.embeddings:
            raise HttpError(404, f"unknown object {source}")
        e = self.train.embeddings[source]
        return E.InstanceState.from_latents(
            self.weights, e["s"].data, e["t"].data, source={"kind": "object", "oid": source}
        )

    # -- rendering ------------------------------------------------------------

    def render_png(self, iid, rev, params, what="rgb"):
        state, rev = self.state_at(iid, rev)
        key = (iid, rev, what, tuple(sorted(params.items())))
        cached = self.render_cache.get(key)
        if cached is not None:
            return cached
        pose = self._pose_from(params)
        n = int(params.get("samples", 0)) or None
        rgb, mask, assigned = render_image(
            self.weights, state.part_views(self.dtype), pose, RenderConfig(), n_samples=n
        )
        if what == "rgb":
            png = pngio.encode_png(pngio.float_to_u8(rgb))
        elif what == "mask":
            png = pngio.encode_png(pngio.float_to_u8(mask))
        else:  # per-pixel part assignment, part index + 1 (0 = background)
            png = pngio.encode_png((assigned + 1).astype(np.uint8))
        self.render_cache[key] = png
        return png

    def _pose_from(self, params):
        if "cam_to_world" in params:
            mat = json.loads(params["cam_to_world"])
            return CameraPose(
                fx=float(params["fx"]), fy=float(params["fy"]),
                cx=float(params["cx"]), cy=float(params["cy"]),
                width=int(params.get("width", 128)), height=int(params.get("height", 128)),
                cam_to_world=np.asarray(mat, dtype=np.float64).reshape(4, 4),
            )
        return orbit_pose(
            float(params.get("azimuth", 30.0)),
            float(params.get("elevation", 35.0)),
            float(params.get("radius", 2.6)),
            int(params.get("width", 128)),
            int(params.get("height", 128)),
        )


def _spawn_invert_job(svc, mode, views, seed, steps=None):
    job_id = uuid.uuid4().hex[:12]
    svc.jobs[job_id] = {"status": "running"}

    def work():
        try:
            table = {
                oid: {"s": e["s"].data, "t": e["t"].data}
                for oid, e in svc.train.embeddings.items()
            }
            prior = E.fit_prior(table)
            fn = E.invert_image if mode == "image" else E.invert_shape
            kw = {} if steps is None else {"steps": steps}
            (z_s, z_t), report = fn(svc.weights, views, seed=seed, prior=prior, **kw)
            inst = E.InstanceState.from_latents(
                svc.weights, z_s, z_t, source={"kind": "inversion", "mode": mode}
            )
            iid = svc.new_instance(inst)
            svc.jobs[job_id] = {
                "status": "done",
                "instance_id": iid,
                "initial_loss": report["initial"],
                "final_loss": report["final"],
            }
        except Exception as exc:  # job failure surfaces via polling
            svc.jobs[job_id] = {"status": "failed", "error": str(exc)}

    threading.Thread(target=work, daemon=True).start()
    return job_id


def _parse_multipart(headers, body):
    msg = BytesParser(policy=email_policy).parsebytes(
        b"Content-Type: " + headers.get("Content-Type", "").encode() + b"\r\n\r\n" + body
    )
    if not msg.is_multipart():
        raise HttpError(422, "expected multipart/form-data")
    fields = {}
    for part in msg.iter_parts():
        name = part.get_param("name", header="content-disposition")
        fields.setdefault(name, []).append(part.get_payload(decode=True))
    return fields


def _views_from_multipart(fields):
    cams = json.loads(fields["cameras"][0].decode("utf-8"))
    images = fields.get("images", [])
    masks = fields.get("masks", [])
    if len(masks) != len(cams["views"]):
        raise HttpError(422, "one mask per camera view required")
    views = []
    from PIL import Image

    for i, vd in enumerate(cams["views"]):
        pose = CameraPose.from_dict(vd)
        mask = np.array(Image.open(io.BytesIO(masks[i])).convert("L")) == 255
        img = None
        if i < len(images):
            img = np.asarray(
                Image.open(io.BytesIO(images[i])).convert("RGB"), dtype=np.float32
            ) / 255.0
        views.append({"pose": pose, "mask": mask, "image": img})
    return views


class Handler(BaseHTTPRequestHandler):
    svc: ServiceState = None

    # -- plumbing ----------------------------------------------------------

    def log_message(self, fmt, *args):
        pass

    def _send(self, status, body, ctype="application/json"):
        data = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _json_body(self):
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError as exc:
            raise HttpError(422, f"bad JSON body: {exc}") from None

    def _dispatch(self, method):
        url = urlparse(self.path)
        params = {k: v[0] for k, v in parse_qs(url.query).items()}
        try:
            self._route(method, url.path.rstrip("/"), params)
        except HttpError as exc:
            self._send(exc.status, {"error": str(exc)})
        except Exception:
            incident = uuid.uuid4().hex[:8]
            traceback.print_exc()
            self._send(500, {"error": "internal failure", "incident": incident})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    # -- routes ---------------------------------------------------------------

    def _route(self, method, path, params):
        svc = self.svc
        if method == "GET" and path == "/api/objects":
            return self._send(200, {"objects": sorted(svc.train.embeddings)})

        if method == "POST" and path == "/api/instances":
            body = self._json_body()
            inst = svc.instance_from_source(body.get("source", "sample"), int(body.get("seed", 0)))
            iid = svc.new_instance(inst)
            return self._send(200, {"instance_id": iid, "revision": 0})

        m = re.fullmatch(r"/api/instances/([0-9a-f]+)/parts", path)
        if m and method == "GET":
            rev = int(params["rev"]) if "rev" in params else None
            state, rev = svc.state_at(m.group(1), rev)
            parts = [
                {
                    "index": i,
                    "q": p.q.tolist(),
                    "t": p.t.tolist(),
                    "s": p.s.tolist(),
                    "query_scale": p.query_scale.tolist(),
                    "active": bool(p.active),
                    "color_override": None if p.color_override is None else p.color_override.tolist(),
                }
                for i, p in enumerate(state.parts)
            ]
            return self._send(200, {"revision": rev, "parts": parts})

        m = re.fullmatch(r"/api/instances/([0-9a-f]+)/edits", path)
        if m and method == "POST":
            iid = m.group(1)
            revs = svc.revisions(iid)
            body = self._json_body()
            lock = svc.edit_locks[iid]
            if not lock.acquire(blocking=False):
                raise HttpError(409, f"concurrent edit on instance {iid}")
            try:
                try:
                    new_state = E.apply_edit(
                        revs[-1], body.get("op"), body.get("part"), body.get("params")
                    )
                except E.EditError as exc:
                    raise HttpError(422, f"invalid edit: {exc}") from None
                revs.append(new_state)
                return self._send(200, {"revision": len(revs) - 1})
            finally:
                lock.release()

        m = re.fullmatch(r"/api/instances/([0-9a-f]+)/undo", path)
        if m and method == "POST":
            iid = m.group(1)
            revs = svc.revisions(iid)
            lock = svc.edit_locks[iid]
            if not lock.acquire(blocking=False):
                raise HttpError(409, f"concurrent edit on instance {iid}")
            try:
                if len(revs) < 2:
                    raise HttpError(422, "nothing to undo")
                revs.append(revs[-2])
                return self._send(200, {"revision": len(revs) - 1})
            finally:
                lock.release()

        m = re.fullmatch(r"/api/instances/([0-9a-f]+)/render", path)
        if m and method == "GET":
            rev = int(params["rev"]) if "rev" in params else None
            png = svc.render_png(m.group(1), rev, params, what=params.get("what", "rgb"))
            return self._send(200, png, ctype="image/png")

        m = re.fullmatch(r"/api/instances/([0-9a-f]+)/partmap", path)
        if m and method == "GET":
            rev = int(params["rev"]) if "rev" in params else None
            png = svc.render_png(m.group(1), rev, params, what="partmap")
            return self._send(200, png, ctype="image/png")

        m = re.fullmatch(r"/api/instances/([0-9a-f]+)/mesh", path)
        if m and method == "POST":
            state, _ = svc.state_at(m.group(1))
            field = object_occupancy(svc.weights, state.part_views(svc.dtype))
            mesh = extract_mesh(field)
            return self._send(200, mesh_to_obj(mesh).encode(), ctype="model/obj")

        if method == "POST" and path == "/api/mix":
            body = self._json_body()
            sels = body.get("selections", [])
            if not sels:
                raise HttpError(422, "selections required")
            resolved = []
            for s in sels:
                state, _ = svc.state_at(s["instance"], s.get("rev"))
                pair = (state, int(s["part"]))
                take_shape = s.get("shape", True)
                take_tex = s.get("texture", True)
                if take_shape:
                    resolved.append(
                        {"shape": pair, "texture": pair if take_tex else None}
                    )
                elif take_tex:
                    if not resolved:
                        raise HttpError(422, "texture-only selection needs a preceding shape")
                    resolved[-1]["texture"] = pair
                else:
                    raise HttpError(422, "selection takes neither shape nor texture")
            try:
                mixed = E.mix(resolved)
            except E.EditError as exc:
                raise HttpError(422, str(exc)) from None
            iid = svc.new_instance(mixed)
            return self._send(200, {"instance_id": iid})

        if method == "POST" and path == "/api/interpolate":
            body = self._json_body()
            a, _ = svc.state_at(body["a"])
            b, _ = svc.state_at(body["b"])
            try:
                mid = E.interpolate(
                    svc.weights, a, b, float(body.get("alpha", 0.5)),
                    scope=body.get("scope", "whole"), channel=body.get("channel", "both"),
                )
            except E.EditError as exc:
                raise HttpError(422, str(exc)) from None
            iid = svc.new_instance(mid)
            return self._send(200, {"instance_id": iid})

        if method == "POST" and path == "/api/invert":
            length = int(self.headers.get("Content-Length", 0))
            fields = _parse_multipart(self.headers, self.rfile.read(length))
            mode = (fields.get("mode", [b"shape"])[0]).decode()
            views = _views_from_multipart(fields)
            steps = int(params["steps"]) if "steps" in params else None
            job_id = _spawn_invert_job(svc, mode, views, seed=0, steps=steps)
            return self._send(200, {"job_id": job_id})

        m = re.fullmatch(r"/api/jobs/([0-9a-f]+)", path)
        if m and method == "GET":
            job = svc.jobs.get(m.group(1))
            if job is None:
                raise HttpError(404, f"unknown job {m.group(1)}")
            return self._send(200, job)

        raise HttpError(404, f"no route for {method} {path}")


def make_server(checkpoint_path, host="127.0.0.1", port=8642):
    svc = ServiceState(TrainState.load(checkpoint_path))
    handler = type("BoundHandler", (Handler,), {"svc": svc})
    return ThreadingHTTPServer((host, port), handler)


def run_service(checkpoint_path, host="127.0.0.1", port=8642):
    server = make_server(checkpoint_path, host, port)
    print(f"serving on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
