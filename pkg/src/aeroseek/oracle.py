"""Pluggable dual-task semantic oracle.

Three query kinds flow through one asynchronous client:

* ``categories``: expand the instruction into a target category list.
* ``score_keyframes``: one relevance score in [0, 1] per keyframe summary.
* ``verify_target``: scan detection batches for the described target.

The scripted backend answers from scenario ground truth with configurable
fidelity (score noise, accept/reject accuracies). Latency is simulated in
episode time by the client regardless of backend, so a remote HTTP backend
plugs in without changing mission timing semantics.
"""

from __future__ import annotations

import json
import threading
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .keyframes import Keyframe
from .perception import Detection
from .world import RELATED_CATEGORIES, CATEGORIES, Scenario, VoxelGrid

KIND_CATEGORIES = "categories"
KIND_SCORE = "score_keyframes"
KIND_VERIFY = "verify_target"

MAX_TARGET_CATEGORIES = 5


class BudgetExhaustedError(RuntimeError):
    """Raised when a dispatch would exceed the episode query budget."""


@dataclass
class OracleRequest:
    kind: str
    payload: dict
    request_id: int = -1


@dataclass
class OracleResponse:
    request_id: int
    kind: str
    payload: dict


@dataclass
class QueryLedger:
    budget: int
    used: int = 0
    records: list[dict] = field(default_factory=list)

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def charge(self, kind: str, now: float, latency: float) -> int:
        if self.remaining <= 0:
            raise BudgetExhaustedError(f"query budget {self.budget} exhausted")
        self.used += 1
        rid = self.used
        self.records.append({"request_id": rid, "kind": kind, "t_dispatch": now,
                             "latency": latency, "ready_at": now + latency})
        return rid


@dataclass
class LatencyModel:
    mean: float = 3.0
    jitter: float = 0.5
    tail_prob: float = 0.02
    tail_latency: float = 10.0

    def sample(self, rng: np.random.Generator) -> float:
        tail = rng.random() < self.tail_prob
        base = max(0.0, float(rng.normal(self.mean, self.jitter))) if self.jitter > 0 \
            else max(0.0, self.mean)
        return self.tail_latency if tail else base


@dataclass
class OracleParams:
    base_match: float = 0.8
    base_adjacent: float = 0.4
    base_other: float = 0.1
    score_sigma: float = 0.1
    true_accept: float = 0.95
    false_accept: float = 0.05

    @staticmethod
    def perfect() -> "OracleParams":
        return OracleParams(score_sigma=0.0, true_accept=1.0, false_accept=0.0)


def extract_target_categories(instruction: str) -> list[str]:
    """Vocabulary categories named in the instruction, expanded with relatives.

    Falls back to an empty list when no vocabulary word appears; callers with
    ground-truth access may substitute the scenario target category then.
    """
    text = instruction.lower()
    heads = [c for c in CATEGORIES if c.replace("_", " ") in text or c in text]
    out: list[str] = []
    for head in heads:
        for cat in (head, *RELATED_CATEGORIES.get(head, ())):
            if cat not in out:
                out.append(cat)
    return out[:MAX_TARGET_CATEGORIES]


def summarize_keyframe(grid: VoxelGrid, kf: Keyframe) -> dict:
    """JSON-safe keyframe summary: capture pose plus visible region areas."""
    region = grid.region.reshape(-1)[kf.visible_cells]
    areas: dict[str, int] = {}
    for code in np.unique(region):
        if code < 0:
            continue
        tag = grid.region_tags[int(code)]
        areas[tag] = int((region == code).sum())
    return {"pose": kf.pose.to_list(), "region_areas": areas}


def build_categories_request(instruction: str) -> OracleRequest:
    return OracleRequest(KIND_CATEGORIES, {"instruction": instruction})


def build_score_request(grid: VoxelGrid, batch: list[Keyframe]) -> OracleRequest:
    return OracleRequest(KIND_SCORE, {"summaries": [summarize_keyframe(grid, kf)
                                                    for kf in batch]})


def build_verify_request(batch: list[Keyframe]) -> OracleRequest:
    return OracleRequest(KIND_VERIFY, {
        "keyframes": [{"pose": kf.pose.to_list(),
                       "detections": [d.to_dict() for d in kf.detections]}
                      for kf in batch],
    })


class ScriptedOracle:
    """Ground-truth-backed oracle with configurable fidelity.

    Keyframe scores depend on the dominant visible region: high for the
    region holding the target, mid for regions adjacent to it, low elsewhere,
    plus clamped Gaussian noise. Verification accepts the true target with
    probability true_accept and any same-category candidate with probability
    false_accept.
    """

    def __init__(self, scenario: Scenario, params: OracleParams,
                 rng: np.random.Generator | None = None):
        self.scenario = scenario
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng(0)
        target = scenario.target
        self.target_id = target.object_id
        self.target_category = target.category
        anchor = scenario.grid.world_to_index(target.position)
        code = int(scenario.grid.region[anchor])
        self.target_region = scenario.grid.region_tags[code] if code >= 0 else None
        self._adjacent = self._region_adjacency(scenario.grid).get(self.target_region, set())
        self._target_categories = frozenset(self.categories(scenario.instruction))

    @staticmethod
    def _region_adjacency(grid: VoxelGrid) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {tag: set() for tag in grid.region_tags}
        region = grid.region
        for axis in (0, 1):
            a = np.moveaxis(region, axis, 0)[:-1]
            b = np.moveaxis(region, axis, 0)[1:]
            pairs = np.stack([a.reshape(-1), b.reshape(-1)], axis=1)
            pairs = pairs[(pairs[:, 0] >= 0) & (pairs[:, 1] >= 0) & (pairs[:, 0] != pairs[:, 1])]
            for ca, cb in np.unique(pairs, axis=0):
                ta, tb = grid.region_tags[int(ca)], grid.region_tags[int(cb)]
                adj[ta].add(tb)
                adj[tb].add(ta)
        return adj

    # -- query answers -----------------------------------------------------------

    def categories(self, instruction: str) -> list[str]:
        cats = extract_target_categories(instruction)
        if not cats:
            cats = [self.target_category,
                    *RELATED_CATEGORIES.get(self.target_category, ())]
            cats = list(dict.fromkeys(cats))[:MAX_TARGET_CATEGORIES]
        return cats

    def score_keyframes(self, summaries: list[dict]) -> list[float]:
        out = []
        for summary in summaries:
            areas = summary.get("region_areas") or {}
            if areas:
                best = max(sorted(areas), key=lambda t: areas[t])
                if best == self.target_region:
                    base = self.params.base_match
                elif best in self._adjacent:
                    base = self.params.base_adjacent
                else:
                    base = self.params.base_other
            else:
                base = self.params.base_other
            noisy = base + float(self.rng.normal(0.0, self.params.score_sigma)) \
                if self.params.score_sigma > 0 else base
            out.append(float(np.clip(noisy, 0.0, 1.0)))
        return out

    def verify_target(self, keyframes: list[dict]) -> dict:
        true_hit = None
        false_hits = []
        for ki, kf in enumerate(keyframes):
            for di, det in enumerate(kf.get("detections", [])):
                src = det.get("source_object_id")
                if src == self.target_id:
                    if true_hit is None:
                        true_hit = (ki, di, det["position"])
                elif det.get("category") in self._target_categories:
                    false_hits.append((ki, di, det["position"]))
        if true_hit is not None:
            if self.rng.random() < self.params.true_accept:
                ki, di, pos = true_hit
                return {"match": True, "keyframe_index": ki, "detection_index": di,
                        "position": list(pos)}
            return {"match": False}
        for ki, di, pos in false_hits:
            if self.rng.random() < self.params.false_accept:
                return {"match": True, "keyframe_index": ki, "detection_index": di,
                        "position": list(pos)}
        return {"match": False}

    def answer(self, request: OracleRequest) -> dict:
        if request.kind == KIND_CATEGORIES:
            return {"categories": self.categories(request.payload["instruction"])}
        if request.kind == KIND_SCORE:
            return {"scores": self.score_keyframes(request.payload["summaries"])}
        if request.kind == KIND_VERIFY:
            return self.verify_target(request.payload["keyframes"])
        raise ValueError(f"unknown oracle request kind {request.kind!r}")


class RemoteOracle:
    """HTTP backend: POSTs the serialized request, returns the parsed payload."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def answer(self, request: OracleRequest) -> dict:
        body = json.dumps({"kind": request.kind, "payload": request.payload}).encode()
        req = urllib.request.Request(self.endpoint + "/oracle", data=body,
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode())["payload"]


def serve_oracle(backend, host: str = "127.0.0.1", port: int = 0):
    """Serve any oracle backend over HTTP; returns (server, thread).

    Call server.shutdown() when done. Intended for tests and demos.
    """

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            data = json.loads(self.rfile.read(length).decode())
            request = OracleRequest(data["kind"], data["payload"])
            payload = backend.answer(request)
            body = json.dumps({"payload": payload}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


@dataclass
class _Pending:
    handle: int
    request: OracleRequest
    ready_at: float
    response: OracleResponse


class AsyncOracleClient:
    """Non-blocking oracle frontend with simulated latency and backpressure.

    dispatch() charges the ledger, samples a latency, and captures the answer
    immediately (backends are deterministic functions of the request), but the
    response only becomes visible to poll() once episode time reaches
    dispatch + latency. At most max_inflight_per_kind requests of each kind
    may be pending; dispatch returns None when the slot is busy.
    """

    def __init__(self, backend, latency: LatencyModel, ledger: QueryLedger,
                 rng: np.random.Generator, max_inflight_per_kind: int = 1):
        self.backend = backend
        self.latency = latency
        self.ledger = ledger
        self.rng = rng
        self.max_inflight_per_kind = max_inflight_per_kind
        self._pending: list[_Pending] = []

    def inflight(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self._pending)
        return sum(1 for p in self._pending if p.request.kind == kind)

    def dispatch(self, request: OracleRequest, now: float) -> int | None:
        """Returns a handle, or None if the per-kind slot is busy.

        Raises BudgetExhaustedError when the ledger is spent.
        """
        if self.inflight(request.kind) >= self.max_inflight_per_kind:
            return None
        latency = self.latency.sample(self.rng)
        handle = self.ledger.charge(request.kind, now, latency)
        request.request_id = handle
        payload = self.backend.answer(request)
        response = OracleResponse(handle, request.kind, payload)
        self._pending.append(_Pending(handle, request, now + latency, response))
        return handle

    def poll(self, now: float) -> list[OracleResponse]:
        """Responses whose simulated latency has elapsed, oldest first."""
        ready = [p for p in self._pending if p.ready_at <= now]
        ready.sort(key=lambda p: (p.ready_at, p.handle))
        self._pending = [p for p in self._pending if p.ready_at > now]
        return [p.response for p in ready]
