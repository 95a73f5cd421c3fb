"""Judge-driven edge refinement.

Every edge of an initial graph is turned into a prompt made of the textual
description and rendered statistics of both channels plus a fixed yes/no
question. A structural judge answers; "yes" keeps the edge with its weight,
"no" drops it. Edges are never added.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx
import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigError, DataError, JudgeError, RefinementError
from .features import (
    StatFeatures,
    TextualDescription,
    compute_stat_features,
    describe_channel,
    render_stat_text,
)
from .graph import Graph
from .montage import Lobe, lobes_related
from .signals import EegWindow

log = logging.getLogger(__name__)

QUESTION = (
    "Question: Does a meaningful functional connection exist between Node i and Node j "
    "in this EEG segment? Answer yes or no, based on the context above."
)

ENV_API_KEY = "EEGREFINE_API_KEY"
ENV_ENDPOINT = "EEGREFINE_JUDGE_URL"


@dataclass(frozen=True)
class EdgePrompt:
    node_i_text: str
    node_j_text: str
    question: str = QUESTION
    rendered: str = ""

    def __post_init__(self):
        if not self.rendered:
            object.__setattr__(
                self, "rendered", f"{self.node_i_text}\n\n{self.node_j_text}\n\n{self.question}"
            )

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.rendered.encode("utf-8")).hexdigest()


def _node_block(name: str, desc: TextualDescription, stats: StatFeatures) -> str:
    return f"Node {name}: {desc.rendered} {render_stat_text(stats)}"


def build_prompt(desc_i: TextualDescription, stats_i: StatFeatures,
                 desc_j: TextualDescription, stats_j: StatFeatures) -> EdgePrompt:
    return EdgePrompt(_node_block("i", desc_i, stats_i), _node_block("j", desc_j, stats_j))


class Decision(str, enum.Enum):
    KEEP = "keep"
    REMOVE = "remove"
    AMBIGUOUS = "ambiguous"


def parse_verdict(raw: str) -> Decision:
    """Leading word "yes" keeps, "no" removes; anything else is ambiguous."""
    words = re.findall(r"[a-z]+", (raw or "").lower())
    if not words:
        return Decision.AMBIGUOUS
    if words[0] == "yes":
        return Decision.KEEP
    if words[0] == "no":
        return Decision.REMOVE
    return Decision.AMBIGUOUS


@dataclass(frozen=True)
class JudgeVerdict:
    decision: Decision
    raw_response: str
    latency_ms: float
    judge_id: str
    cached: bool = False


@dataclass(frozen=True)
class JudgeConfig:
    kind: str = "mock"  # mock | remote | constant
    judge_id: str = ""
    endpoint: str | None = None
    model: str | None = None
    api_key: str | None = field(default=None, repr=False)
    timeout: float = 30.0
    max_retries: int = 3
    max_parallel: int = 1
    cache_dir: str | None = None
    temperature: float = 0.0
    rate_limit: float = 5.0
    backoff: float = 0.5
    answer: str = "yes"
    freq_tolerance: float = 3.0

    def __post_init__(self):
        if self.kind not in ("mock", "remote", "constant"):
            raise ConfigError(f"unknown judge kind {self.kind!r}")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.temperature != 0.0:
            raise ConfigError("judge temperature is fixed at 0")
        if not self.judge_id:
            object.__setattr__(self, "judge_id", self.model or self.kind)

    def resolved(self) -> "JudgeConfig":
        """Fill endpoint and key from the environment; validate remote settings."""
        if self.kind != "remote":
            return self
        endpoint = self.endpoint or os.environ.get(ENV_ENDPOINT)
        key = self.api_key or os.environ.get(ENV_API_KEY)
        if not endpoint:
            raise ConfigError(f"remote judge {self.judge_id!r} needs an endpoint (or ${ENV_ENDPOINT})")
        if not key:
            raise ConfigError(f"remote judge {self.judge_id!r} needs an API key (${ENV_API_KEY})")
        if not self.model:
            raise ConfigError(f"remote judge {self.judge_id!r} needs a model name")
        return JudgeConfig(**{**self.public_dict(), "endpoint": endpoint, "api_key": key})

    def public_dict(self) -> dict:
        """Settings without credentials (safe to log or hash)."""
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.pop("api_key")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown judge fields: {sorted(unknown)}")
        return cls(**d)


class VerdictCache:
    """One JSON file per verdict, named by SHA-256 of prompt and judge id."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(prompt: EdgePrompt, judge_id: str) -> str:
        h = hashlib.sha256()
        h.update(prompt.rendered.encode("utf-8"))
        h.update(b"\x00")
        h.update(judge_id.encode("utf-8"))
        return h.hexdigest()

    def get(self, prompt: EdgePrompt, judge_id: str) -> dict | None:
        path = self.directory / f"{self.key(prompt, judge_id)}.json"
        try:
            with open(path) as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            log.warning("ignoring corrupt cache entry %s", path.name)
            return None

    def put(self, prompt: EdgePrompt, judge_id: str, raw: str, decision: Decision) -> None:
        key = self.key(prompt, judge_id)
        body = {
            "prompt_hash": key,
            "judge_id": judge_id,
            "raw_response": raw,
            "decision": decision.value,
            "timestamp": time.time(),
        }
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w") as fh:
                json.dump(body, fh)
            os.replace(tmp, self.directory / f"{key}.json")


class TokenBucket:
    def __init__(self, rate: float, capacity: float | None = None):
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(1.0, rate))
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class Judge:
    """Maps an edge prompt to a verdict. Subclasses implement :meth:`ask`."""

    judge_id = "judge"

    def __init__(self, cache_dir=None):
        self.cache = VerdictCache(cache_dir) if cache_dir else None

    def ask(self, prompt: EdgePrompt) -> str:
        raise NotImplementedError

    def judge(self, prompt: EdgePrompt, use_cache: bool = True) -> JudgeVerdict:
        if use_cache and self.cache is not None:
            hit = self.cache.get(prompt, self.judge_id)
            if hit is not None:
                raw = hit["raw_response"]
                return JudgeVerdict(parse_verdict(raw), raw, 0.0, self.judge_id, cached=True)
        start = time.perf_counter()
        raw = self.ask(prompt)
        latency = (time.perf_counter() - start) * 1000.0
        decision = parse_verdict(raw)
        if self.cache is not None and decision is not Decision.AMBIGUOUS:
            self.cache.put(prompt, self.judge_id, raw, decision)
        return JudgeVerdict(decision, raw, latency, self.judge_id)

    __call__ = judge


_BLOCK_RE = re.compile(
    r"located in the (\w+) (?:lobe|region).*?Dominant frequency: (-?\d+(?:\.\d+)?) Hz", re.S
)


class MockJudge(Judge):
    """Deterministic stand-in for an LLM, reading only the prompt text.

    Says yes when the two dominant frequencies are within ``freq_tolerance``
    Hz and the lobes are identical or anatomically adjacent.
    """

    def __init__(self, judge_id="mock", freq_tolerance=3.0, cache_dir=None):
        super().__init__(cache_dir)
        self.judge_id = judge_id
        self.freq_tolerance = freq_tolerance

    def ask(self, prompt: EdgePrompt) -> str:
        nodes = []
        for block in (prompt.node_i_text, prompt.node_j_text):
            m = _BLOCK_RE.search(block)
            if m is None:
                return "unsure: cannot read lobe or dominant frequency"
            nodes.append((Lobe(m.group(1).capitalize()), float(m.group(2))))
        (lobe_i, f_i), (lobe_j, f_j) = nodes
        # rendered frequencies carry one decimal
        close = round(abs(f_i - f_j), 6) <= self.freq_tolerance
        return "yes" if close and lobes_related(lobe_i, lobe_j) else "no"


class ConstantJudge(Judge):
    def __init__(self, answer="yes", judge_id=None, cache_dir=None):
        super().__init__(cache_dir)
        self.answer = answer
        self.judge_id = judge_id or f"always-{answer}"

    def ask(self, prompt: EdgePrompt) -> str:
        return self.answer


class FunctionJudge(Judge):
    """Wraps any ``prompt -> raw response`` callable."""

    def __init__(self, fn: Callable[[EdgePrompt], str], judge_id="function", cache_dir=None):
        super().__init__(cache_dir)
        self.fn = fn
        self.judge_id = judge_id

    def ask(self, prompt: EdgePrompt) -> str:
        return self.fn(prompt)


class RemoteJudge(Judge):
    """Chat-completion HTTP judge with retries, rate limiting and caching."""

    def __init__(self, cfg: JudgeConfig, transport: httpx.BaseTransport | None = None):
        cfg = cfg.resolved()
        super().__init__(cfg.cache_dir)
        self.cfg = cfg
        self.judge_id = cfg.judge_id
        self.bucket = TokenBucket(cfg.rate_limit)
        self.network_calls = 0
        self._count_lock = threading.Lock()
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport)

    def request_body(self, prompt: EdgePrompt) -> dict:
        return {
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt.rendered}],
        }

    @staticmethod
    def extract_text(payload: dict) -> str:
        try:
            return payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise JudgeError("malformed chat-completion response") from None

    def ask(self, prompt: EdgePrompt) -> str:
        headers = {"Authorization": f"Bearer {self.cfg.api_key}"}
        last = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            self.bucket.acquire()
            with self._count_lock:
                self.network_calls += 1
            try:
                resp = self._client.post(self.cfg.endpoint, json=self.request_body(prompt), headers=headers)
            except httpx.TimeoutException as exc:
                last = JudgeError(f"timeout: {exc}")
                continue
            except httpx.TransportError as exc:
                last = JudgeError(f"network error: {exc}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = JudgeError(f"HTTP {resp.status_code}", status=resp.status_code)
                continue
            if not 200 <= resp.status_code < 300:
                raise JudgeError(f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code)
            try:
                return self.extract_text(resp.json())
            except json.JSONDecodeError:
                raise JudgeError("response body is not JSON") from None
        raise JudgeError(f"judge {self.judge_id!r} failed after {self.cfg.max_retries} retries: {last}",
                         status=getattr(last, "status", None))

    def close(self):
        self._client.close()


def make_judge(cfg: JudgeConfig, transport=None) -> Judge:
    if cfg.kind == "mock":
        return MockJudge(cfg.judge_id, cfg.freq_tolerance, cfg.cache_dir)
    if cfg.kind == "constant":
        return ConstantJudge(cfg.answer, cfg.judge_id, cfg.cache_dir)
    return RemoteJudge(cfg, transport=transport)


def judge(prompt: EdgePrompt, cfg: JudgeConfig | Judge) -> JudgeVerdict:
    backend = cfg if isinstance(cfg, Judge) else make_judge(cfg)
    return backend.judge(prompt)


@dataclass(frozen=True)
class EdgeVerdict:
    window_index: int
    i: int
    j: int
    decision: Decision
    raw_response: str
    cached: bool
    retried: bool = False


@dataclass
class RefinementResult:
    graph: Graph
    verdicts: list[EdgeVerdict]
    warnings: list[str]


def _node_context(window: EegWindow, channel: int):
    return describe_channel(window, channel), compute_stat_features(window.data[channel], window.sample_rate)


def edge_prompt(window: EegWindow, i: int, j: int, context=None) -> EdgePrompt:
    if i == j:
        raise ValueError("self-loops are not prompted")
    context = context if context is not None else {}
    for k in (i, j):
        if k not in context:
            context[k] = _node_context(window, k)
    (d_i, s_i), (d_j, s_j) = context[i], context[j]
    return build_prompt(d_i, s_i, d_j, s_j)


def refine_window(initial: Graph, window: EegWindow, judge: Judge | JudgeConfig,
                  max_parallel: int | None = None) -> RefinementResult:
    """Query the judge once per existing edge and drop the rejected ones.

    An ambiguous answer is asked again once (bypassing the cache); a second
    ambiguous answer keeps the edge and records a warning.
    """
    if isinstance(judge, JudgeConfig):
        max_parallel = max_parallel or judge.max_parallel
        judge = make_judge(judge)
    max_parallel = max_parallel or 1
    if initial.n != window.n_channels:
        raise DataError(f"graph has {initial.n} nodes, window has {window.n_channels} channels")
    if initial.labels is not None and tuple(initial.labels) != tuple(window.labels):
        raise DataError("graph labels do not match window montage")

    edges = initial.edges()
    context = {}
    for k in sorted({k for e in edges for k in e}):
        context[k] = _node_context(window, k)
    prompts = [edge_prompt(window, i, j, context) for i, j in edges]

    def ask(idx):
        prompt = prompts[idx]
        v = judge.judge(prompt)
        retried = False
        if v.decision is Decision.AMBIGUOUS:
            retried = True
            v = judge.judge(prompt, use_cache=False)
        return v, retried

    results: dict[int, tuple[JudgeVerdict, bool]] = {}

    def partial():
        return {edges[k]: results[k][0] for k in sorted(results)}

    if max_parallel == 1:
        for k in range(len(edges)):
            try:
                results[k] = ask(k)
            except JudgeError as exc:
                raise RefinementError(
                    f"window {window.window_index}, edge {edges[k]}: {exc}", edge=edges[k], completed=partial()
                ) from exc
    else:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            futures = [pool.submit(ask, k) for k in range(len(edges))]
            failure = None
            for k, fut in enumerate(futures):
                try:
                    results[k] = fut.result()
                except JudgeError as exc:
                    failure = failure or (k, exc)
            if failure is not None:
                k, exc = failure
                raise RefinementError(
                    f"window {window.window_index}, edge {edges[k]}: {exc}", edge=edges[k], completed=partial()
                ) from exc

    weights = np.array(initial.weights)
    verdicts, warnings = [], []
    for k, (i, j) in enumerate(edges):
        v, retried = results[k]
        if v.decision is Decision.REMOVE:
            weights[i, j] = weights[j, i] = 0.0
        elif v.decision is Decision.AMBIGUOUS:
            warnings.append(
                f"window {window.window_index} edge ({i}, {j}): ambiguous response kept: {v.raw_response[:80]!r}"
            )
        verdicts.append(EdgeVerdict(window.window_index, i, j, v.decision, v.raw_response, v.cached, retried))
    return RefinementResult(initial.with_weights(weights), verdicts, warnings)


def refine(initial: Graph, window: EegWindow, judge: Judge | JudgeConfig, max_parallel: int | None = None) -> Graph:
    """Refined graph; see :func:`refine_window` for the verdict log."""
    return refine_window(initial, window, judge, max_parallel).graph


class EdgeRefiner(BaseEstimator):
    """Applies :func:`refine_window` to aligned sequences of graphs and windows."""

    def __init__(self, judge=None, max_parallel=1):
        self.judge = judge
        self.max_parallel = max_parallel

    def fit(self, graphs=None, windows=None):
        return self

    def transform(self, graphs, windows) -> list[Graph]:
        graphs, windows = list(graphs), list(windows)
        if len(graphs) != len(windows):
            raise DataError(f"{len(graphs)} graphs for {len(windows)} windows")
        backend = self.judge if isinstance(self.judge, Judge) else make_judge(self.judge or JudgeConfig())
        self.verdicts_, self.warnings_ = [], []
        out = []
        for g, w in zip(graphs, windows):
            res = refine_window(g, w, backend, self.max_parallel)
            out.append(res.graph)
            self.verdicts_.extend(res.verdicts)
            self.warnings_.extend(res.warnings)
        return out
