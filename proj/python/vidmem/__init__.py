"""Question-aware streaming memory for long-video frame embeddings.

Arrays are float64 numpy arrays: a frame is (tokens, dims), a stream is
(frames, tokens, dims). Configs and reports are plain dicts.
"""

import json

from ._core import (
    PositionalTable,
    VidmemError,
    WeightedFrame,
    __version__,
    cosine,
    ema,
    frame_descriptor,
    frame_pair_similarity,
    no_memory,
    read_stream,
    spatial_pool,
    temporal_pool,
    write_stream,
)
from . import _core

__all__ = [
    "Pipeline",
    "PositionalTable",
    "VidmemError",
    "WeightedFrame",
    "bench_mem",
    "consolidate",
    "cosine",
    "ema",
    "frame_descriptor",
    "frame_pair_similarity",
    "generate_synthetic",
    "greedy_merge",
    "no_memory",
    "plant_eval",
    "read_stream",
    "run",
    "spatial_pool",
    "sweep",
    "temporal_pool",
    "write_stream",
]


def _dumps(obj):
    return json.dumps(obj or {})


def consolidate(frames, question=None, config=None):
    """Consolidate one window; returns (frames, report)."""
    out, report = _core._consolidate(list(frames), question, _dumps(config))
    return out, json.loads(report)


def greedy_merge(frames, target):
    out, report = _core._greedy_merge(list(frames), target)
    return out, json.loads(report)


def generate_synthetic(spec):
    """Returns (frames, question) for a synthetic stream spec dict."""
    return _core._generate_synthetic(json.dumps(spec))


def run(spec):
    return json.loads(_core._run(json.dumps(spec)))


def sweep(spec):
    return json.loads(_core._sweep(json.dumps(spec)))


def plant_eval(spec):
    return json.loads(_core._plant_eval(json.dumps(spec)))


def bench_mem(spec):
    return json.loads(_core._bench_mem(json.dumps(spec)))


class Pipeline:
    """Streaming pipeline over frames of a fixed (tokens, dims) shape."""

    def __init__(self, tokens, dims, config=None, question=None, _inner=None):
        self._p = _inner if _inner is not None else _core._Pipeline(tokens, dims, _dumps(config), question)

    def step(self, frame):
        """Pushes one frame; returns the consolidation report if one ran."""
        report = self._p.step(frame)
        return None if report is None else json.loads(report)

    def flush(self):
        report = self._p.flush()
        return None if report is None else json.loads(report)

    @property
    def long_term(self):
        return self._p.long_term

    @property
    def short_term(self):
        return self._p.short_term

    @property
    def counters(self):
        return json.loads(self._p._counters)

    def bytes_model(self):
        return json.loads(self._p._bytes_model)

    def assemble_global(self):
        return json.loads(self._p._assemble_global())

    def assemble_breakpoint(self, t):
        return json.loads(self._p._assemble_breakpoint(t))

    def export_snapshot(self, stem):
        return self._p.export_snapshot(stem)

    @classmethod
    def import_snapshot(cls, path):
        return cls(0, 0, _inner=_core._Pipeline.import_snapshot(path))
