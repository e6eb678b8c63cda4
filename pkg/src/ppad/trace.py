"""Run traces: the unit of persistence and reproducibility.

Latent digests are 64-bit FNV-1a over the canonical byte form of the
batch (little-endian float64, C order), so an alternate implementation
can compare trajectories.  The trajectory digest chains the digests of
main-chain records only (init / reverse / ping / pong / ahead / zigzag);
critic bookkeeping never contributes, which is what lets an early-stopped
corrected run hash identically to the vanilla run it collapsed to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1

CHAIN_OPS = frozenset({"init", "reverse", "ping", "pong", "ahead", "zigzag"})
OP_KINDS = CHAIN_OPS | {"preview", "check", "synthesize", "early-stop", "fallback"}


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def canonical_latent_bytes(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x, dtype="<f8").tobytes()


def latent_digest(x: np.ndarray) -> int:
    return fnv1a64(canonical_latent_bytes(x))


@dataclass(frozen=True)
class TraceRecord:
    t: int
    op: str
    digest: int | None = None
    score: float | None = None
    correction: dict | None = None
    rng_counter: int = 0
    info: dict | None = None

    def to_json(self) -> dict:
        obj = {"kind": "record", "t": self.t, "op": self.op,
               "rng_counter": self.rng_counter}
        if self.digest is not None:
            obj["digest"] = f"{self.digest:016x}"
        if self.score is not None:
            obj["score"] = self.score
        if self.correction is not None:
            obj["correction"] = self.correction
        if self.info:
            obj["info"] = self.info
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "TraceRecord":
        return cls(t=obj["t"], op=obj["op"],
                   digest=int(obj["digest"], 16) if "digest" in obj else None,
                   score=obj.get("score"), correction=obj.get("correction"),
                   rng_counter=obj.get("rng_counter", 0), info=obj.get("info"))


class RunTrace:
    """Ordered operator/critic log with an optional live JSONL sink."""

    def __init__(self, header: dict, sink: IO[str] | None = None):
        self.header = header
        self.records: list[TraceRecord] = []
        self._sink = sink
        if sink is not None:
            sink.write(json.dumps({"kind": "header", **header}, sort_keys=True) + "\n")
            sink.flush()

    def add(self, record: TraceRecord) -> None:
        if record.op not in OP_KINDS:
            raise ValueError(f"unknown op kind {record.op!r}")
        self.records.append(record)
        if self._sink is not None:
            self._sink.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
            self._sink.flush()

    def ops(self, *kinds: str) -> list[TraceRecord]:
        wanted = set(kinds)
        return [r for r in self.records if r.op in wanted]

    def chain_digest(self) -> int:
        h = FNV_OFFSET
        for rec in self.records:
            if rec.op in CHAIN_OPS and rec.digest is not None:
                h = fnv1a64(rec.digest.to_bytes(8, "big"), h)
        return h

    def final_digest(self) -> int | None:
        for rec in reversed(self.records):
            if rec.op in CHAIN_OPS and rec.digest is not None:
                return rec.digest
        return None

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"kind": "header", **self.header}, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RunTrace":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("kind") != "header":
            raise ValueError(f"{path}: first line is not a trace header")
        header = {k: v for k, v in lines[0].items() if k != "kind"}
        trace = cls(header)
        for obj in lines[1:]:
            trace.records.append(TraceRecord.from_json(obj))
        return trace
