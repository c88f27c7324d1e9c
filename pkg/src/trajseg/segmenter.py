"""Promptable segmenter interface and its line-delimited JSON wire form.

A segmenter turns positive point prompts into masks. The same three
calls are exposed over a text protocol so an external model server can
stand in for the in-process oracle:

    -> {"op": "segment_frame", "frame": 3, "points": [[x, y]], "labels": [1], "obj_id": 1}
    <- {"ok": true, "shape": [H, W], "rle": [..]}
    -> {"op": "segment_video", "prompts": [{"frame": .., "points": .., "labels": .., "obj_id": ..}]}
    <- {"ok": true, "frames": T, "shape": [H, W], "objects": [{"obj_id": 1, "rle": [[..], ..]}]}
    -> {"op": "reset"}
    <- {"ok": true}

Run lengths are row-major and start with a run of zeros.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, TextIO

import numpy as np

from . import kernels
from .masks import MaskVideo

__all__ = ["Prompt", "PromptableSegmenter", "WireError", "encode_prompt", "decode_prompt",
           "handle_request", "serve", "WireSegmenter"]


@dataclass(frozen=True)
class Prompt:
    frame: int
    points: np.ndarray          # (M, 2) pixel (x, y)
    obj_id: int
    labels: tuple[int, ...] = field(default=())

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(1 for _ in range(len(pts))))


class PromptableSegmenter(Protocol):
    def reset(self) -> None: ...

    def segment_frame(self, t: int, points, labels=None) -> np.ndarray: ...

    def segment_video(self, prompts: Iterable[Prompt]) -> MaskVideo: ...


class WireError(RuntimeError):
    """Malformed message or a failure reported by the remote side."""


def encode_prompt(p: Prompt) -> dict:
    return {"frame": int(p.frame), "points": p.points.tolist(),
            "labels": [int(x) for x in p.labels], "obj_id": int(p.obj_id)}


def decode_prompt(d: dict) -> Prompt:
    try:
        return Prompt(int(d["frame"]), np.asarray(d["points"], dtype=np.float64),
                      int(d["obj_id"]), tuple(int(x) for x in d.get("labels", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"bad prompt record: {exc}") from exc


def handle_request(segmenter: PromptableSegmenter, line: str) -> str:
    """Serve one request line; failures become ``{"ok": false}`` responses."""
    try:
        req = json.loads(line)
        op = req.get("op")
        if op == "reset":
            segmenter.reset()
            resp = {"ok": True}
        elif op == "segment_frame":
            p = decode_prompt(req)
            mask = np.asarray(segmenter.segment_frame(p.frame, p.points, list(p.labels)), dtype=bool)
            resp = {"ok": True, "shape": list(mask.shape), "rle": kernels.rle_encode(mask)}
        elif op == "segment_video":
            prompts = [decode_prompt(d) for d in req["prompts"]]
            video = segmenter.segment_video(prompts)
            resp = {"ok": True, "frames": video.frame_count, "shape": list(video.shape),
                    "objects": [{"obj_id": oid,
                                 "rle": [kernels.rle_encode(video.masks[t, k])
                                         for t in range(video.frame_count)]}
                                for k, oid in enumerate(video.ids)]}
        else:
            raise WireError(f"unknown op {op!r}")
    except Exception as exc:  # reported to the client, never raised across the wire
        resp = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
    return json.dumps(resp, separators=(",", ":"))


def serve(segmenter: PromptableSegmenter, instream: TextIO, outstream: TextIO) -> None:
    for line in instream:
        if line.strip():
            outstream.write(handle_request(segmenter, line) + "\n")
            outstream.flush()


class WireSegmenter:
    """Client side: ``send`` takes one request line and returns one response line."""

    def __init__(self, send: Callable[[str], str]):
        self._send = send

    def _call(self, payload: dict) -> dict:
        raw = self._send(json.dumps(payload, separators=(",", ":")))
        try:
            resp = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise WireError(f"unparseable response: {raw[:80]!r}") from exc
        if not resp.get("ok"):
            raise WireError(resp.get("error", "remote failure"))
        return resp

    def reset(self) -> None:
        self._call({"op": "reset"})

    def segment_frame(self, t: int, points, labels=None) -> np.ndarray:
        p = Prompt(t, points, 1, tuple(labels or ()))
        resp = self._call({"op": "segment_frame", **encode_prompt(p)})
        return kernels.rle_decode(resp["rle"], tuple(resp["shape"]))

    def segment_video(self, prompts: Iterable[Prompt]) -> MaskVideo:
        resp = self._call({"op": "segment_video", "prompts": [encode_prompt(p) for p in prompts]})
        h, w = resp["shape"]
        objs = resp["objects"]
        masks = np.zeros((resp["frames"], len(objs), h, w), dtype=bool)
        for k, o in enumerate(objs):
            for t, counts in enumerate(o["rle"]):
                masks[t, k] = kernels.rle_decode(counts, (h, w))
        return MaskVideo(masks, tuple(o["obj_id"] for o in objs))
