"""On-disk formats: annotation JSON, binary feature container, submissions.

Every loader validates and rejects; nothing is silently repaired.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..event_codec import TimeInterval

FORMAT_VERSION = 1
FEATURE_MAGIC = b"SDVF"


class SchemaError(ValueError):
    def __init__(self, path, field_name, message):
        super().__init__(f"{path}: {field_name}: {message}")
        self.path = str(path)
        self.field = field_name


@dataclass
class DenseVideoRecord:
    video_id: str
    duration: float
    events: list[TimeInterval]
    sentences: list[str]
    features: np.ndarray
    activities: list[str] | None = None
    # clip-caption records carry one full-span event and no event supervision
    mefm: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.events) != len(self.sentences) or not self.events:
            raise ValueError(f"{self.video_id}: need >=1 events with one sentence each")
        for ev in self.events:
            if ev.end > self.duration + 1e-9 or ev.start < 0:
                raise ValueError(f"{self.video_id}: event outside video")

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])


# --- features ---------------------------------------------------------------

def write_features(path, features: dict[str, np.ndarray]) -> None:
    """Header (magic, version, count) then per video: id, N, D, row-major float32."""
    chunks = [FEATURE_MAGIC, struct.pack("<II", FORMAT_VERSION, len(features))]
    for vid in sorted(features):
        arr = np.ascontiguousarray(features[vid], dtype="<f4")
        if arr.ndim != 2:
            raise ValueError(f"{vid}: features must be N x D")
        raw = vid.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<II", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_features(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != FEATURE_MAGIC:
        raise SchemaError(path, "magic", "not a feature container")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise SchemaError(path, "format_version", f"unsupported version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n_id,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            vid = buf[pos : pos + n_id].decode("utf-8")
            pos += n_id
            n, d = struct.unpack_from("<II", buf, pos)
            pos += 8
            size = n * d * 4
            if pos + size > len(buf):
                raise SchemaError(path, vid, "truncated feature block")
            arr = np.frombuffer(buf, dtype="<f4", count=n * d, offset=pos).reshape(n, d).astype(np.float32)
            pos += size
            if not np.isfinite(arr).all():
                raise SchemaError(path, vid, "non-finite feature values")
            out[vid] = arr
    except struct.error as exc:
        raise SchemaError(path, "header", f"truncated container ({exc})") from None
    if pos != len(buf):
        raise SchemaError(path, "trailer", "unexpected trailing bytes")
    return out


# --- annotations --------------------------------------------------------------

def _require(obj, key, kind, path, where):
    if key not in obj:
        raise SchemaError(path, f"{where}.{key}", "missing")
    val = obj[key]
    if not isinstance(val, kind):
        raise SchemaError(path, f"{where}.{key}", f"expected {kind}, got {type(val).__name__}")
    return val


def _load_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(path, "<root>", f"invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SchemaError(path, "<root>", "expected an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(path, "format_version", f"expected {FORMAT_VERSION}, got {doc.get('format_version')!r}")
    return doc


def parse_annotations(path) -> dict[str, dict]:
    """Validated ``video_id -> {duration, timestamps, sentences[, activities]}``."""
    doc = _load_json(path)
    videos = _require(doc, "videos", dict, path, "")
    out = {}
    for vid, ann in videos.items():
        where = f"videos.{vid}"
        if not isinstance(ann, dict):
            raise SchemaError(path, where, "expected an object")
        duration = _require(ann, "duration", (int, float), path, where)
        stamps = _require(ann, "timestamps", list, path, where)
        sents = _require(ann, "sentences", list, path, where)
        if not (math.isfinite(duration) and duration > 0):
            raise SchemaError(path, f"{where}.duration", "must be positive and finite")
        if len(stamps) != len(sents) or not stamps:
            raise SchemaError(path, where, "timestamps and sentences must be non-empty and aligned")
        for k, ts in enumerate(stamps):
            if not (isinstance(ts, list) and len(ts) == 2 and all(isinstance(x, (int, float)) for x in ts)):
                raise SchemaError(path, f"{where}.timestamps[{k}]", "expected [start, end]")
            s, e = ts
            if not (0 <= s <= e <= duration):
                raise SchemaError(path, f"{where}.timestamps[{k}]", f"[{s}, {e}] outside [0, {duration}]")
        if not all(isinstance(x, str) for x in sents):
            raise SchemaError(path, f"{where}.sentences", "expected strings")
        acts = ann.get("activities")
        if acts is not None and (not isinstance(acts, list) or len(acts) != len(stamps)):
            raise SchemaError(path, f"{where}.activities", "must align with timestamps")
        out[vid] = {"duration": float(duration), "timestamps": stamps, "sentences": sents, "activities": acts}
    return out


def write_annotations(path, records: list[DenseVideoRecord]) -> None:
    videos = {}
    for r in records:
        ann = {
            "duration": r.duration,
            "timestamps": [ev.as_list() for ev in r.events],
            "sentences": list(r.sentences),
        }
        if r.activities is not None:
            ann["activities"] = list(r.activities)
        videos[r.video_id] = ann
    doc = {"format_version": FORMAT_VERSION, "videos": videos}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def load_dense_dataset(annotations_path, features_path) -> list[DenseVideoRecord]:
    anns = parse_annotations(annotations_path)
    feats = read_features(features_path)
    records = []
    for vid in sorted(anns):
        if vid not in feats:
            raise SchemaError(features_path, vid, "no features for annotated video")
        a = anns[vid]
        d = a["duration"]
        events = [TimeInterval(float(s), float(e), d) for s, e in a["timestamps"]]
        records.append(DenseVideoRecord(vid, d, events, list(a["sentences"]), feats[vid], a["activities"]))
    return records


def ingest_clip_corpus(annotations_path, features_path) -> list[DenseVideoRecord]:
    """Clip-caption corpus -> records with one full-span event per caption.

    Schema: ``{"format_version": 1, "clips": {id: {"duration": d,
    "sentences": [...]}}}``. A clip with several captions yields one record
    per caption (ids ``clip#k``) sharing the clip's features. The records
    are flagged so event-masking batches skip them.
    """
    doc = _load_json(annotations_path)
    clips = _require(doc, "clips", dict, annotations_path, "")
    feats = read_features(features_path)
    records = []
    for cid in sorted(clips):
        where = f"clips.{cid}"
        ann = clips[cid]
        if not isinstance(ann, dict):
            raise SchemaError(annotations_path, where, "expected an object")
        if "timestamps" in ann:
            raise SchemaError(annotations_path, f"{where}.timestamps", "clip corpora carry no events")
        d = _require(ann, "duration", (int, float), annotations_path, where)
        sents = _require(ann, "sentences", list, annotations_path, where)
        if not (d > 0) or not sents or not all(isinstance(s, str) for s in sents):
            raise SchemaError(annotations_path, where, "need positive duration and >=1 sentence")
        if cid not in feats:
            raise SchemaError(features_path, cid, "no features for clip")
        for k, sent in enumerate(sents):
            rid = cid if len(sents) == 1 else f"{cid}#{k}"
            full = TimeInterval(0.0, float(d), float(d))
            records.append(DenseVideoRecord(rid, float(d), [full], [sent], feats[cid], mefm=False))
    return records


# --- submissions --------------------------------------------------------------

def _check_prediction(p, path, where):
    if not isinstance(p, dict) or set(p) != {"sentence", "timestamp"}:
        raise SchemaError(path, where, "expected {sentence, timestamp}")
    if not isinstance(p["sentence"], str):
        raise SchemaError(path, f"{where}.sentence", "expected a string")
    ts = p["timestamp"]
    if not (isinstance(ts, list) and len(ts) == 2 and all(isinstance(x, (int, float)) for x in ts)):
        raise SchemaError(path, f"{where}.timestamp", "expected [start, end]")
    if not (0 <= ts[0] <= ts[1]):
        raise SchemaError(path, f"{where}.timestamp", f"invalid interval {ts}")


def dump_submission(results: dict[str, list[dict]]) -> str:
    doc = {"format_version": FORMAT_VERSION, "results": results}
    return json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def write_submission(path, results: dict[str, list[dict]]) -> None:
    for vid, preds in results.items():
        for k, p in enumerate(preds):
            _check_prediction(p, path, f"results.{vid}[{k}]")
    Path(path).write_text(dump_submission(results), encoding="utf-8")


def read_submission(path) -> dict[str, list[dict]]:
    doc = _load_json(path)
    results = _require(doc, "results", dict, path, "")
    for vid, preds in results.items():
        if not isinstance(preds, list):
            raise SchemaError(path, f"results.{vid}", "expected a list")
        for k, p in enumerate(preds):
            _check_prediction(p, path, f"results.{vid}[{k}]")
    return results


def references_from_records(records: list[DenseVideoRecord]) -> dict[str, list[dict]]:
    """Ground truth in submission layout (``sentence``/``timestamp`` entries)."""
    return {
        r.video_id: [{"sentence": s, "timestamp": ev.as_list()} for ev, s in zip(r.events, r.sentences)]
        for r in records
    }


def load_references(path) -> dict[str, list[dict]]:
    anns = parse_annotations(path)
    return {
        vid: [{"sentence": s, "timestamp": [float(t[0]), float(t[1])]} for t, s in zip(a["timestamps"], a["sentences"])]
        for vid, a in anns.items()
    }
