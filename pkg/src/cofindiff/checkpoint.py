"""Checkpoint = weight blob (with a small header) + JSON metadata carrying its hash."""
from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import torch

WEIGHTS = "weights.pt"
META = "meta.json"


class CheckpointCorruption(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_checkpoint(directory, state_dict: dict, header: dict, metadata: dict) -> Path:
    """Write ``weights.pt`` and ``meta.json``; ``header`` is duplicated into the blob
    so the two files can be cross-checked on load."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save({"header": header, "state_dict": {k: v.detach().cpu() for k, v in state_dict.items()}}, buf)
    weights = directory / WEIGHTS
    weights.write_bytes(buf.getvalue())
    meta = {**metadata, "header": header, "weights_sha256": _sha256(weights)}
    (directory / META).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict, dict]:
    directory = Path(directory)
    weights, meta_path = directory / WEIGHTS, directory / META
    if not weights.exists() or not meta_path.exists():
        raise FileNotFoundError(f"no checkpoint in {directory}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointCorruption(f"unreadable metadata: {exc}") from None
    if _sha256(weights) != meta.get("weights_sha256"):
        raise CheckpointCorruption("weight blob hash does not match metadata")
    try:
        blob = torch.load(weights, map_location="cpu", weights_only=True)
    except Exception as exc:  # noqa: BLE001
        raise CheckpointCorruption(f"unreadable weight blob: {exc}") from None
    if blob.get("header") != meta.get("header"):
        raise CheckpointCorruption(f"weight header {blob.get('header')} disagrees with metadata {meta.get('header')}")
    return blob["state_dict"], meta
