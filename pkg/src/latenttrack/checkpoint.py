"""Model checkpoints: a key=value manifest plus one little-endian float64 blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import DSSM, VRNN, BayesByBackprop, DeepEnsemble, MCDropout
from .model import LatentTrack

CHECKPOINT_VERSION = 1
MODEL_CLASSES = {cls.kind: cls for cls in (LatentTrack, VRNN, DSSM, MCDropout, DeepEnsemble, BayesByBackprop)}


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, directory, extra: dict | None = None) -> Path:
    """Write ``manifest.txt`` and ``params.bin`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"format_version = {CHECKPOINT_VERSION}",
        f"kind = {model.kind}",
        f"config = {json.dumps(model.config(), sort_keys=True)}",
    ]
    for k, v in sorted((extra or {}).items()):
        lines.append(f"meta.{k} = {v}")
    chunks = []
    offset = 0
    for name, p in model.named_parameters():
        shape = "x".join(str(s) for s in p.shape) or "scalar"
        lines.append(f"param.{name} = {shape}@{offset}")
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        offset += p.size
    (directory / "params.bin").write_bytes(b"".join(chunks))
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    return directory


def read_manifest(directory) -> dict[str, str]:
    out = {}
    path = Path(directory) / "manifest.txt"
    for no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if " = " not in line:
            raise CheckpointError(f"{path}:{no}: malformed line")
        k, v = line.split(" = ", 1)
        out[k] = v
    return out


def load_checkpoint(directory):
    """Rebuild the model from its manifest and restore the parameters bit-exactly."""
    directory = Path(directory)
    man = read_manifest(directory)
    if man.get("format_version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {man.get('format_version')}")
    cls = MODEL_CLASSES.get(man.get("kind", ""))
    if cls is None:
        raise CheckpointError(f"unknown model kind {man.get('kind')!r}")
    model = cls(**json.loads(man["config"]))
    blob = np.frombuffer((directory / "params.bin").read_bytes(), dtype="<f8")
    params = dict(model.named_parameters())
    stored = {k[len("param."):]: v for k, v in man.items() if k.startswith("param.")}
    if set(stored) != set(params):
        raise CheckpointError(f"parameter names differ: {sorted(set(stored) ^ set(params))}")
    for name, spec in stored.items():
        shape_txt, off = spec.split("@")
        shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split("x"))
        if shape != params[name].shape:
            raise CheckpointError(f"{name}: stored shape {shape} != model shape {params[name].shape}")
        n = int(np.prod(shape)) if shape else 1
        start = int(off)
        if start + n > blob.size:
            raise CheckpointError(f"{name}: blob truncated")
        params[name].data = blob[start : start + n].astype(np.float64).reshape(shape)
    return model
