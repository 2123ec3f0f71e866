"""On-disk formats: tensor containers, model checkpoints and run manifests.

A tensor container is a directory holding ``manifest.json`` and one raw
little-endian, row-major binary file per tensor (float32 or float64).
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from pathlib import Path

import numpy as np
import torch

from .errors import ContractViolation

FORMAT = "neurodec-tensors"
DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def _tag(dtype: np.dtype) -> str:
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return "f4"
    if dtype == np.float64:
        return "f8"
    raise ContractViolation(f"tensor dtype {dtype} not supported (float32/float64 only)")


def write_tensors(directory: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, array in tensors.items():
        array = np.asarray(array)
        if array.dtype.kind in "iub":
            array = array.astype(np.float64)
        tag = _tag(array.dtype)
        data = np.ascontiguousarray(array, dtype=DTYPES[tag])
        fname = f"{name}.bin"
        (directory / fname).write_bytes(data.tobytes(order="C"))
        entries.append(
            {"name": name, "file": fname, "dtype": tag, "shape": list(data.shape), "offset": 0, "nbytes": data.nbytes}
        )
    manifest = {"format": FORMAT, "version": 1, "endianness": "LE", "tensors": entries, "meta": meta or {}}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ContractViolation(f"no tensor container manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT or manifest.get("endianness") != "LE":
        raise ContractViolation(f"{path}: not a little-endian {FORMAT} container")
    return manifest


def read_tensors(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    out = {}
    for e in manifest["tensors"]:
        dtype = DTYPES[e["dtype"]]
        raw = (directory / e["file"]).read_bytes()
        expected = int(np.prod(e["shape"], dtype=np.int64)) * dtype.itemsize
        if len(raw) - e.get("offset", 0) != expected:
            raise ContractViolation(
                f"{e['file']}: {len(raw)} bytes on disk, manifest implies {expected} (shape x dtype size)"
            )
        arr = np.frombuffer(raw, dtype=dtype, offset=e.get("offset", 0)).reshape(e["shape"])
        out[e["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
    return out, manifest.get("meta", {})


def write_provider(directory: str | Path, vectors: dict[int, np.ndarray], name: str = "") -> Path:
    """Store a representation provider (image_id -> feature vector) as a tensor container."""
    ids = sorted(vectors)
    mat = np.stack([np.asarray(vectors[i], dtype=np.float64).ravel() for i in ids])
    return write_tensors(directory, {"image_ids": np.asarray(ids, dtype=np.float64), "vectors": mat}, {"provider": name})


def read_provider(directory: str | Path) -> dict[int, np.ndarray]:
    t, _ = read_tensors(directory)
    if set(t) != {"image_ids", "vectors"} or t["vectors"].shape[0] != t["image_ids"].shape[0]:
        raise ContractViolation(f"{directory}: provider needs 'image_ids' and one 'vectors' row per id")
    return {int(i): v for i, v in zip(t["image_ids"], t["vectors"])}


# -- checkpoints ---------------------------------------------------------------


def _flatten(named, dtype):
    segs, parts, offset = [], [], 0
    for name, t in named:
        a = t.detach().cpu().numpy().astype(dtype, copy=False).ravel()
        segs.append({"name": name, "shape": list(t.shape), "offset": offset})
        parts.append(a)
        offset += a.size
    flat = np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)
    return flat, segs


def save_checkpoint(model: torch.nn.Module, directory: str | Path, extra: dict | None = None) -> Path:
    """Write parameters and buffers as flat tensors plus a segment manifest."""
    from .models import MeegModule

    directory = Path(directory)
    pdtype = next(model.parameters()).detach().numpy().dtype
    params, psegs = _flatten(model.named_parameters(), pdtype)
    buffers, bsegs = _flatten(model.named_buffers(), np.float64)
    kind = "meeg" if isinstance(model, MeegModule) else "fmri"
    write_tensors(directory, {"params": params, "buffers": buffers}, meta={"model": model.config.to_dict(), **(extra or {})})
    segments = {"kind": kind, "params": psegs, "buffers": bsegs}
    (directory / "segments.json").write_text(json.dumps(segments, indent=1))
    return directory


def load_checkpoint(directory: str | Path) -> tuple[torch.nn.Module, dict]:
    from .models import build_model, config_from_dict

    directory = Path(directory)
    tensors, meta = read_tensors(directory)
    segments = json.loads((directory / "segments.json").read_text())
    config = config_from_dict(meta["model"])
    dtype = torch.float64 if tensors["params"].dtype == np.float64 else torch.float32
    positions = None
    for seg in segments["buffers"]:
        if seg["name"].endswith("positions"):
            n = int(np.prod(seg["shape"]))
            positions = tensors["buffers"][seg["offset"] : seg["offset"] + n].reshape(seg["shape"])
    model = build_model(config, positions, dtype=dtype)
    state = {}
    for key, flat in (("params", tensors["params"]), ("buffers", tensors["buffers"])):
        for seg in segments[key]:
            n = int(np.prod(seg["shape"], dtype=np.int64))
            state[seg["name"]] = torch.from_numpy(flat[seg["offset"] : seg["offset"] + n].reshape(seg["shape"]).copy())
    ref = model.state_dict()
    model.load_state_dict({k: v.to(ref[k].dtype) for k, v in state.items()})
    model.eval()
    return model, meta


# -- run manifests -------------------------------------------------------------


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_run_manifest(
    out_dir: str | Path,
    command: str,
    config: dict,
    seeds: dict,
    inputs: list[str],
    started: float,
) -> Path:
    path = Path(out_dir) / "run_manifest.json"
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "git_describe": git_describe(),
        "wall_time_s": round(time.time() - started, 3),
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))
    return path
