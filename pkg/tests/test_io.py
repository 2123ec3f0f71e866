import json

import numpy as np
import pytest
import torch

from neurodec import io
from neurodec.errors import ContractViolation
from neurodec.models import build_model

from test_models import DESK_FMRI, DESK_MEEG, positions


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_tensor_round_trip_bit_exact(tmp_path, rng, dtype):
    x = rng.standard_normal((3, 4, 5)).astype(dtype)
    x[0, 0, 0] = np.nan
    x[0, 0, 1] = -0.0
    io.write_tensors(tmp_path, {"x": x, "ids": np.arange(4)}, {"note": "ok"})
    out, meta = io.read_tensors(tmp_path)
    assert out["x"].dtype == dtype
    assert out["x"].tobytes() == x.tobytes()
    assert out["ids"].dtype == np.float64 and out["ids"].tolist() == [0, 1, 2, 3]
    assert meta == {"note": "ok"}


def test_manifest_layout(tmp_path):
    x = np.array([1.0, 2.0], dtype=np.float32)
    io.write_tensors(tmp_path, {"x": x})
    m = io.read_manifest(tmp_path)
    assert m["endianness"] == "LE" and m["version"] == 1
    (entry,) = m["tensors"]
    assert entry == {"name": "x", "file": "x.bin", "dtype": "f4", "shape": [2], "offset": 0, "nbytes": 8}
    assert (tmp_path / "x.bin").read_bytes() == x.astype("<f4").tobytes()


def test_byte_length_mismatch(tmp_path):
    io.write_tensors(tmp_path, {"x": np.zeros(4)})
    with open(tmp_path / "x.bin", "ab") as fh:
        fh.write(b"\0")
    with pytest.raises(ContractViolation, match="bytes on disk"):
        io.read_tensors(tmp_path)


def test_unsupported_dtype_and_missing(tmp_path):
    with pytest.raises(ContractViolation):
        io.write_tensors(tmp_path, {"c": np.zeros(2, dtype=complex)})
    with pytest.raises(ContractViolation):
        io.read_tensors(tmp_path / "nowhere")


def test_provider_round_trip(tmp_path, rng):
    vecs = {7: rng.standard_normal(5), 2: rng.standard_normal(5)}
    io.write_provider(tmp_path, vecs, name="toy")
    back = io.read_provider(tmp_path)
    assert sorted(back) == [2, 7]
    for k in vecs:
        assert back[k].tobytes() == vecs[k].tobytes()


@pytest.mark.parametrize("cfg,shape", [(DESK_MEEG, (5, 16, 24)), (DESK_FMRI, (5, 12, 5))])
def test_checkpoint_round_trip(tmp_path, cfg, shape):
    pos = positions(16) if cfg is DESK_MEEG else None
    model = build_model(cfg, pos, seed=4)
    x = torch.randn(*shape, generator=torch.Generator().manual_seed(0))
    s = torch.tensor([0, 1, 0, 1, 1])
    model.train()
    model(x, s)  # move batch-norm running statistics off their defaults
    model.eval()
    io.save_checkpoint(model, tmp_path, extra={"epoch": 3})
    loaded, meta = io.load_checkpoint(tmp_path)
    assert meta["epoch"] == 3
    for (n1, a), (n2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert n1 == n2
        if a.is_floating_point() and n1 in dict(model.named_parameters()):
            assert a.numpy().tobytes() == b.numpy().tobytes(), n1
        else:
            assert torch.equal(a.to(b.dtype), b), n1
    with torch.no_grad():
        for p, q in zip(model(x, s), loaded(x, s)):
            assert torch.equal(p, q)
    seg = json.loads((tmp_path / "segments.json").read_text())
    total = sum(int(np.prod(e["shape"])) for e in seg["params"])
    assert total == sum(p.numel() for p in model.parameters())


def test_run_manifest(tmp_path, monkeypatch):
    cfg = {"b": 1, "a": [1, 2]}
    path = io.write_run_manifest(tmp_path, "synth", cfg, {"seed": 0}, ["in.json"], started=0.0)
    m = json.loads(path.read_text())
    assert set(m) == {"command", "config_hash", "config", "seeds", "inputs", "git_describe", "wall_time_s"}
    assert m["config_hash"] == io.config_hash({"a": [1, 2], "b": 1})
    assert len(m["config_hash"]) == 64

    def boom(*a, **k):
        raise OSError("no git")

    monkeypatch.setattr(io.subprocess, "run", boom)
    assert io.git_describe() == "unknown"
