import struct

import numpy as np
import pytest

from rankgan import checkpoint as ck
from rankgan.nn import MlpSpec, init_mlp


def _model(tmp_path):
    spec = MlpSpec((3, 5, 1), output="tanh")
    p = init_mlp(spec, np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    ck.save_model(path, p, spec)
    return path, p, spec


def test_roundtrip_bit_exact(tmp_path):
    path, p, spec = _model(tmp_path)
    q, spec2 = ck.load_model(path)
    assert spec2 == spec
    assert q.names() == p.names()
    assert all(q[k].tobytes() == p[k].tobytes() for k in p.names())
    assert ck.verify_roundtrip(path)


def test_frozen_flag_survives(tmp_path):
    spec = MlpSpec((2, 1))
    p = init_mlp(spec, np.random.default_rng(1)).freeze()
    ck.save_model(tmp_path / "f.ckpt", p, spec)
    assert ck.load_model(tmp_path / "f.ckpt")[0].frozen


def test_same_params_same_bytes(tmp_path):
    spec = MlpSpec((2, 4, 1))
    for name in ("a", "b"):
        ck.save_model(tmp_path / name, init_mlp(spec, np.random.default_rng(7)), spec)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_layout_header(tmp_path):
    path, _, _ = _model(tmp_path)
    blob = path.read_bytes()
    assert blob[:4] == b"RKGC"
    assert struct.unpack_from("<I", blob, 4) == (1,)


def test_bad_magic(tmp_path):
    path, _, _ = _model(tmp_path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.load_model(path)


def test_version_mismatch(tmp_path):
    path, _, _ = _model(tmp_path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(blob))
    with pytest.raises(ck.CheckpointError, match="version 2"):
        ck.load_model(path)


def test_truncated_and_trailing(tmp_path):
    path, _, _ = _model(tmp_path)
    blob = path.read_bytes()
    with pytest.raises(ck.CheckpointError):
        ck.decode(blob[:-5])
    with pytest.raises(ck.CheckpointError, match="trailing"):
        ck.decode(blob + b"\0")


def test_wrong_kind(tmp_path):
    (tmp_path / "d.ckpt").write_bytes(ck.encode("dataset", {}, [("x", np.zeros(2))]))
    with pytest.raises(ck.CheckpointError, match="model"):
        ck.load_model(tmp_path / "d.ckpt")
