import numpy as np
import pytest

from dgnam import checkpoint, models
from dgnam.errors import ParseError
from dgnam.tensor import Tensor
from dgnam.training import CodeStats

rng = np.random.default_rng(5)


def test_spec_text_round_trip():
    spec = models.encoder_a_spec()
    text = checkpoint.spec_to_text(spec, {"seed": 3, "dataset": "toy", "iterations": 120})
    spec2, meta = checkpoint.spec_from_text(text)
    assert checkpoint.spec_to_text(spec2, meta) == text
    assert spec2 == spec
    assert meta == {"seed": 3, "dataset": "toy", "iterations": 120}


def test_instance_round_trip_bit_exact(tmp_path):
    net = models.init_instance(models.encoder_b_spec(), seed=9, meta={"seed": 9})
    path = tmp_path / "enc.ckpt"
    checkpoint.save_instance(path, net)
    loaded = checkpoint.load_instance(path)
    assert loaded.spec == net.spec
    assert loaded.param_bytes() == net.param_bytes()
    # and the file itself round-trips bit-exactly
    path2 = tmp_path / "enc2.ckpt"
    checkpoint.save_instance(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_loaded_instance_same_forward(tmp_path):
    net = models.init_instance(models.encoder_a_spec(), seed=2)
    path = tmp_path / "a.ckpt"
    checkpoint.save_instance(path, net)
    loaded = checkpoint.load_instance(path)
    x = Tensor(rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32))
    assert models.forward(net, x).data.tobytes() == models.forward(loaded, x).data.tobytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTRIGHT" + b"\0" * 64)
    with pytest.raises(ParseError, match="magic"):
        checkpoint.load_instance(p)


def test_truncated_file(tmp_path):
    net = models.init_instance(models.encoder_a_spec(), seed=2)
    p = tmp_path / "t.ckpt"
    checkpoint.save_instance(p, net)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(ParseError, match="byte offset"):
        checkpoint.load_instance(p)


def test_code_stats_round_trip(tmp_path):
    stats = CodeStats("fc1_relu", rng.uniform(0, 1, 128).astype(np.float32),
                      rng.uniform(0, 1, 128).astype(np.float32), 400)
    p = tmp_path / "stats.ckpt"
    checkpoint.save_code_stats(p, stats)
    loaded = checkpoint.load_code_stats(p)
    assert loaded.layer == "fc1_relu"
    assert loaded.count == 400
    np.testing.assert_array_equal(loaded.mean, stats.mean)
    np.testing.assert_array_equal(loaded.std, stats.std)
