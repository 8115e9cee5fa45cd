import numpy as np
import pytest

from cvfr import checkpoint as ckpt_io
from cvfr.checkpoint import Checkpoint
from cvfr.dynamics import IntegrationConfig
from cvfr.errors import CheckpointError
from cvfr.spectral import assemble

from conftest import planted_model


@pytest.fixture
def model():
    sc, att = planted_model(12, 3, seed=6)
    sc.eigvals[3:] += np.linspace(-0.3, 0.3, 9)
    return Checkpoint(sc, att.patterns, IntegrationConfig(0.05, 40, 0.2, 17), train_seed=5,
                      metadata={"dataset": "letters", "note": "two\nlines"})


def test_round_trip_is_exact(tmp_path, model):
    path = tmp_path / "m.ckpt"
    ckpt_io.save(model, path)
    back = ckpt_io.load(path)
    a, b = model.coupling, back.coupling
    assert np.array_equal(a.psi, b.psi) and np.array_equal(a.eigvals, b.eigvals)
    assert np.array_equal(a.frozen_cols, b.frozen_cols)
    assert (a.n, a.k, a.lambda_planted, a.c, a.beta, a.seed) == (b.n, b.k, b.lambda_planted, b.c, b.beta, b.seed)
    assert back.integration == model.integration
    assert np.array_equal(back.patterns, model.patterns)
    assert back.train_seed == 5
    assert back.metadata["dataset"] == "letters" and back.metadata["note"] == "two lines"
    assert "cvfr_version" in back.metadata
    # zero ULPs in the assembled coupling
    assert np.array_equal(assemble(a), assemble(b))
    assert np.array_equal(back.attractors.states, model.attractors.states)


def test_save_is_byte_reproducible(tmp_path, model):
    ckpt_io.save(model, tmp_path / "a")
    ckpt_io.save(model.copy(), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_header_is_readable(tmp_path, model):
    ckpt_io.save(model, tmp_path / "m")
    raw = (tmp_path / "m").read_bytes()
    head = raw[: raw.index(b"end_header")].decode()
    assert head.startswith("cvfr-checkpoint\nformat_version=1\n")
    assert "n=12\n" in head and "sigma=0.2\n" in head and "payload.psi=0:12x12" in head


def test_class_lambdas_round_trip(tmp_path, model):
    model.class_lambdas = np.array([1.0, 2.0, 3.0])
    ckpt_io.save(model, tmp_path / "m")
    assert np.array_equal(ckpt_io.load(tmp_path / "m").class_lambdas, [1.0, 2.0, 3.0])


def _rewrite(path, old, new):
    raw = path.read_bytes()
    path.write_bytes(raw.replace(old, new, 1))


def test_version_mismatch(tmp_path, model):
    p = tmp_path / "m"
    ckpt_io.save(model, p)
    _rewrite(p, b"format_version=1", b"format_version=9")
    with pytest.raises(CheckpointError, match="format_version 9"):
        ckpt_io.load(p)


def test_corrupt_files(tmp_path, model):
    p = tmp_path / "m"
    ckpt_io.save(model, p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="past end"):
        ckpt_io.load(p)
    p.write_bytes(b"something else\nend_header\n")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        ckpt_io.load(p)
    p.write_bytes(b"no header at all")
    with pytest.raises(CheckpointError):
        ckpt_io.load(p)
    ckpt_io.save(model, p)
    _rewrite(p, b"\nk=3\n", b"\nk=4\n")
    with pytest.raises(CheckpointError, match="shapes"):
        ckpt_io.load(p)
    ckpt_io.save(model, p)
    _rewrite(p, b"\nc=", b"\nx=")
    with pytest.raises(CheckpointError, match="missing field"):
        ckpt_io.load(p)
    with pytest.raises(CheckpointError, match="nope"):
        ckpt_io.load(tmp_path / "nope")
