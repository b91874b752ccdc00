import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedbert.checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from fedbert.errors import FormatError
from fedbert.model import ModelConfig, ParamSet, init_params


@st.composite
def paramsets(draw):
    n = draw(st.integers(1, 4))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    entries = []
    for i in range(n):
        shape = tuple(draw(st.lists(st.integers(1, 4), min_size=0, max_size=3)))
        entries.append((f"p{i}.é", rng.normal(size=shape) * 10.0 ** rng.integers(-300, 300)))
    return ParamSet(entries)


@settings(max_examples=50, deadline=None)
@given(paramsets())
def test_roundtrip_is_bit_exact(params):
    back = loads(dumps(params))
    assert back.bit_equal(params)
    assert back.names == params.names


def test_file_roundtrip(tmp_path):
    params = init_params(ModelConfig(vocab_size=40, hidden_size=8, num_heads=2, max_seq_len=8), 0)
    path = save_checkpoint(params, tmp_path / "sub" / "m.fcrp")
    assert load_checkpoint(path).bit_equal(params)
    assert not list((tmp_path / "sub").glob("*.tmp"))


def test_header_layout():
    blob = dumps(ParamSet([("w", np.array([[1.0, 2.0]]))]))
    assert blob[:6] == MAGIC
    count, name_len = struct.unpack_from("<II", blob, 6)
    assert (count, name_len) == (1, 1)
    assert blob[14:15] == b"w"
    rank, d0, d1 = struct.unpack_from("<III", blob, 15)
    assert (rank, d0, d1) == (2, 1, 2)
    assert np.frombuffer(blob[27:], "<f8").tolist() == [1.0, 2.0]


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"FCRP2\0" + b[6:],
        lambda b: b[:-1],
        lambda b: b + b"\0",
        lambda b: b[:10],
    ],
    ids=["magic", "truncated", "trailing", "header"],
)
def test_malformed_files_rejected(mutate):
    blob = dumps(ParamSet([("w", np.ones((2, 3)))]))
    with pytest.raises(FormatError):
        loads(mutate(blob))
