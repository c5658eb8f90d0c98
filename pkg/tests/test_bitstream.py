import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentbin.bitstream import Bitstream, decode_tensor, encode_tensor, read_bitstream, write_bitstream
from latentbin.errors import FormatError
from latentbin.models import ModelKind, ParameterSet, code_length
from latentbin.tensor import QuantizedTensor


def binary_set(mu=0.0, sigma=1.0, p0=0.5, p1=0.5):
    return ParameterSet(ModelKind.BINARY, "tensor", np.array([[mu, sigma, p0, p1]]))


def baseline_set(kind, mu=0.0, sigma=1.0):
    return ParameterSet(kind, "tensor", np.array([[mu, sigma]]))


def roundtrip(q, params, **kw):
    stream = encode_tensor(q, params, **kw)
    back = decode_tensor(Bitstream.from_bytes(stream.to_bytes()), K=kw.get("K", 255),
                         precision=kw.get("precision", 16))
    return stream, back


def test_all_zero_tensor_costs_one_bit_per_element():
    q = QuantizedTensor(np.zeros((64, 16, 16), dtype=int))
    stream, back = roundtrip(q, binary_set())
    assert back == q
    assert abs(len(stream.payload) - 2048) <= 0.01 * 2048
    assert len(stream.to_bytes()) == len(stream.payload) + 22 + 27 + 8  # prefix, one-record parameter block, trailer


kinds = st.sampled_from([ModelKind.BINARY, ModelKind.GAUSSIAN, ModelKind.LAPLACE])


@settings(max_examples=150, deadline=None)
@given(kinds, st.integers(0, 2**31 - 1), st.integers(2, 20))
def test_fuzzed_round_trip(kind, seed, K):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(1, 5, 3))
    sigma = float(rng.uniform(0.05, 8))
    mu = float(rng.uniform(-5, 5))
    values = np.round(rng.laplace(0, sigma, dims)).astype(int)
    # Sprinkle escapes, including magnitudes near the raw field limit.
    mask = rng.random(dims) < 0.1
    values[mask] = rng.integers(-(2**31), 2**31, mask.sum())
    q = QuantizedTensor(values)
    if kind is ModelKind.BINARY:
        params = binary_set(mu, sigma, float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))
    else:
        params = baseline_set(kind, mu, sigma)
    step = float(rng.uniform(0.5, 2))
    stream, back = roundtrip(q, params, step=step, K=K)
    assert back == q


@pytest.mark.parametrize("granularity", ["channel", "element"])
def test_round_trip_with_finer_granularity(granularity, rng):
    dims = (3, 4, 5)
    count = 3 if granularity == "channel" else 60
    values = np.column_stack([rng.uniform(-1, 1, count), rng.uniform(0.2, 3, count),
                              rng.uniform(0.05, 0.95, count), rng.uniform(0.05, 0.95, count)])
    params = ParameterSet(ModelKind.BINARY, granularity, values)
    q = QuantizedTensor(rng.integers(-6, 7, dims))
    assert roundtrip(q, params)[1] == q


def test_escape_path_used_beyond_cap():
    q = QuantizedTensor(np.array([[[0, 1, -2, 300, -100000, 2**31 - 1]]]))
    for params in (binary_set(), baseline_set(ModelKind.GAUSSIAN, 40.0), baseline_set(ModelKind.LAPLACE, -3.0)):
        assert roundtrip(q, params, K=255)[1] == q
        assert roundtrip(q, params, K=2)[1] == q


def test_magnitude_beyond_raw_field_is_rejected():
    q = QuantizedTensor(np.array([[[2**32]]]))
    with pytest.raises(ValueError):
        encode_tensor(q, binary_set())


def test_encoding_is_deterministic(rng):
    q = QuantizedTensor(rng.integers(-20, 21, (4, 8, 8)))
    params = binary_set(0.1, 3.0, 0.3, 0.6)
    assert encode_tensor(q, params).to_bytes() == encode_tensor(q, params).to_bytes()


@pytest.mark.parametrize("kind", [ModelKind.BINARY, ModelKind.GAUSSIAN, ModelKind.LAPLACE])
def test_payload_near_model_code_length(kind, rng):
    sigma = 2.5
    n = 100_000
    y = rng.laplace(0, sigma, n)
    if kind is ModelKind.BINARY:
        params = binary_set(0.0, sigma, 0.6, 0.7)
    else:
        params = baseline_set(kind, 0.2, sigma)
    q = np.round(y).astype(int)
    stream = encode_tensor(QuantizedTensor(q.reshape(1, 1, n)), params)
    model = params.as_float32().expand((1, 1, 1))
    ideal = float(np.sum(code_length(q, model)))
    assert len(stream.payload) * 8 <= 1.01 * ideal + 512


def test_corruption_is_detected(rng):
    q = QuantizedTensor(rng.integers(-5, 6, (2, 4, 4)))
    data = bytearray(encode_tensor(q, binary_set()).to_bytes())
    flipped = bytearray(data)
    flipped[-1] ^= 0x40
    with pytest.raises(FormatError, match="checksum"):
        decode_tensor(bytes(flipped))
    with pytest.raises(FormatError, match="magic"):
        decode_tensor(b"XXXX" + bytes(data[4:]))
    with pytest.raises(FormatError):
        decode_tensor(bytes(data[:-3]))
    with pytest.raises(FormatError):
        decode_tensor(bytes(data) + b"\0")
    with pytest.raises(FormatError):
        decode_tensor(bytes(data[:10]))


def test_header_and_param_kind_must_agree(rng):
    q = QuantizedTensor(rng.integers(-5, 6, (1, 2, 2)))
    data = bytearray(encode_tensor(q, baseline_set(ModelKind.GAUSSIAN)).to_bytes())
    data[5] = int(ModelKind.LAPLACE)
    with pytest.raises(FormatError):
        Bitstream.from_bytes(bytes(data))


def test_file_round_trip(tmp_path, rng):
    q = QuantizedTensor(rng.integers(-5, 6, (2, 3, 4)))
    path = tmp_path / "x.lbin"
    write_bitstream(encode_tensor(q, baseline_set(ModelKind.LAPLACE, 0.3, 1.2), step=0.9), path)
    stream = read_bitstream(path)
    assert stream.step == pytest.approx(0.9, rel=1e-7)
    assert decode_tensor(stream) == q
