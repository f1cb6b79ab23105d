import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from e2evarnet.errors import InvalidInputError, InvalidParamsError
from e2evarnet.masking import (
    SamplingMask,
    acs_start,
    apply_mask,
    center_mask,
    equispaced_mask,
    format_mask_spec,
    full_mask,
    mask_from_spec,
    parse_mask_spec,
    random_mask,
)

import oracles


def test_equispaced_example_w8():
    m = equispaced_mask(8, 4, 2, 0)
    assert m.columns.astype(int).tolist() == [1, 0, 0, 1, 1, 0, 0, 0]
    assert m.num_sampled == 3
    assert m.num_acs == 2 and m.acs_begin == 3


@pytest.mark.parametrize("width", [320, 368, 373])
@pytest.mark.parametrize("r,l", [(4, 30), (8, 30), (4, 8), (6, 24), (3, 0)])
def test_equispaced_counts_match_oracle(width, r, l):
    for offset in range(r):
        m = equispaced_mask(width, r, l, offset)
        assert m.num_sampled == oracles.equispaced_count(width, r, l, offset)


@settings(max_examples=100, deadline=None)
@given(
    width=st.integers(1, 400),
    r=st.integers(1, 12),
    data=st.data(),
)
def test_equispaced_invariants(width, r, data):
    l = data.draw(st.integers(0, width))
    offset = data.draw(st.integers(0, r - 1))
    assume(l > 0 or offset < width)
    m = equispaced_mask(width, r, l, offset)
    begin = acs_start(width, l)
    assert m.columns[begin : begin + l].all()
    outer = np.arange(width)
    assert m.columns[outer % r == offset].all()
    assert m.num_sampled == oracles.equispaced_count(width, r, l, offset)


def test_acs_block_centered_at_odd_width():
    m = equispaced_mask(373, 4, 30)
    assert m.acs_begin == (373 - 30) // 2 == 171


@pytest.mark.parametrize(
    "kw", [dict(r=0, l=4), dict(r=4, l=-1), dict(r=4, l=9), dict(r=4, l=2, offset=4), dict(r=4, l=2, offset=-1)]
)
def test_equispaced_rejects_bad_params(kw):
    with pytest.raises(InvalidParamsError):
        equispaced_mask(8, **kw)


def test_equispaced_empty_is_rejected():
    with pytest.raises(InvalidParamsError, match="no columns"):
        equispaced_mask(2, 4, 0, offset=3)


def test_equispaced_r1_samples_everything():
    assert equispaced_mask(10, 1, 0).num_sampled == 10


def test_random_mask_deterministic_per_seed():
    a = random_mask(368, 4, 0.08, seed=3)
    b = random_mask(368, 4, 0.08, seed=3)
    c = random_mask(368, 4, 0.08, seed=4)
    assert a == b and hash(a) == hash(b)
    assert a != c


def test_random_mask_acs_and_expected_acceleration():
    rates = []
    for seed in range(300):
        m = random_mask(368, 4, 0.08, seed=seed)
        assert m.num_acs == round(0.08 * 368)
        assert m.columns[m.acs_begin : m.acs_begin + m.num_acs].all()
        rates.append(m.num_sampled)
    # expected number of columns is W / a
    assert abs(np.mean(rates) - 368 / 4) < 0.02 * 92


def test_random_mask_infeasible_and_bad_params():
    with pytest.raises(InvalidParamsError, match="infeasible"):
        random_mask(100, 8, 0.2)
    with pytest.raises(InvalidParamsError):
        random_mask(100, 0.5, 0.08)
    with pytest.raises(InvalidParamsError):
        random_mask(100, 4, 0.0)
    with pytest.raises(InvalidParamsError, match="no ACS"):
        random_mask(10, 4, 0.01)


def test_full_and_center_mask():
    f = full_mask(12)
    assert f.num_sampled == 12 and f.acceleration == 1.0
    c = center_mask(equispaced_mask(12, 4, 4))
    assert c.num_sampled == 4 and c.columns[4:8].all()
    with pytest.raises(InvalidInputError):
        center_mask(equispaced_mask(12, 4, 0))


def test_mask_validation():
    with pytest.raises(InvalidParamsError, match="no columns"):
        SamplingMask(np.zeros(4, bool), "custom", {}, 0, 0)
    with pytest.raises(InvalidParamsError, match="ACS"):
        SamplingMask(np.array([1, 0, 0, 1], bool), "custom", {}, 2, 1)
    m = equispaced_mask(8, 4, 2)
    with pytest.raises(ValueError):
        m.columns[0] = False


def test_apply_mask():
    k = np.ones((2, 3, 8), complex)
    m = equispaced_mask(8, 4, 2)
    out = apply_mask(k, m)
    assert np.all(out[..., ~m.columns] == 0) and np.all(out[..., m.columns] == 1)


def test_parse_and_format_roundtrip():
    assert parse_mask_spec("equispaced:r=4,l=30,offset=1") == {"kind": "equispaced", "r": 4, "l": 30, "offset": 1}
    assert parse_mask_spec("random:a=4,f=0.08,seed=42") == {"kind": "random", "a": 4.0, "f": 0.08, "seed": 42}
    assert parse_mask_spec("full") == {"kind": "full"}
    for spec in ("equispaced:r=4,l=30,offset=1", "random:a=4.0,f=0.08,seed=42", "full"):
        m = mask_from_spec(spec, 368)
        assert mask_from_spec(format_mask_spec(m), 368) == m


@pytest.mark.parametrize(
    "spec", ["", "spiral:r=2", "equispaced:r=4", "equispaced:r=4,l=3,q=1", "random:a=x,f=0.1", "equispaced:r4,l=2"]
)
def test_parse_rejects(spec):
    with pytest.raises(InvalidParamsError):
        parse_mask_spec(spec)


def test_mask_from_spec_seed_override():
    a = mask_from_spec("random:a=4,f=0.08,seed=1", 368, seed=7)
    assert a == random_mask(368, 4, 0.08, seed=7)
