import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stnn.tensor import (
    Buffer,
    IndexRange,
    TensorError,
    TensorView,
    compose,
    from_array,
    index_of,
    lex_strides,
    lex_view,
)


def lex_indices(shape):
    return itertools.product(*map(range, shape))


class TestLexStrides:
    def test_examples(self):
        assert lex_strides([2, 3, 4]) == (12, 4, 1)
        assert lex_strides([5]) == (1,)
        assert lex_strides([1, 1, 7]) == (7, 7, 1)

    @pytest.mark.parametrize("shape", [(2, 3, 4), (5,), (1, 1, 7), (3, 2), (2, 2, 2, 2)])
    def test_monotone_in_lex_order(self, shape):
        s = lex_strides(shape)
        addresses = [sum(si * ii for si, ii in zip(s, idx)) for idx in lex_indices(shape)]
        assert addresses == sorted(set(addresses))
        assert addresses[0] == 0 and addresses[-1] == np.prod(shape) - 1

    def test_uniqueness_on_small_shapes(self):
        # the only bijective monotone strided addressing is the lexicographic one
        for shape in [(2, 3), (3, 2), (2, 2, 2)]:
            n = int(np.prod(shape))
            expected = lex_strides(shape)
            found = []
            for cand in itertools.product(range(n + 1), repeat=len(shape)):
                addrs = [sum(si * ii for si, ii in zip(cand, idx))
                         for idx in lex_indices(shape)]
                if sorted(addrs) == list(range(n)) and addrs == sorted(addrs):
                    found.append(cand)
            assert found == [expected]

    def test_errors(self):
        with pytest.raises(TensorError):
            lex_strides([])
        with pytest.raises(TensorError):
            lex_strides([2, 0])


class TestAddressing:
    def test_address_examples(self):
        v = from_array(np.arange(24).reshape(2, 3, 4))
        assert v.address((1, 1, 1)) == 17
        assert v.address((0, 0, 0)) == v.offset
        w = TensorView(Buffer(12), offset=3, strides=(2,), shape=(5,))
        assert w.address((4,)) == 11
        with pytest.raises(TensorError):
            w.address((5,))
        with pytest.raises(TensorError):
            v.address((1, 1))

    def test_index_of_examples(self):
        assert index_of([2, 3, 4], 17) == (1, 1, 1)
        assert index_of([2, 3, 4], 0) == (0, 0, 0)
        assert index_of([2, 3, 4], 23) == (1, 2, 3)
        with pytest.raises(TensorError):
            index_of([2, 3, 4], 24)

    @given(st.lists(st.integers(1, 6), min_size=1, max_size=5), st.data())
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, shape, data):
        n = int(np.prod(shape))
        a = data.draw(st.integers(0, n - 1))
        idx = index_of(shape, a)
        v = lex_view(Buffer(n), shape)
        assert v.address(idx) == a


class TestSlice:
    def test_identity_slice(self):
        v = from_array(np.arange(12).reshape(3, 4))
        s = v.slice([IndexRange.full(3), IndexRange.full(4)])
        assert s.shape == v.shape and s.offset == v.offset
        assert np.array_equal(s.to_array(), v.to_array())

    def test_strided_slice(self):
        v = from_array([0.0, 1, 2, 3])
        s = v.slice([IndexRange(1, 4, 2)])
        assert s.shape == (2,)
        assert s.to_array().tolist() == [1.0, 3.0]

    def test_column_reversed(self):
        arr = np.arange(9.0).reshape(3, 3)
        v = from_array(arr)
        s = v.slice([IndexRange(0, 3, 1), IndexRange(2, -1, -1)])
        assert np.array_equal(s.to_array(), arr[:, ::-1])

    def test_no_copy(self):
        v = from_array(np.zeros((3, 3)))
        child = v.slice([IndexRange(0, 3, 1), IndexRange(2, -1, -1)])
        v[(1, 2)] = 42.0
        assert child[(1, 0)] == 42.0

    @given(st.integers(1, 8), st.data())
    @settings(max_examples=200, deadline=None)
    def test_range_length_properties(self, n, data):
        a = data.draw(st.integers(0, n - 1))
        r = data.draw(st.integers(-n, n).filter(lambda x: x != 0))
        b = data.draw(st.integers(-1, n).filter(lambda bb: (bb - a) * r > 0))
        rng = IndexRange(a, b, r)
        k = len(rng)
        assert 1 <= k
        hits = list(rng.indices())
        assert len(hits) == k
        if all(0 <= h < n for h in hits):
            assert k <= n
            if k == n:
                assert abs(r) == 1 and r * (b - a) == n

    def test_empty_range_rejected(self):
        with pytest.raises(TensorError):
            IndexRange(2, 2, 1)
        with pytest.raises(TensorError):
            IndexRange(0, 4, 0)


class TestTransposeAndWindows:
    def test_transpose_no_copy(self):
        arr = np.arange(6.0).reshape(2, 3)
        v = from_array(arr)
        t = v.transpose((1, 0))
        assert np.array_equal(t.to_array(), arr.T)
        v[(0, 2)] = -5.0
        assert t[(2, 0)] == -5.0

    def test_window_1d_example(self):
        v = from_array(np.arange(7.0))
        w = v.sliding_window_1d(3, 2)
        assert w.shape == (3, 3)
        expected = [[0, 1, 2], [2, 3, 4], [4, 5, 6]]
        assert w.to_array().tolist() == expected

    def test_window_whole_signal(self):
        v = from_array(np.arange(5.0))
        w = v.sliding_window_1d(5, 1)
        assert w.shape == (1, 5)
        assert w.to_array()[0].tolist() == list(range(5))

    def test_window_too_large(self):
        v = from_array(np.arange(4.0))
        with pytest.raises(TensorError):
            v.sliding_window_1d(5, 1)

    def test_window_2d_agrees_flattened_and_not(self):
        arr = np.arange(24.0).reshape(6, 4)
        v = from_array(arr)
        w4 = v.sliding_window_2d(2, 4, 2, 1)
        w3 = v.sliding_window_2d(2, 4, 2, 1, flatten=True)
        assert w4.shape == (3, 1, 2, 4)
        assert w3.shape == (3, 1, 8)
        assert np.array_equal(w4.to_array().reshape(3, 1, 8), w3.to_array())

    def test_flatten_rejected_for_noncontiguous(self):
        arr = np.arange(24.0).reshape(6, 4)
        v = from_array(arr)
        with pytest.raises(TensorError):
            v.sliding_window_2d(2, 2, 2, 2, flatten=True)


class TestCompose:
    def test_identity(self):
        eye = from_array(np.eye(2))
        b = from_array(np.arange(6.0).reshape(2, 3))
        c = compose(eye, b, 1)
        assert np.array_equal(c.to_array(), b.to_array())
        c2 = compose(b.transpose((1, 0)), eye, 1)
        assert np.array_equal(c2.to_array(), b.to_array().T)

    def test_dot_product(self):
        a = from_array([1.0, 2, 3])
        b = from_array([4.0, 5, 6])
        c = compose(a, b, 1)
        assert c.shape == (1,)
        assert c[0] == 32.0

    def test_translate(self):
        a = from_array(np.eye(2))
        b = from_array(np.ones((2, 2)))
        t = from_array(np.full((2, 2), 10.0))
        c = compose(a, b, 1, translate=t)
        assert np.allclose(c.to_array(), np.ones((2, 2)) + 10)

    def test_associative(self, rng):
        for _ in range(10):
            a = from_array(rng.normal(size=(3, 4)))
            b = from_array(rng.normal(size=(4, 5)))
            c = from_array(rng.normal(size=(5, 2)))
            left = compose(compose(a, b, 1), c, 1).to_array()
            right = compose(a, compose(b, c, 1), 1).to_array()
            assert np.max(np.abs(left - right)) < 1e-12

    def test_incompatible_split(self):
        a = from_array(np.ones((2, 3)))
        b = from_array(np.ones((4, 2)))
        with pytest.raises(TensorError):
            compose(a, b, 1)
