import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dygmamba.errors import ContractError, MetricUndefinedError
from dygmamba.metrics import auc_roc, auc_roc_reference, average_precision, average_precision_reference
from dygmamba.verify import _tie_vectors


def test_perfect_order():
    assert average_precision([0.9, 0.1], [1, 0]) == 1.0
    assert auc_roc([0.9, 0.1], [1, 0]) == 1.0


def test_worst_order():
    assert auc_roc([0.1, 0.9], [1, 0]) == 0.0
    assert average_precision([0.1, 0.9], [1, 0]) == pytest.approx(0.5)


def test_all_tied():
    assert auc_roc([0.3, 0.3], [1, 0]) == 0.5
    # one threshold holding everything: precision 1/2 at recall 1
    assert average_precision([0.3, 0.3], [1, 0]) == 0.5


def test_tie_group_is_one_threshold():
    # top group {1, 0} gives P=1/2 at R=1/2; then {1} gives P=2/3 at R=1
    assert average_precision([0.9, 0.9, 0.5], [1, 0, 1]) == pytest.approx(0.5 * 0.5 + 0.5 * 2 / 3)


@pytest.mark.parametrize("labels", [[1, 1], [0, 0, 0]])
def test_single_class_undefined(labels):
    with pytest.raises(MetricUndefinedError):
        average_precision(np.zeros(len(labels)), labels)
    with pytest.raises(MetricUndefinedError):
        auc_roc(np.zeros(len(labels)), labels)


def test_contract_errors():
    with pytest.raises(ContractError):
        auc_roc([0.1, 0.2], [1])
    with pytest.raises(ContractError):
        auc_roc([0.1, 0.2], [1, 2])
    with pytest.raises(ContractError):
        average_precision([np.nan, 0.2], [1, 0])


@pytest.mark.parametrize("n", range(2, 7))
def test_enumeration_matches_reference(n):
    for s, y in _tie_vectors(n):
        assert average_precision(s, y) == pytest.approx(average_precision_reference(s, y), abs=1e-12)
        assert auc_roc(s, y) == pytest.approx(auc_roc_reference(s, y), abs=1e-12)


def test_tie_vectors_count():
    # groupings of 3: (3) has 4 label splits, (1,2) and (2,1) have 6, (1,1,1) has 8;
    # each grouping loses its all-positive and all-negative vector
    vecs = list(_tie_vectors(3))
    assert len(vecs) == 24 - 2 * 4


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=30))
def test_random_matches_reference(pairs):
    s = np.array([p[0] / 5 for p in pairs])
    y = np.array([int(p[1]) for p in pairs])
    if y.all() or not y.any():
        return
    assert average_precision(s, y) == pytest.approx(average_precision_reference(s, y), abs=1e-12)
    assert auc_roc(s, y) == pytest.approx(auc_roc_reference(s, y), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_bounds_and_flip(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=40)
    y = np.r_[1, 0, rng.integers(0, 2, 38)]
    ap, auc = average_precision(s, y), auc_roc(s, y)
    assert 0.0 <= ap <= 1.0 and 0.0 <= auc <= 1.0
    assert auc_roc(-s, y) == pytest.approx(1.0 - auc, abs=1e-12)
