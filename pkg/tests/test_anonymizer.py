import numpy as np
import pytest

from privmarket.anonymizer import (
    GaussianNoiseSpec,
    anonymize,
    build_market,
    generalize_identity,
    k_anonymity_level,
    submit,
    t_closeness_level,
)
from privmarket.core import COALITION_ID_BASE, Coalition, Dataset
from privmarket.errors import MembershipError, ParameterError

from conftest import toy_dataset


def test_zero_variance_is_identity(three_users):
    out = anonymize(three_users, GaussianNoiseSpec(0.0, seed=5))
    assert out == three_users
    assert out.features.tobytes() == three_users.features.tobytes()


def test_labels_and_owners_untouched(three_users):
    out = anonymize(three_users, GaussianNoiseSpec(3.0, seed=5))
    assert np.array_equal(out.labels, three_users.labels)
    assert np.array_equal(out.owners, three_users.owners)
    assert not np.array_equal(out.features, three_users.features)


@pytest.mark.parametrize("p", [4.0])
def test_noise_variance_calibration(p):
    data = Dataset(np.zeros((1000, 100)), [0] * 1000, [1] * 1000)
    residual = anonymize(data, GaussianNoiseSpec(p, seed=2024)).features - data.features
    assert residual.size == 10**5
    assert abs(residual.var(ddof=1) - p) <= 0.05 * p
    assert abs(residual.mean()) < 0.05


def test_negative_variance_rejected():
    with pytest.raises(ParameterError):
        GaussianNoiseSpec(-1.0)


def test_noise_is_consistent_for_subsets(three_users):
    spec = GaussianNoiseSpec(2.0, seed=8)
    whole = anonymize(three_users, spec)
    for owner in (1, 2, 3):
        assert anonymize(three_users.for_owner(owner), spec) == whole.for_owner(owner)


def test_noise_scales_with_sqrt_p(three_users):
    # same underlying draws at every level: residual(p) = sqrt(p) * z
    r1 = anonymize(three_users, GaussianNoiseSpec(1.0, 3)).features - three_users.features
    r9 = anonymize(three_users, GaussianNoiseSpec(9.0, 3)).features - three_users.features
    np.testing.assert_allclose(r9, 3 * r1, rtol=1e-12)


def test_different_seeds_differ(three_users):
    a = anonymize(three_users, GaussianNoiseSpec(1.0, 1))
    b = anonymize(three_users, GaussianNoiseSpec(1.0, 2))
    assert not np.array_equal(a.features, b.features)


def test_t_closeness_is_noise_variance():
    data = toy_dataset({4: 3})
    assert t_closeness_level(submit(data, 4, 0.0, 1)) == 0
    assert t_closeness_level(submit(data, 4, 8.0, 1)) == 8


def test_coalition_submission_reports_member_levels():
    data = toy_dataset({2: 3, 3: 2})
    state = build_market(data, {2: 4.0, 3: 8.0}, seed=1)
    c = Coalition(COALITION_ID_BASE, {2, 3})
    sub = generalize_identity(c, [state.submission(2), state.submission(3)])
    assert sorted(t_closeness_level(sub)) == sorted(
        t_closeness_level(state.submission(u)) for u in (2, 3)
    ) == [4.0, 8.0]


@pytest.mark.parametrize("members,k", [({1}, 1), ({2, 3}, 2), ({1, 2, 3, 4, 5}, 5)])
def test_k_anonymity_is_coalition_size(members, k):
    assert k_anonymity_level(Coalition(COALITION_ID_BASE, members)) == k


def test_generalize_single_member():
    data = toy_dataset({1: 4})
    c = Coalition(COALITION_ID_BASE + 7, {1})
    sub = generalize_identity(c, [submit(data, 1, 0.0, 0)])
    assert len(sub.data) == 4
    assert set(sub.data.owners.tolist()) == {c.id}


def test_generalize_two_members_counts_and_tags():
    data = toy_dataset({2: 3, 3: 2})
    state = build_market(data)
    c = Coalition(COALITION_ID_BASE, {2, 3})
    sub = generalize_identity(c, [state.submission(2), state.submission(3)], seed=4)
    assert len(sub.data) == 5
    assert (sub.data.owners == c.id).all()
    # same multiset of rows, possibly reordered
    rows = lambda d: sorted(map(tuple, d.features.tolist()))
    assert rows(sub.data) == rows(state.full())


def test_serialized_coalition_data_has_no_member_ids():
    # labels 0/1 and non-integer features, so any "2" or "3" token could only be an owner id
    data = toy_dataset({2: 6, 3: 5}, n_labels=2)
    state = build_market(data, {2: 1.0, 3: 2.0}, seed=3)
    c = Coalition(COALITION_ID_BASE, {2, 3})
    text = generalize_identity(c, [state.submission(2), state.submission(3)]).to_csv_string()
    tokens = [tok for line in text.splitlines()[1:] for tok in line.split(",")]
    assert "2" not in tokens and "3" not in tokens
    assert str(c.id) in tokens


def test_generalize_shuffles_positions():
    data = toy_dataset({2: 20, 3: 20})
    state = build_market(data)
    c = Coalition(COALITION_ID_BASE, {2, 3})
    sub = generalize_identity(c, [state.submission(2), state.submission(3)], seed=1)
    assert not np.array_equal(sub.data.features, state.full().features)


def test_generalize_rejects_non_member():
    data = toy_dataset({2: 2, 3: 2})
    state = build_market(data)
    with pytest.raises(MembershipError):
        generalize_identity(Coalition(COALITION_ID_BASE, {2}), [state.submission(3)])
