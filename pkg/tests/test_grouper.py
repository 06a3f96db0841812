from math import comb

import pytest
from hypothesis import assume, given, settings, strategies as st

from vqcmp.grouper import (
    GroupSet,
    SamplingError,
    SamplingSpec,
    groupset_from_groups,
    load_groups,
    sample_groups,
    save_groups,
)

from conftest import make_refs


def spec(pairs=0, triples=0, quads=0, seed=7):
    return SamplingSpec(n_pairs=pairs, n_triples=triples, n_quads=quads, seed=seed)


def test_two_ids_force_the_single_pair():
    refs = make_refs(2)
    result = sample_groups(refs, spec(pairs=1))
    assert len(result.groups) == 1
    assert set(result.groups[0].member_ids) == {"img00000", "img00001"}


def test_counts_match_spec_per_size():
    refs = make_refs(30)
    result = sample_groups(refs, spec(pairs=40, triples=25, quads=10))
    assert len(result.by_size(2)) == 40
    assert len(result.by_size(3)) == 25
    assert len(result.by_size(4)) == 10


def test_determinism_byte_identical(tmp_path):
    refs = make_refs(50)
    a = sample_groups(refs, spec(pairs=30, triples=20, quads=10, seed=99))
    b = sample_groups(refs, spec(pairs=30, triples=20, quads=10, seed=99))
    path_a, path_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_groups(a.groups, path_a)
    save_groups(b.groups, path_b)
    assert path_a.read_bytes() == path_b.read_bytes()


def test_seed_changes_output():
    refs = make_refs(200)
    a = sample_groups(refs, spec(pairs=50, seed=1))
    b = sample_groups(refs, spec(pairs=50, seed=2))
    assert [g.member_ids for g in a.groups] != [g.member_ids for g in b.groups]


def test_infeasible_count_reports_feasible_maximum():
    refs = make_refs(4)  # C(4,2) = 6
    with pytest.raises(SamplingError, match="feasible maximum is 6"):
        sample_groups(refs, spec(pairs=7))


def test_too_few_images_for_size():
    with pytest.raises(SamplingError, match="at least 4"):
        sample_groups(make_refs(3), spec(quads=1))


def test_negative_count_rejected():
    with pytest.raises(SamplingError):
        spec(pairs=-1)


def test_duplicate_manifest_ids_rejected():
    refs = make_refs(3) + make_refs(1)
    with pytest.raises(SamplingError, match="duplicate"):
        sample_groups(refs, spec(pairs=1))


def test_groupset_rejects_duplicate_unordered_groups():
    refs = make_refs(2)
    from vqcmp.corpus import ImageGroup

    forward = ImageGroup(members=refs)
    backward = ImageGroup(members=refs[::-1])
    with pytest.raises(SamplingError, match="duplicate unordered"):
        GroupSet(groups=(forward, backward), spec=spec(pairs=2))


def test_exhaustive_request_is_satisfiable():
    refs = make_refs(4)
    result = sample_groups(refs, spec(pairs=6, quads=1))
    assert len(result.by_size(2)) == 6
    assert len(result.by_size(4)) == 1


def test_full_scale_counts():
    # the real pipeline's scale: 19K images -> 81K pairs + 27K triples + 18K quads
    refs = make_refs(19_000)
    result = sample_groups(refs, spec(pairs=81_000, triples=27_000, quads=18_000, seed=42))
    assert len(result.by_size(2)) == 81_000
    assert len(result.by_size(3)) == 27_000
    assert len(result.by_size(4)) == 18_000


def test_save_load_round_trip(tmp_path):
    refs = make_refs(10)
    result = sample_groups(refs, spec(pairs=5, triples=3))
    path = tmp_path / "groups.jsonl"
    save_groups(result.groups, path)
    loaded = load_groups(path)
    assert tuple(loaded) == result.groups
    rebuilt = groupset_from_groups(loaded)
    assert rebuilt.spec.n_pairs == 5 and rebuilt.spec.n_triples == 3


@settings(max_examples=40, deadline=None)
@given(
    n_ids=st.integers(min_value=4, max_value=24),
    pairs=st.integers(min_value=0, max_value=6),
    triples=st.integers(min_value=0, max_value=4),
    quads=st.integers(min_value=0, max_value=2),
    seed=st.integers(min_value=0, max_value=2**63 - 1),
)
def test_no_dupes_and_determinism_for_all_seeds(n_ids, pairs, triples, quads, seed):
    assume(pairs <= comb(n_ids, 2) and triples <= comb(n_ids, 3) and quads <= comb(n_ids, 4))
    refs = make_refs(n_ids)
    request = spec(pairs=pairs, triples=triples, quads=quads, seed=seed)
    result = sample_groups(refs, request)
    again = sample_groups(refs, request)
    assert result == again
    for group in result.groups:
        assert len(set(group.member_ids)) == group.size
    for size in (2, 3, 4):
        unordered = [frozenset(g.member_ids) for g in result.by_size(size)]
        assert len(set(unordered)) == len(unordered)
