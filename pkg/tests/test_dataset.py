import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stair.dataset import (
    DatasetError,
    InteractionDataset,
    from_pairs,
    k_core_filter,
    load_features,
    load_interactions,
    read_fmat,
    split_counts,
    split_interactions,
    write_fmat,
)


def naive_k_core(records, k):
    """Remove one under-degree node at a time until none is left."""
    alive = set(records)
    while True:
        deg = {}
        for u, i in alive:
            deg[("u", u)] = deg.get(("u", u), 0) + 1
            deg[("i", i)] = deg.get(("i", i), 0) + 1
        weak = [n for n, d in deg.items() if d < k]
        if not weak:
            return alive
        node = weak[0]
        alive = {(u, i) for u, i in alive if ("u", u) != node and ("i", i) != node}


def write_tsv(path, records, header=True):
    with open(path, "w") as fh:
        if header:
            fh.write("# user\titem\n")
        for u, i in records:
            fh.write(f"{u}\t{i}\n")


def test_identity_filter_when_all_degrees_meet_threshold(tmp_path):
    records = [(f"u{u}", f"i{i}") for u in range(5) for i in range(5)]
    write_tsv(tmp_path / "x.tsv", records)
    ds = load_interactions(tmp_path / "x.tsv", min_degree=5)
    assert (ds.num_users, ds.num_items, len(ds.train)) == (5, 5, 25)


def test_k_core_six_node_trace():
    # u2-i2 dies first (i2 has degree 1), which then leaves u2 with degree 1
    records = [("u0", "i0"), ("u0", "i1"), ("u1", "i0"), ("u1", "i1"), ("u2", "i2"), ("u2", "i0")]
    ds = from_pairs(records, min_degree=2)
    assert ds.user_ids == ["u0", "u1"]
    assert ds.item_ids == ["i0", "i1"]
    assert sorted(map(tuple, ds.train.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_low_degree_user_removed_and_cascade(tmp_path):
    rng = np.random.default_rng(0)
    records = [(f"u{u}", f"i{i}") for u in range(6) for i in range(6) if (u + i) % 7 != 0]
    records += [("lazy", "i0"), ("lazy", "rare")]
    ds = from_pairs(records, min_degree=5)
    assert "lazy" not in ds.user_ids
    assert "rare" not in ds.item_ids


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), min_size=1, max_size=60), st.integers(1, 4))
def test_k_core_matches_naive_oracle(records, k):
    records = list(dict.fromkeys(records))
    u = np.array([r[0] for r in records])
    i = np.array([r[1] for r in records])
    keep = k_core_filter(u, i, k)
    got = {r for r, kept in zip(records, keep) if kept}
    assert got == naive_k_core(records, k)
    # idempotent
    if got:
        sub = [r for r in records if r in got]
        again = k_core_filter(np.array([r[0] for r in sub]), np.array([r[1] for r in sub]), k)
        assert again.all()


def test_first_appearance_mapping():
    ds = from_pairs([("b", "y"), ("a", "x"), ("b", "x"), ("a", "y")], min_degree=1)
    assert ds.user_ids == ["b", "a"]
    assert ds.item_ids == ["y", "x"]
    assert ds.train.tolist() == [[0, 0], [1, 1], [0, 1], [1, 0]]


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("# header\nu1\ti1\nbroken line\n")
    with pytest.raises(DatasetError, match=":3:"):
        load_interactions(p, 1)


def test_degenerate_dataset(tmp_path):
    write_tsv(tmp_path / "x.tsv", [("u", "i")])
    with pytest.raises(DatasetError, match="degenerate"):
        load_interactions(tmp_path / "x.tsv", 5)


@pytest.mark.parametrize("n, expected", [(10, (8, 1, 1)), (5, (4, 0, 1)), (3, (3, 0, 0)), (20, (16, 2, 2)), (7, (5, 1, 1))])
def test_split_counts(n, expected):
    assert split_counts(n, (0.8, 0.1, 0.1)) == expected


def _user_grid(num_users, per_user, num_items):
    pairs = [(u, (u * 3 + k) % num_items) for u in range(num_users) for k in range(per_user)]
    return InteractionDataset(num_users, num_items, pairs)


def test_split_ten_interactions_per_user():
    ds = split_interactions(_user_grid(4, 10, 12), seed=3)
    for u in range(4):
        assert (ds.train[:, 0] == u).sum() == 8
        assert (ds.valid[:, 0] == u).sum() == 1
        assert (ds.test[:, 0] == u).sum() == 1


def test_split_small_users_stay_in_train():
    ds = InteractionDataset(2, 3, [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2)])
    out = split_interactions(ds, seed=0)
    assert (out.train[:, 0] == 0).sum() == 2


def test_split_deterministic_and_disjoint():
    base = _user_grid(30, 9, 40)
    a = split_interactions(base, seed=11)
    b = split_interactions(base, seed=11)
    for name in ("train", "valid", "test"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    a.validate()
    assert a.num_interactions == len(base.train)


def test_split_cold_items_returned_to_train():
    # item 3 only ever seen by user 0
    pairs = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2)]
    ds = InteractionDataset(2, 4, pairs)
    for seed in range(20):
        out = split_interactions(ds, seed=seed)
        assert 3 in out.train[:, 1]
        out.validate()


def test_fmat_roundtrip(tmp_path):
    m = np.arange(12, dtype=np.float32).reshape(4, 3) / 7
    write_fmat(tmp_path / "f.fmat", m)
    raw = (tmp_path / "f.fmat").read_bytes()
    assert raw[:4] == b"FMAT" and struct.unpack("<II", raw[4:12]) == (4, 3)
    assert len(raw) == 12 + 4 * 12
    np.testing.assert_array_equal(read_fmat(tmp_path / "f.fmat"), m)
    feats = load_features(tmp_path / "f.fmat", 4, "textual")
    assert feats.dim == 3 and feats.modality_id == "textual"


def test_fmat_row_mismatch_names_both_counts(tmp_path):
    write_fmat(tmp_path / "f.fmat", np.zeros((10, 2)))
    with pytest.raises(DatasetError, match="10 rows.*12 items"):
        load_features(tmp_path / "f.fmat", 12)


def test_fmat_non_finite_location(tmp_path):
    m = np.zeros((3, 4))
    m[2, 1] = np.nan
    write_fmat(tmp_path / "f.fmat", m)
    with pytest.raises(DatasetError, match="row 2, col 1"):
        load_features(tmp_path / "f.fmat", 3)


def test_fmat_truncated(tmp_path):
    write_fmat(tmp_path / "f.fmat", np.zeros((3, 4)))
    p = tmp_path / "f.fmat"
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(DatasetError, match="bytes"):
        read_fmat(p)


def test_dataset_save_load(tmp_path):
    ds = split_interactions(_user_grid(10, 6, 15), seed=1)
    ds.save(tmp_path / "d.npz")
    back = InteractionDataset.load(tmp_path / "d.npz")
    assert back.content_hash() == ds.content_hash()
