"""Property-based checks over randomly drawn shapes, splits and byte payloads."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pifnet.data import VolumeRecord, parse_volume, split_subjects, translate, write_volume
from pifnet.layers import conv3d_array, conv3d_input_grad
from pifnet.pif import make_patch_grid
from pifnet.training import balanced_accuracy, early_stopping_check

settings.register_profile("pifnet", max_examples=40, deadline=None)
settings.load_profile("pifnet")


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(0, 1), st.integers(0, 2 ** 31))
def test_conv_adjoint_identity(k, f, stride, padding, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 5, 6, 4))
    w = rng.normal(size=(f, 2, k, k, k))
    y = conv3d_array(x, w, None, stride, padding)
    g = rng.normal(size=y.shape)
    lhs = np.sum(y * g)
    rhs = np.sum(x * conv3d_input_grad(g, w, x.shape, stride, padding))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


@given(st.sampled_from([2, 3, 4, 5]), st.tuples(*[st.integers(1, 4)] * 3))
def test_patch_grid_invariants(s, counts):
    extents = tuple(c * s for c in counts)
    g = make_patch_grid(extents, s)
    assert len(g.origins) == np.prod(counts)
    assert list(g.origins) == sorted(g.origins)
    h = s // 2
    expected = [tuple(v + h for v in o) for o in g.origins if all(v + h + s <= e for v, e in zip(o, extents))]
    assert list(g.overlap_origins) == expected
    assert len(g.overlap_origins) == np.prod([len(range(h, e - s + 1, s)) for e in extents])


@given(st.integers(3, 40), st.integers(1, 3), st.integers(0, 1000))
def test_split_fractions_and_grouping(n_subjects, per_subject, seed):
    recs = [VolumeRecord(np.zeros(1), 0, f"s{i}") for i in range(n_subjects) for _ in range(per_subject)]
    out = split_subjects(recs, (0.2, 0.16, 0.64), seed=seed)
    by_subject = {}
    for r in out:
        by_subject.setdefault(r.subject_id, set()).add(r.split)
    assert all(len(v) == 1 for v in by_subject.values())
    for name, frac in zip(("test", "val", "train"), (0.2, 0.16, 0.64)):
        n = sum(v == {name} for v in by_subject.values())
        assert abs(n - frac * n_subjects) < 1


@given(arrays(np.float32, st.tuples(*[st.integers(1, 4)] * 4)))
def test_pifv_round_trip_is_bit_exact(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("v") / "a.pifv"
    write_volume(arr, path)
    assert parse_volume(path.read_bytes()).tobytes() == arr.tobytes()


@given(st.tuples(*[st.integers(-3, 3)] * 3))
def test_translate_round_trip_keeps_interior(shift):
    v = np.random.default_rng(0).uniform(size=(6, 6, 6))
    back = translate(translate(v, shift), [-s for s in shift])
    keep = tuple(slice(max(0, -s), 6 - max(0, s)) for s in shift)
    np.testing.assert_array_equal(back[keep], v[keep])
    assert np.count_nonzero(back) == back[keep].size


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.integers(0, 2 ** 31))
def test_balanced_accuracy_is_invariant_to_class_duplication(scores, seed):
    labels = np.random.default_rng(seed).integers(0, 2, size=len(scores))
    labels[0], labels[1] = 0, 1
    scores = np.array(scores)
    pos = labels == 1
    dup_scores = np.concatenate([scores, scores[pos], scores[pos]])
    dup_labels = np.concatenate([labels, labels[pos], labels[pos]])
    assert abs(balanced_accuracy(scores, labels) - balanced_accuracy(dup_scores, dup_labels)) < 1e-12


@given(st.lists(st.sampled_from([0.5, 0.6, 0.7, 0.8]), min_size=1, max_size=20), st.integers(1, 6))
def test_early_stopping_matches_definition(history, patience):
    best = history.index(max(history))
    assert early_stopping_check(history, patience) == (len(history) - 1 - best >= patience)
