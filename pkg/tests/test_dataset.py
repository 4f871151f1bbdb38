import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verbspace.dataset import (
    FoldAssignment,
    SyntheticSpec,
    VideoInstance,
    attach_labels,
    feature_matrix,
    generate_synthetic,
    ingest_features,
    load_folds,
    save_folds,
    stratified_folds,
    write_features,
)
from verbspace.errors import (
    DimensionMismatchError,
    DuplicateIdError,
    MalformedFileError,
    MissingVotesError,
    VerbspaceError,
)
from verbspace.label_space import Scheme, VerbVocabulary, VoteRecord


def inst(vid, cls="c", tag="T", feats=(0.0, 1.0)):
    return VideoInstance(vid, tag, cls, np.array(feats, dtype=float))


def two_class_spec(noise=0.0, seed=7, d=8, per=5):
    return SyntheticSpec(
        class_count=2, videos_per_class=per, feature_dim=d, noise_scale=noise,
        vote_profile=(VoteRecord("a", {"open": 3}, 3), VoteRecord("b", {"turn": 2, "open": 1}, 3)),
        seed=seed,
    )


class TestFeatureFile:
    def test_ingest(self, tmp_path):
        path = tmp_path / "f.tsv"
        path.write_text("d=4 n=3\n"
                        "v1\tBEOID\tc1\t1\t2\t3\t4\n"
                        "v2\tBEOID\tc1\t0.5\t-2\t3e-3\t4\n"
                        "v3\tCMU\tc2\t1\t2\t3\t4\n")
        instances = ingest_features(path)
        assert [i.video_id for i in instances] == ["v1", "v2", "v3"]
        assert all(i.dim == 4 for i in instances)
        assert instances[1].features.tolist() == [0.5, -2.0, 0.003, 4.0]

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "f.tsv"
        path.write_text("d=4 n=1\nv1\tT\tc\t1\t2\t3\n")
        with pytest.raises(DimensionMismatchError):
            ingest_features(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "f.tsv"
        path.write_text("d=1 n=2\nv1\tT\tc\t1\nv1\tT\tc\t2\n")
        with pytest.raises(DuplicateIdError):
            ingest_features(path)

    @pytest.mark.parametrize("body", [
        "d=1 n=1\nv1\tT\tc\tnan\n",
        "d=1 n=1\nv1\tT\tc\tinf\n",
        "d=1 n=1\nv1\tT\tc\tabc\n",
        "d=1 n=2\nv1\tT\tc\t1\n",
        "n=1\nv1\tT\tc\t1\n",
    ])
    def test_malformed(self, tmp_path, body):
        path = tmp_path / "f.tsv"
        path.write_text(body)
        with pytest.raises(MalformedFileError):
            ingest_features(path)

    def test_size_guard(self, tmp_path):
        path = tmp_path / "f.tsv"
        path.write_text("d=1 n=1\nv1\tT\tc\t1\n")
        with pytest.raises(MalformedFileError, match="limit"):
            ingest_features(path, max_bytes=5)

    @settings(max_examples=50)
    @given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=3, max_size=3),
                    min_size=1, max_size=6))
    def test_round_trip(self, rows):
        import tempfile
        from pathlib import Path

        instances = [inst(f"v{k}", f"c{k % 2}", "T", r) for k, r in enumerate(rows)]
        with tempfile.TemporaryDirectory() as d:
            write_features(instances, Path(d) / "f.tsv")
            assert ingest_features(Path(d) / "f.tsv") == instances

    def test_mixed_dims_rejected(self):
        with pytest.raises(DimensionMismatchError):
            feature_matrix([inst("a", feats=(1, 2)), inst("b", feats=(1, 2, 3))])


class TestSynthetic:
    def test_zero_noise(self):
        instances, votes = generate_synthetic(two_class_spec())
        assert len(instances) == 10
        assert [v.class_id for v in votes] == ["a", "b"]
        by_class = collections.defaultdict(list)
        for i in instances:
            by_class[i.class_id].append(i.features)
        for feats in by_class.values():
            for f in feats:
                assert np.array_equal(f, feats[0])
            assert np.linalg.norm(feats[0]) == pytest.approx(1.0)
        assert np.linalg.norm(by_class["a"][0] - by_class["b"][0]) > 0

    def test_deterministic(self):
        a, _ = generate_synthetic(two_class_spec(noise=0.1))
        b, _ = generate_synthetic(two_class_spec(noise=0.1))
        assert a == b
        assert all(x.features.tobytes() == y.features.tobytes() for x, y in zip(a, b))

    def test_seeds_differ(self):
        a, _ = generate_synthetic(two_class_spec(noise=0.1, seed=7))
        b, _ = generate_synthetic(two_class_spec(noise=0.1, seed=8))
        assert not np.array_equal(feature_matrix(a), feature_matrix(b))

    def test_low_dimension_warns(self, caplog):
        spec = two_class_spec(d=1)
        with caplog.at_level("WARNING"):
            instances, _ = generate_synthetic(spec)
        assert "feature_dim" in caplog.text
        assert len(instances) == 10

    def test_dataset_tags_round_robin(self):
        spec = SyntheticSpec(1, 4, 3, 0.0, (VoteRecord("a", {"x": 1}, 1),), dataset_tags=("P", "Q"))
        assert [i.dataset_tag for i in generate_synthetic(spec)[0]] == ["P", "Q", "P", "Q"]

    @pytest.mark.parametrize("kwargs", [
        {"class_count": 0}, {"noise_scale": -1.0}, {"videos_per_class": 0}, {"class_count": 3},
    ])
    def test_invalid_spec(self, kwargs):
        base = dict(class_count=2, videos_per_class=2, feature_dim=2, noise_scale=0.0,
                    vote_profile=(VoteRecord("a", {"x": 1}, 1), VoteRecord("b", {"x": 1}, 1)))
        with pytest.raises(VerbspaceError):
            SyntheticSpec(**{**base, **kwargs})

    def test_spec_dict_round_trip(self):
        spec = two_class_spec()
        assert SyntheticSpec.from_dict(spec.to_dict()) == spec


class TestFolds:
    def test_even_split(self):
        folds = stratified_folds([inst(f"v{k}") for k in range(10)], 5, seed=0)
        assert sorted(collections.Counter(folds.assignment.values()).values()) == [2] * 5

    def test_pigeonhole(self):
        folds = stratified_folds([inst(f"v{k}") for k in range(7)], 5, seed=0)
        assert sorted(collections.Counter(folds.assignment.values()).values()) == [1, 1, 1, 2, 2]

    def test_two_classes(self):
        instances = [inst(f"a{k}", "A") for k in range(4)] + [inst(f"b{k}", "B") for k in range(6)]
        folds = stratified_folds(instances, 2, seed=3)
        for k in range(2):
            members = set(folds.fold(k))
            assert sum(v.startswith("a") for v in members) == 2
            assert sum(v.startswith("b") for v in members) == 3

    def test_fold_count_too_small(self):
        with pytest.raises(VerbspaceError):
            stratified_folds([inst("a")], 1, seed=0)

    def test_seed_changes_assignment(self):
        instances = [inst(f"v{k}") for k in range(20)]
        assert stratified_folds(instances, 4, 1).assignment != stratified_folds(instances, 4, 2).assignment
        assert stratified_folds(instances, 4, 1) == stratified_folds(instances, 4, 1)

    def test_split_is_partition(self):
        instances = [inst(f"v{k}", f"c{k % 3}") for k in range(17)]
        folds = stratified_folds(instances, 4, seed=5)
        seen = []
        for k in range(4):
            train, test = folds.split(k)
            assert not set(train) & set(test)
            assert set(train) | set(test) == {i.video_id for i in instances}
            seen += test
        assert sorted(seen) == sorted(i.video_id for i in instances)

    def test_file_round_trip(self, tmp_path):
        folds = stratified_folds([inst(f"v{k}") for k in range(9)], 3, seed=0)
        save_folds(folds, tmp_path / "folds.txt")
        assert load_folds(tmp_path / "folds.txt") == folds

    def test_out_of_range(self):
        with pytest.raises(VerbspaceError):
            FoldAssignment(2, {"v": 2})


class TestAttachLabels:
    def setup_method(self):
        self.vocab = VerbVocabulary(("pour", "fill", "hold"))
        self.votes = [VoteRecord("pour-oil", {"pour": 9, "fill": 6, "hold": 3}, 9)]

    def test_class_level_broadcast(self):
        instances = [inst(f"v{k}", "pour-oil") for k in range(3)]
        pairs = attach_labels(instances, self.votes, self.vocab, "SAML")
        assert [p[0] for p in pairs] == instances
        assert all(lab == pairs[0][1] for _, lab in pairs)
        assert pairs[0][1].scheme is Scheme.SAML

    def test_sl(self):
        pairs = attach_labels([inst("v", "pour-oil")], self.votes, self.vocab, "SL")
        assert pairs[0][1].values.tolist() == [1, 0, 0]

    def test_missing_class(self):
        with pytest.raises(MissingVotesError, match="stir"):
            attach_labels([inst("v", "stir")], self.votes, self.vocab, "SL")
