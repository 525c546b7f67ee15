import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deploywatch.data import (
    DEFAULT_METRICS,
    DatasetError,
    LabelingScheme,
    binarize,
    entity_from_json,
    entity_to_json,
    load_dataset,
    save_dataset,
)


def entity_obj(ent_id="e1", t_history=4, stream=(1.0, 2.0), scores=(3,)):
    return {
        "id": ent_id,
        "t_history": t_history,
        "series": [
            {
                "service": "svc0",
                "metric": "cpu_usage",
                "history": [1.0] * t_history,
                "stream": list(stream),
            }
        ],
        "meta": [1, 2, 3, 4, 5, 6, 7, 8],
        "scores": list(scores),
    }


class TestBinarize:
    def test_hard_all_threes(self):
        assert binarize([3, 3], LabelingScheme.HARD) == 1

    def test_hard_vs_soft_mixed(self):
        assert binarize([3, 2], LabelingScheme.HARD) == 0
        assert binarize([3, 2], LabelingScheme.SOFT) == 1

    def test_naive_excludes_unsure(self):
        assert binarize([-1], LabelingScheme.NAIVE) is None
        assert binarize([0, 3], LabelingScheme.NAIVE) is None
        assert binarize([0, 1], LabelingScheme.NAIVE) == 0
        assert binarize([2, 3], LabelingScheme.NAIVE) == 1

    def test_soft_mixed_normal_abnormal_is_normal(self):
        assert binarize([0, 3], LabelingScheme.SOFT) == 0

    def test_invalid_score_raises(self):
        with pytest.raises(ValueError, match="outside"):
            binarize([5], LabelingScheme.HARD)

    def test_empty_scores_absent(self):
        assert binarize([], LabelingScheme.HARD) is None

    @given(st.lists(st.sampled_from([-1, 0, 1, 2, 3]), min_size=1, max_size=6))
    def test_hard_is_subset_of_soft(self, scores):
        if binarize(scores, LabelingScheme.HARD) == 1:
            assert binarize(scores, LabelingScheme.SOFT) == 1

    @given(st.lists(st.sampled_from([-1, 0, 1, 2, 3]), min_size=1, max_size=6))
    def test_total_and_deterministic(self, scores):
        for scheme in LabelingScheme:
            assert binarize(scores, scheme) == binarize(scores, scheme)


def write_dataset(path, entities, t_history=4, metrics=DEFAULT_METRICS):
    with open(path, "w") as fh:
        fh.write(json.dumps({"t_history": t_history, "metrics": list(metrics)}) + "\n")
        for e in entities:
            fh.write(json.dumps(e) + "\n")


class TestLoadDataset:
    def test_partition_counts(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_dataset(
            p,
            [
                entity_obj("a", scores=[3]),
                entity_obj("b", scores=[0]),
                entity_obj("c", scores=[]),
            ],
        )
        ds = load_dataset(p, LabelingScheme.HARD)
        assert len(ds.labeled) == 2
        assert len(ds.unlabeled) == 1
        assert list(ds.labels) == [1, 0]

    def test_empty_file_needs_header(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("")
        with pytest.raises(DatasetError, match="header"):
            load_dataset(p, LabelingScheme.HARD)

    def test_header_only_is_empty_dataset(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_dataset(p, [])
        ds = load_dataset(p, LabelingScheme.HARD)
        assert ds.labeled == [] and ds.unlabeled == []

    def test_unequal_history_lengths_rejected(self, tmp_path):
        obj = entity_obj("a")
        obj["series"].append(
            {"service": "svc1", "metric": "threads", "history": [1.0] * 3, "stream": [1.0, 2.0]}
        )
        p = tmp_path / "d.jsonl"
        write_dataset(p, [obj])
        with pytest.raises(DatasetError, match="history length"):
            load_dataset(p, LabelingScheme.HARD)

    def test_malformed_line_reports_lineno(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_dataset(p, [entity_obj("a")])
        with open(p, "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(DatasetError, match=":3"):
            load_dataset(p, LabelingScheme.HARD)

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_dataset(p, [entity_obj("a"), entity_obj("a")])
        with pytest.raises(DatasetError, match="duplicate entity id"):
            load_dataset(p, LabelingScheme.HARD)

    def test_bad_score_names_entity(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_dataset(p, [entity_obj("weird", scores=[7])])
        with pytest.raises(DatasetError, match="weird"):
            load_dataset(p, LabelingScheme.HARD)

    def test_naive_excluded_dropped(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_dataset(p, [entity_obj("a", scores=[-1]), entity_obj("b", scores=[3])])
        ds = load_dataset(p, LabelingScheme.NAIVE)
        assert [e.id for e in ds.labeled] == ["b"]

    def test_metric_outside_catalog_rejected(self, tmp_path):
        obj = entity_obj("a")
        obj["series"][0]["metric"] = "nonsense"
        p = tmp_path / "d.jsonl"
        write_dataset(p, [obj])
        with pytest.raises(DatasetError, match="catalog"):
            load_dataset(p, LabelingScheme.HARD)

    def test_meta_arity_enforced(self, tmp_path):
        obj = entity_obj("a")
        obj["meta"] = [1, 2, 3]
        p = tmp_path / "d.jsonl"
        write_dataset(p, [obj])
        with pytest.raises(DatasetError, match="meta"):
            load_dataset(p, LabelingScheme.HARD)


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    objs = []
    for i in range(5):
        obj = entity_obj(f"e{i}", stream=list(rng.standard_normal(3)), scores=[3] if i % 2 else [])
        obj["series"][0]["history"] = [
            None if rng.random() < 0.2 else float(v) for v in rng.standard_normal(4)
        ]
        objs.append(obj)
    p1 = tmp_path / "a.jsonl"
    write_dataset(p1, objs)
    ds1 = load_dataset(p1, LabelingScheme.HARD)
    p2 = tmp_path / "b.jsonl"
    save_dataset(
        p2, ds1.labeled + ds1.unlabeled, t_history=ds1.t_history, metrics=ds1.metrics
    )
    ds2 = load_dataset(p2, LabelingScheme.HARD)
    all1 = {e.id: e for e in ds1.labeled + ds1.unlabeled}
    all2 = {e.id: e for e in ds2.labeled + ds2.unlabeled}
    assert set(all1) == set(all2)
    for eid, e1 in all1.items():
        e2 = all2[eid]
        assert e1.label_scores == e2.label_scores
        np.testing.assert_array_equal(e1.meta, e2.meta)
        for s1, s2 in zip(e1.series, e2.series):
            assert s1.key == s2.key
            np.testing.assert_array_equal(s1.history, s2.history)
            np.testing.assert_array_equal(s1.stream, s2.stream)


def test_entity_json_roundtrip_preserves_missing():
    obj = entity_obj("a")
    obj["series"][0]["stream"] = [1.5, None, 2.5]
    ent = entity_from_json(obj)
    assert np.isnan(ent.series[0].stream[1])
    back = entity_to_json(ent)
    assert back["series"][0]["stream"][1] is None
