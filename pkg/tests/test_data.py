import json
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from emopolar.data import (EMOTIONS, GITHUB, STACKOVERFLOW, DatasetError, DatasetManifest, SplitAssignment,
                           Utterance, ValidationError, label_counts, load_dataset, n_train_for, prevalence,
                           stratified_split, write_dataset)
from emopolar.synthetic import manifest_standin, perturbed


def test_manifest_values():
    assert GITHUB.expected_total == 2000
    assert [GITHUB.counts[e] for e in EMOTIONS] == [340, 220, 198, 422, 274, 328]
    assert STACKOVERFLOW.expected_total == 4800
    assert [STACKOVERFLOW.counts[e] for e in EMOTIONS] == [882, 1220, 106, 491, 230, 45]
    with pytest.raises(ValueError):
        DatasetManifest("bad", 3, {"anger": 4})


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_roundtrip_and_manifest(tmp_path, fmt):
    data = manifest_standin(GITHUB)
    path = tmp_path / f"gh.{fmt}"
    write_dataset(data, path, fmt)
    back = load_dataset(path, GITHUB, fmt)
    assert back == data


def test_quoted_csv_and_row_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text('id,text,anger,love,fear,joy,sadness,surprise\n'
                 'a,"hello, ""world""\nsecond line",1,0,0,0,0,0\n'
                 'b,plain,0,0,0,0,0,1\n', encoding="utf-8")
    data = load_dataset(p)
    assert data[0].text == 'hello, "world"\nsecond line' and data[1].labels[5]
    p.write_text('id,text,anger,love,fear,joy,sadness,surprise\nb,x,0,0,2,0,0,0\n', encoding="utf-8")
    with pytest.raises(DatasetError) as info:
        load_dataset(p)
    assert info.value.row == 2
    p.write_text('id,text,anger,love,fear,joy,sadness,surprise\nb,x,0,0,0\n', encoding="utf-8")
    with pytest.raises(DatasetError, match="row 2"):
        load_dataset(p)


def test_empty_file_only_valid_without_manifest(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("id,text,anger,love,fear,joy,sadness,surprise\n", encoding="utf-8")
    assert load_dataset(p) == []
    with pytest.raises(ValidationError):
        load_dataset(p, GITHUB)


def test_manifest_mismatch_lists_expected_and_found():
    data = perturbed(manifest_standin(GITHUB), 0, "fear")
    with pytest.raises(ValidationError, match=r"fear: expected 198, found 19[79]"):
        GITHUB.check(data)


def test_duplicate_ids_rejected(tmp_path):
    u = Utterance("x", "t", (False,) * 6)
    p = tmp_path / "d.jsonl"
    write_dataset([u, u], p, "jsonl")
    with pytest.raises(ValidationError, match="duplicate"):
        load_dataset(p)


def test_manifest_json_roundtrip(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(STACKOVERFLOW.to_json())
    assert DatasetManifest.load(p) == STACKOVERFLOW


def test_split_sizes_prevalence_and_speed():
    data = manifest_standin(GITHUB, seed=3)
    t0 = time.perf_counter()
    split = stratified_split(data, seed=11)
    elapsed = time.perf_counter() - t0
    train, test = split.apply(data)
    assert abs(len(train) - 1600) <= 1 and abs(len(test) - 400) <= 1
    assert np.all(np.abs(prevalence(test) - prevalence(data)) <= 0.02)
    assert elapsed < 1.0


def test_split_determinism_and_order_independence():
    data = manifest_standin(STACKOVERFLOW, seed=1)
    a = stratified_split(data, seed=5)
    b = stratified_split(list(reversed(data)), seed=5)
    assert a.tags == b.tags
    assert stratified_split(data, seed=6).tags != a.tags
    assert SplitAssignment.from_json(a.to_json()) == a


def test_single_utterance_goes_to_train():
    assert n_train_for(1, 0.8) == 1
    split = stratified_split([Utterance("only", "x", (True,) + (False,) * 5)])
    assert split.tags == {"only": "train"}


label_vec = st.tuples(*[st.booleans()] * 6)


@given(st.lists(label_vec, min_size=1, max_size=120), st.integers(0, 2**32 - 1))
def test_split_is_a_partition_with_exact_size(labels, seed):
    data = [Utterance(f"u{i}", "t", lab) for i, lab in enumerate(labels)]
    split = stratified_split(data, seed=seed)
    train, test = split.apply(data)
    assert len(train) + len(test) == len(data)
    assert len(train) == n_train_for(len(data), 0.8)
    lc, lt, ltr = label_counts(data), label_counts(test), label_counts(train)
    assert all(lt[e] + ltr[e] == lc[e] for e in EMOTIONS)
