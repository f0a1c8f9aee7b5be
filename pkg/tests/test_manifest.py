"""Manifest round-trips, validation, and relocatability."""

import shutil

import pytest

from forgeseg import (
    DatasetManifest,
    ManifestRecord,
    ValidationError,
    read_manifest,
    write_manifest,
)


def _records(n: int) -> list[ManifestRecord]:
    return [
        ManifestRecord(
            image_path=f"images/{i}.png",
            mask_path=f"masks/{i}.png",
            label=i % 2,
            source_tag="spliced-partial" if i % 2 else "real-a",
            group_id=f"g{i % 3}",
            split="train",
        )
        for i in range(n)
    ]


def test_manifest_round_trip(tmp_path):
    manifest = DatasetManifest(_records(5), seed=42, config_hash="abc")
    path = tmp_path / "manifest.jsonl"
    write_manifest(manifest, path)
    back = read_manifest(path)
    assert back.records == manifest.records
    assert back.seed == 42
    assert back.config_hash == "abc"
    assert back.root == tmp_path


def test_manifest_duplicate_paths_rejected():
    records = _records(2)
    records[1].image_path = records[0].image_path
    with pytest.raises(ValidationError):
        DatasetManifest(records, seed=0).validate()


def test_manifest_bad_label_and_split():
    rec = _records(1)[0]
    rec.label = 2
    with pytest.raises(ValidationError):
        rec.validate()
    rec.label = 1
    rec.split = "holdout"
    with pytest.raises(ValidationError):
        rec.validate()


def test_split_records_and_unknown_split():
    manifest = DatasetManifest(_records(4), seed=0)
    assert len(manifest.split_records("train")) == 4
    assert manifest.split_records("test") == []
    with pytest.raises(ValidationError):
        manifest.split_records("everything")


def test_with_splits_replaces_assignment():
    manifest = DatasetManifest(_records(3), seed=0)
    updated = manifest.with_splits(["train", "val", "test"])
    assert [r.split for r in updated.records] == ["train", "val", "test"]
    assert [r.split for r in manifest.records] == ["train"] * 3
    with pytest.raises(ValidationError):
        manifest.with_splits(["train"])


def test_manifest_relocatable(tiny_corpus, tmp_path):
    moved = tmp_path / "moved"
    shutil.copytree(tiny_corpus.root, moved)
    back = read_manifest(moved / "manifest.jsonl")
    rec = back.records[0]
    assert back.resolve(rec.image_path).exists()
    assert str(moved) in str(back.resolve(rec.image_path))


def test_read_manifest_rejects_non_manifest(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text('{"foo": 1}\n')
    with pytest.raises(ValidationError):
        read_manifest(path)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ValidationError):
        read_manifest(empty)
