import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from advbiom.datasets import (
    DatasetManifest,
    cache_manifest,
    load_cached_manifest,
    sample_pairs,
    scan_dataset,
    split_manifest,
    synth_identity_faces,
)


def dir_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*.png")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def face_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("faces")
    manifest = synth_identity_faces(root, n_ids=6, per_id=4, seed=9, size=32)
    return root, manifest


class TestSynthFaces:
    def test_arity(self, face_dataset):
        _, manifest = face_dataset
        assert len(manifest.entries) == 24

    def test_byte_identical_per_seed(self, tmp_path):
        synth_identity_faces(tmp_path / "a", n_ids=3, per_id=2, seed=5, size=32)
        synth_identity_faces(tmp_path / "b", n_ids=3, per_id=2, seed=5, size=32)
        assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        synth_identity_faces(tmp_path / "a", n_ids=3, per_id=2, seed=5, size=32)
        synth_identity_faces(tmp_path / "b", n_ids=3, per_id=2, seed=6, size=32)
        assert dir_digest(tmp_path / "a") != dir_digest(tmp_path / "b")

    def test_needs_two_identities(self, tmp_path):
        with pytest.raises(ValueError):
            synth_identity_faces(tmp_path, n_ids=1, per_id=2, seed=5)


class TestScan:
    def test_rescan_identical_hash(self, face_dataset):
        root, manifest = face_dataset
        again = scan_dataset(root)
        assert again.entries == manifest.entries
        assert again.content_hash() == manifest.content_hash()

    def test_empty_root_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            scan_dataset(tmp_path)

    def test_single_image_identity_flagged(self, tmp_path):
        manifest = synth_identity_faces(tmp_path, n_ids=3, per_id=2, seed=5, size=32)
        lone = Path(tmp_path) / "id_0000" / "img_0001.png"
        lone.unlink()
        manifest = scan_dataset(tmp_path)
        assert "id_0000" in manifest.single_image_identities()
        assert "id_0000" not in manifest.eval_identities()
        assert any(i == "id_0000" for i, _ in manifest.entries)  # kept for training

    def test_cache_round_trip_and_invalidation(self, tmp_path):
        manifest = synth_identity_faces(tmp_path / "d", n_ids=2, per_id=2, seed=5, size=32)
        cache = cache_manifest(manifest, tmp_path / "manifest.json")
        loaded = load_cached_manifest(cache)
        assert loaded.entries == manifest.entries
        # stale cache: mutate one file, loader must rescan and still be valid
        target = Path(manifest.root) / manifest.entries[0][1]
        data = bytearray(target.read_bytes())
        data[-1] ^= 0xFF
        target.write_bytes(bytes(data))
        reloaded = load_cached_manifest(cache)
        assert reloaded.entries == manifest.entries


class TestSplit:
    def test_identity_disjoint(self, face_dataset):
        _, manifest = face_dataset
        train, test = split_manifest(manifest, test_fraction=0.3, seed=1)
        assert set(train.identities()).isdisjoint(test.identities())
        assert len(train.entries) + len(test.entries) == len(manifest.entries)

    def test_deterministic(self, face_dataset):
        _, manifest = face_dataset
        a = split_manifest(manifest, test_fraction=0.3, seed=1)
        b = split_manifest(manifest, test_fraction=0.3, seed=1)
        assert a[0].entries == b[0].entries and a[1].entries == b[1].entries


class TestSamplePairs:
    def test_labels_match_identity_oracle(self, face_dataset):
        _, manifest = face_dataset
        pairs = sample_pairs(manifest, n_genuine=30, n_imposter=60, seed=3)
        ident_of = {rel: ident for ident, rel in manifest.entries}
        for p in pairs:
            same = ident_of[p.image_a] == ident_of[p.image_b]
            assert (p.label == "genuine") == same
            assert p.image_a != p.image_b

    def test_large_label_audit(self, tmp_path):
        manifest = synth_identity_faces(tmp_path, n_ids=8, per_id=6, seed=2, size=32)
        pairs = sample_pairs(manifest, n_genuine=100, n_imposter=500, seed=4)
        ident_of = {rel: ident for ident, rel in manifest.entries}
        mislabeled = sum(
            (ident_of[p.image_a] == ident_of[p.image_b]) != (p.label == "genuine") for p in pairs
        )
        assert mislabeled == 0

    def test_no_duplicate_unordered_pairs(self, face_dataset):
        _, manifest = face_dataset
        pairs = sample_pairs(manifest, n_genuine=20, n_imposter=50, seed=5)
        keys = {tuple(sorted((p.image_a, p.image_b))) + (p.label,) for p in pairs}
        assert len(keys) == len(pairs)

    def test_deterministic(self, face_dataset):
        _, manifest = face_dataset
        a = sample_pairs(manifest, 10, 10, seed=6)
        b = sample_pairs(manifest, 10, 10, seed=6)
        assert a == b

    def test_zero_imposters(self, face_dataset):
        _, manifest = face_dataset
        pairs = sample_pairs(manifest, n_genuine=5, n_imposter=0, seed=7)
        assert all(p.label == "genuine" for p in pairs)

    def test_infeasible_counts_rejected(self, face_dataset):
        _, manifest = face_dataset
        with pytest.raises(ValueError):
            sample_pairs(manifest, n_genuine=10_000, n_imposter=0, seed=8)
        with pytest.raises(ValueError):
            sample_pairs(manifest, n_genuine=0, n_imposter=10_000_000, seed=8)
