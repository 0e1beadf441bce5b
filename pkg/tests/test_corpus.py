import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alqa.corpus import (
    ArtifactSpec,
    BodySpec,
    CorpusConfig,
    PhantomSpec,
    TestCaseDatabase,
    generate_corpus,
    generate_phantom,
    inject_artifact,
    inject_artifact_slice,
    load_database,
    oracle_label,
    save_database,
    severity_score,
    simulate_raters,
    split_database,
)
from alqa.errors import DatabaseError, DatabaseNotFoundError, ParameterError


def ellipse_spec(**kw):
    defaults = dict(shape=(1, 64, 64), body=BodySpec(kind="ellipse"), seed=7)
    defaults.update(kw)
    return PhantomSpec(**defaults)


class TestPhantom:
    def test_center_foreground_corner_background(self):
        vol = generate_phantom(ellipse_spec())
        assert vol.voxels[0, 32, 32] == pytest.approx(1.0)
        assert vol.voxels[0, 0, 0] == pytest.approx(0.0)

    def test_bit_identical_for_same_spec(self):
        spec = ellipse_spec(noise_sigma=0.12, artifact=ArtifactSpec("motion_ghost", 0.6))
        a = generate_phantom(spec)
        b = generate_phantom(spec)
        assert a.voxels.tobytes() == b.voxels.tobytes()

    def test_noise_sigma_matches_background_std(self):
        vol = generate_phantom(ellipse_spec(noise_sigma=0.1, seed=123))
        img = vol.voxels[0]
        corners = np.concatenate([
            img[:8, :8].ravel(), img[:8, -8:].ravel(),
            img[-8:, :8].ravel(), img[-8:, -8:].ravel(),
        ])
        assert 0.08 <= corners.std(ddof=1) <= 0.12

    def test_rejects_bad_shapes(self):
        with pytest.raises(Exception):
            PhantomSpec(shape=(0, 64, 64))
        with pytest.raises(Exception):
            PhantomSpec(shape=(1, 4, 64))


class TestArtifacts:
    def test_severity_zero_is_identity(self):
        img = np.random.default_rng(0).normal(size=(32, 32))
        for kind in ("none", "motion_ghost", "alias_subsample", "blur"):
            sev = 0.0
            out = inject_artifact_slice(img, ArtifactSpec(kind, sev))
            np.testing.assert_array_equal(out, img)

    def test_none_kind_requires_zero_severity(self):
        with pytest.raises(ParameterError):
            ArtifactSpec("none", 0.3)

    def test_severity_out_of_range(self):
        with pytest.raises(ParameterError):
            ArtifactSpec("blur", 1.2)

    def test_alias_delta_image_replicates(self):
        # decimating k-space rows by 2 (scaled x2) folds a delta into two
        # impulses: the original plus a ghost shifted by half the height
        img = np.zeros((64, 64))
        img[10, 7] = 1.0
        out = inject_artifact_slice(img, ArtifactSpec("alias_subsample", 1.0,
                                                      subsample_factor=2))
        assert out[10, 7] == pytest.approx(1.0, abs=1e-9)
        assert out[(10 + 32) % 64, 7] == pytest.approx(1.0, abs=1e-9)
        rest = out.copy()
        rest[10, 7] = 0.0
        rest[42, 7] = 0.0
        assert np.abs(rest).max() < 1e-9

    def test_alias_factor_one_is_identity(self):
        img = np.random.default_rng(1).normal(size=(16, 16))
        out = inject_artifact_slice(img, ArtifactSpec("alias_subsample", 1.0,
                                                      subsample_factor=1))
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_blur_preserves_constant(self):
        img = np.full((32, 32), 3.25)
        out = inject_artifact_slice(img, ArtifactSpec("blur", 0.8))
        np.testing.assert_allclose(out, img, atol=1e-12)

    @pytest.mark.parametrize("kind", ["motion_ghost", "alias_subsample", "blur"])
    def test_l2_distortion_monotone_in_severity(self, kind):
        clean = generate_phantom(ellipse_spec()).voxels[0].astype(float)
        dists = []
        for s in (0.0, 0.25, 0.5, 0.75, 1.0):
            out = inject_artifact_slice(clean, ArtifactSpec(kind, s))
            dists.append(float(np.linalg.norm(out - clean)))
        assert dists[0] == 0.0
        for a, b in zip(dists, dists[1:]):
            assert b >= a - 1e-9

    def test_inject_artifact_volume_updates_provenance(self):
        vol = generate_phantom(ellipse_spec())
        art = ArtifactSpec("blur", 0.5)
        out = inject_artifact(vol, art)
        assert out.provenance.artifact == art
        assert out.voxels.shape == vol.voxels.shape


class TestOracle:
    def test_threshold_mapping(self):
        assert oracle_label(ArtifactSpec(), 0.0) == 1
        assert oracle_label(ArtifactSpec("blur", 0.5), 0.0) == 3
        assert oracle_label(ArtifactSpec("blur", 1.0), 0.0) == 5
        assert oracle_label(ArtifactSpec("blur", 0.21), 0.0) == 2

    def test_noise_alone_drives_class(self):
        # noise_ref 0.5 normalizes: sigma 0.25 -> severity 0.5 -> class 3
        assert oracle_label(ArtifactSpec(), 0.25) == 3

    def test_weighted_max_combination(self):
        s = severity_score(ArtifactSpec("blur", 0.3), 0.25)
        assert s == pytest.approx(0.5)

    def test_rejects_bad_thresholds(self):
        with pytest.raises(ParameterError):
            oracle_label(ArtifactSpec(), 0.0, thresholds=(0.4, 0.2, 0.6, 0.8))
        with pytest.raises(ParameterError):
            oracle_label(ArtifactSpec(), 0.0, thresholds=(0.2, 0.4, 0.6))

    @given(st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_label_monotone_in_severity(self, s1, s2):
        lo, hi = sorted((s1, s2))
        a = oracle_label(ArtifactSpec("blur", lo) if lo else ArtifactSpec(), 0.0)
        b = oracle_label(ArtifactSpec("blur", hi) if hi else ArtifactSpec(), 0.0)
        assert a <= b


class TestRaters:
    def test_flip_fraction_matches_probability(self):
        rng_labels = []
        for i in range(2000):
            rng_labels.extend(simulate_raters(3, n_raters=50, flip_prob=0.2, seed=i))
        off = np.mean(np.asarray(rng_labels) != 3)
        assert 0.19 <= off <= 0.21
        # flips move exactly one class
        assert set(rng_labels) <= {2, 3, 4}

    def test_clamping_at_scale_ends(self):
        labels = simulate_raters(1, n_raters=500, flip_prob=0.5, seed=0)
        assert min(labels) == 1 and max(labels) <= 2

    def test_zero_flip_prob_is_faithful(self):
        assert simulate_raters(4, n_raters=20, flip_prob=0.0, seed=1) == [4] * 20

    def test_rejects_bad_flip_prob(self):
        with pytest.raises(ParameterError):
            simulate_raters(3, flip_prob=0.6)


def tiny_db(n_patients=10, vols_per_patient=1):
    db = TestCaseDatabase()
    i = 0
    for p in range(n_patients):
        for _ in range(vols_per_patient):
            spec = ellipse_spec(seed=100 + i, shape=(2, 16, 16))
            vol = generate_phantom(spec)
            vol.volume_id = f"vol{i:05d}"
            vol.patient_id = f"pat{p:04d}"
            db.volumes[vol.volume_id] = vol
            db.reference_labels[vol.volume_id] = 1 + i % 5
            i += 1
    db.unlabeled = set(db.volumes)
    return db


class TestSplits:
    def test_ten_patients_split_7_1_2(self):
        db = tiny_db(10)
        splits = split_database(db, seed=3)
        patients = lambda ids: {db.volumes[v].patient_id for v in ids}
        assert len(patients(splits.train)) == 7
        assert len(patients(splits.validation)) == 1
        assert len(patients(splits.test)) == 2

    def test_patient_disjoint(self):
        db = tiny_db(20, vols_per_patient=3)
        splits = split_database(db, seed=9)
        pt = lambda ids: {db.volumes[v].patient_id for v in ids}
        assert not (pt(splits.train) & pt(splits.validation))
        assert not (pt(splits.train) & pt(splits.test))
        assert not (pt(splits.validation) & pt(splits.test))
        total = len(splits.train) + len(splits.validation) + len(splits.test)
        assert total == len(db.volumes)

    def test_pools_reset_to_train(self):
        db = tiny_db(10)
        splits = split_database(db, seed=0)
        assert db.unlabeled == set(splits.train)
        assert db.labeled == {}
        db.check_pools()

    def test_too_few_patients_rejected(self):
        with pytest.raises(ParameterError):
            split_database(tiny_db(2), seed=0)

    def test_three_patients_one_each(self):
        db = tiny_db(3)
        splits = split_database(db, seed=0)
        assert min(len(splits.train), len(splits.validation), len(splits.test)) == 1

    def test_deterministic_for_seed(self):
        a = split_database(tiny_db(12), seed=5)
        b = split_database(tiny_db(12), seed=5)
        assert a == b


class TestPools:
    def test_mark_labeled_moves(self):
        db = tiny_db(4)
        vid = sorted(db.unlabeled)[0]
        db.mark_labeled(vid, 3)
        assert vid not in db.unlabeled and db.labeled[vid] == 3

    def test_double_label_rejected(self):
        db = tiny_db(4)
        vid = sorted(db.unlabeled)[0]
        db.mark_labeled(vid, 3)
        with pytest.raises(ParameterError):
            db.mark_labeled(vid, 4)

    def test_class_range_validated(self):
        db = tiny_db(4)
        vid = sorted(db.unlabeled)[0]
        with pytest.raises(ParameterError):
            db.mark_labeled(vid, 6)

    def test_check_pools_catches_overlap(self):
        db = tiny_db(4)
        vid = sorted(db.unlabeled)[0]
        db.labeled[vid] = 2  # bypass mark_labeled
        with pytest.raises(DatabaseError):
            db.check_pools()


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        db = tiny_db(6, vols_per_patient=2)
        split_database(db, seed=1)
        vid = sorted(db.unlabeled)[0]
        db.mark_labeled(vid, 4)
        save_database(db, tmp_path / "db")
        loaded = load_database(tmp_path / "db")
        assert set(loaded.volumes) == set(db.volumes)
        for k in db.volumes:
            assert loaded.volumes[k].voxels.tobytes() == db.volumes[k].voxels.tobytes()
            assert loaded.volumes[k].patient_id == db.volumes[k].patient_id
            assert loaded.volumes[k].provenance == db.volumes[k].provenance
        assert loaded.labeled == db.labeled
        assert loaded.unlabeled == db.unlabeled
        assert loaded.reference_labels == db.reference_labels
        assert loaded.splits == db.splits

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DatabaseNotFoundError):
            load_database(tmp_path / "nope")

    def test_truncated_volume_rejected(self, tmp_path):
        db = tiny_db(3)
        save_database(db, tmp_path / "db")
        target = sorted((tmp_path / "db" / "volumes").glob("*.f32"))[0]
        target.write_bytes(target.read_bytes()[:-8])
        with pytest.raises(DatabaseError, match="bytes"):
            load_database(tmp_path / "db")

    def test_bad_version_rejected(self, tmp_path):
        db = tiny_db(3)
        save_database(db, tmp_path / "db")
        index = (tmp_path / "db" / "db.json")
        index.write_text(index.read_text().replace('"version": 1', '"version": 99'))
        with pytest.raises(DatabaseError, match="version"):
            load_database(tmp_path / "db")

    def test_corrupt_index_rejected(self, tmp_path):
        (tmp_path / "db").mkdir()
        (tmp_path / "db" / "db.json").write_text("{not json")
        with pytest.raises(DatabaseError):
            load_database(tmp_path / "db")

    def test_missing_volume_file(self, tmp_path):
        db = tiny_db(3)
        save_database(db, tmp_path / "db")
        sorted((tmp_path / "db" / "volumes").glob("*.f32"))[0].unlink()
        with pytest.raises(DatabaseNotFoundError):
            load_database(tmp_path / "db")


class TestGenerateCorpus:
    def test_balanced_classes_and_patients(self):
        cfg = CorpusConfig(count=50, seed=11, shape=(1, 32, 32))
        db = generate_corpus(cfg)
        assert len(db.volumes) == 50
        labels = list(db.reference_labels.values())
        assert set(labels) <= {1, 2, 3, 4, 5}
        # cyclic class targets plus mild rater noise keep rough balance
        counts = np.bincount(labels, minlength=6)[1:]
        assert counts.min() >= 5
        sizes = {}
        for vol in db.volumes.values():
            sizes[vol.patient_id] = sizes.get(vol.patient_id, 0) + 1
        assert set(sizes.values()) <= {1, 2, 3}

    def test_deterministic(self):
        cfg = CorpusConfig(count=8, seed=4, shape=(1, 32, 32))
        a, b = generate_corpus(cfg), generate_corpus(cfg)
        assert a.reference_labels == b.reference_labels
        vid = sorted(a.volumes)[0]
        assert a.volumes[vid].voxels.tobytes() == b.volumes[vid].voxels.tobytes()

    def test_provenance_recorded(self):
        db = generate_corpus(CorpusConfig(count=5, seed=2, shape=(1, 32, 32)))
        for vol in db.volumes.values():
            assert vol.provenance is not None
            assert vol.provenance.artifact.kind in (
                "none", "motion_ghost", "alias_subsample", "blur")
