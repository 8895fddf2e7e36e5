import numpy as np
import pytest

from adacm import data
from adacm.data import (
    AuditError,
    Dataset,
    FormatError,
    ManifestError,
    SealedLabels,
    SpecError,
    SplitSpec,
    load_dataset,
    split,
    synth_benchmark,
)

TEXT_FIXTURE = """# x1,x2,x3,label
1.0,2.0,3.0,0
4.0,5.0,6.0,1
-1.5,0.25,8.0,2
0.0,0.0,0.0,1
"""


def nearest_centroid_accuracy(train: Dataset, test: Dataset):
    cents = np.stack([train.samples[train.labels == k].mean(axis=0) for k in range(train.n_classes)])
    d = ((test.samples[:, None, :] - cents[None]) ** 2).sum(axis=2)
    pred = d.argmin(axis=1)
    per_class = [float(np.mean(pred[test.labels == k] == k)) for k in range(test.n_classes)]
    return float(np.mean(pred == test.labels)), per_class


def halves(ds: Dataset):
    n = len(ds) // 2
    return ds.subset(np.arange(n), "a"), ds.subset(np.arange(n, len(ds)), "b")


class TestText:
    def test_exact_contents(self, tmp_path):
        p = tmp_path / "tiny.csv"
        p.write_text(TEXT_FIXTURE)
        ds = load_dataset(p, "text", standardize=False)
        np.testing.assert_array_equal(ds.samples, [[1, 2, 3], [4, 5, 6], [-1.5, 0.25, 8], [0, 0, 0]])
        np.testing.assert_array_equal(ds.labels, [0, 1, 2, 1])
        assert ds.n_classes == 3

    def test_standardized_by_default(self, tmp_path):
        p = tmp_path / "tiny.txt"
        p.write_text(TEXT_FIXTURE.replace(",", " "))
        ds = load_dataset(p, "text")
        np.testing.assert_allclose(ds.samples.mean(axis=0), 0.0, atol=1e-15)
        np.testing.assert_allclose(ds.samples.std(axis=0), 1.0, atol=1e-15)

    def test_ragged_row_reports_byte_offset(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2,0\n3,1\n")
        with pytest.raises(FormatError, match="byte 6"):
            load_dataset(p, "text")

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2,0\n3,1,5\n")
        with pytest.raises(ManifestError):
            load_dataset(p, "text", n_classes=3)


class TestRaster:
    def _fixture(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(3, 4, 5)).astype(np.uint8)
        for k, img in enumerate(imgs):
            data.write_pgm(tmp_path / f"im{k}.pgm", img / 255.0)
        return imgs

    def test_manifest_order_and_values(self, tmp_path):
        imgs = self._fixture(tmp_path)
        (tmp_path / "manifest.csv").write_text("im2.pgm,1\nim0.pgm,0\nim1.pgm,1\n")
        ds = load_dataset(tmp_path, "raster")
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])
        np.testing.assert_allclose(ds.samples, imgs[[2, 0, 1]] / 255.0, atol=1e-15)

    def test_missing_file_is_named(self, tmp_path):
        self._fixture(tmp_path)
        (tmp_path / "manifest.csv").write_text("im0.pgm,0\nghost.pgm,1\n")
        with pytest.raises(ManifestError, match="ghost.pgm"):
            load_dataset(tmp_path, "raster")

    def test_bad_label(self, tmp_path):
        self._fixture(tmp_path)
        (tmp_path / "manifest.csv").write_text("im0.pgm,zero\n")
        with pytest.raises(ManifestError, match="label"):
            load_dataset(tmp_path, "raster")

    def test_ascii_ppm(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_text("P3\n# comment\n2 1\n10\n10 0 5  0 10 0\n")
        img = data.read_netpbm(p)
        np.testing.assert_allclose(img[:, 0, :], [[1.0, 0.0], [0.0, 1.0], [0.5, 0.0]])


class TestIdx:
    @pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.int32, np.float32, np.float64])
    def test_round_trip_bitwise(self, tmp_path, dtype):
        arr = (np.random.default_rng(1).random((3, 4, 2)) * 100).astype(dtype)
        data.write_idx(tmp_path / "a.idx", arr)
        back = data.read_idx(tmp_path / "a.idx")
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_dataset_round_trip(self, tmp_path):
        ds = synth_benchmark(3, per_class=10)
        data.write_idx_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d", "idx")
        assert back.samples.tobytes() == ds.samples.tobytes()
        assert back.labels.tobytes() == ds.labels.tobytes()

    def test_truncated_payload(self, tmp_path):
        data.write_idx(tmp_path / "a.idx", np.zeros((4, 4), dtype=np.uint8))
        raw = (tmp_path / "a.idx").read_bytes()
        (tmp_path / "a.idx").write_bytes(raw[:-3])
        with pytest.raises(FormatError, match="byte 12"):
            data.read_idx(tmp_path / "a.idx")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "a.idx").write_bytes(b"\x01\x00\x08\x01\x00\x00\x00\x00")
        with pytest.raises(FormatError, match="magic"):
            data.read_idx(tmp_path / "a.idx")


class TestSplit:
    def setup_method(self):
        self.ds = synth_benchmark(0, per_class=50)

    def test_partition_is_exact(self):
        sp = split(self.ds, SplitSpec(20, seed=3))
        all_idx = np.concatenate([sp.labeled_index, sp.unlabeled_index, sp.test_index])
        assert sorted(all_idx.tolist()) == list(range(len(self.ds)))
        assert len(sp.test) == 20
        np.testing.assert_array_equal(sp.unlabeled.samples, self.ds.samples[sp.unlabeled_index])

    def test_balanced(self):
        sp = split(self.ds, SplitSpec(8, seed=1))
        assert np.bincount(sp.labeled.labels, minlength=4).tolist() == [2, 2, 2, 2]

    def test_all_labeled(self):
        sp = split(self.ds, SplitSpec(len(self.ds), balanced=False, test_fraction=0.0))
        assert len(sp.unlabeled) == 0 and len(sp.test) == 0
        assert len(sp.labeled) == len(self.ds)

    def test_deterministic_across_seeds(self):
        seen = set()
        for seed in range(10):
            a = split(self.ds, SplitSpec(20, seed=seed))
            b = split(self.ds, SplitSpec(20, seed=seed))
            for name in ("labeled_index", "unlabeled_index", "test_index"):
                assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
            seen.add(a.labeled_index.tobytes())
        assert len(seen) == 10

    @pytest.mark.parametrize("spec", [SplitSpec(10), SplitSpec(1000, balanced=False), SplitSpec(8, test_fraction=1.0)])
    def test_invalid(self, spec):
        with pytest.raises(SpecError):
            split(self.ds, spec)

    def test_unlabeled_set_has_no_labels(self):
        sp = split(self.ds, SplitSpec(20))
        assert not hasattr(sp.unlabeled, "labels")
        assert set(vars(sp.unlabeled)) == {"samples", "source_index"}


class TestSealed:
    def test_only_counts(self):
        s = SealedLabels([0, 1, 2, 2])
        assert s.count_correct([0, 2, 3], [0, 2, 1]) == 2
        assert not hasattr(s, "labels") and not hasattr(s, "__dict__")

    def test_missing_index(self):
        with pytest.raises(AuditError, match="index 9"):
            SealedLabels([0, 1]).count_correct([9], [0])

    def test_training_code_cannot_reach_truth(self):
        import ast
        import inspect

        from adacm import augment, margin, nn, trainer

        for mod in (trainer, margin, augment, nn):
            tree = ast.parse(inspect.getsource(mod))
            for node in ast.walk(tree):
                if isinstance(node, ast.Attribute):
                    assert node.attr != "_count", mod.__name__
                    if node.attr == "labels":
                        base = node.value
                        name = base.id if isinstance(base, ast.Name) else getattr(base, "attr", "")
                        assert "unl" not in name, f"{mod.__name__} reads labels off {name}"


class TestSynth:
    def test_shape_and_balance(self):
        ds = synth_benchmark(0)
        assert ds.samples.shape == (2400, 16)
        assert np.bincount(ds.labels).tolist() == [600] * 4

    def test_reproducible(self):
        a, b = synth_benchmark(5), synth_benchmark(5)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
        assert synth_benchmark(6).samples.tobytes() != a.samples.tobytes()

    def test_near_separable_pole(self):
        train, test = halves(synth_benchmark(0, difficulty=0.05))
        acc, _ = nearest_centroid_accuracy(train, test)
        assert acc > 0.99

    def test_class_difficulty_differs(self):
        train, test = halves(synth_benchmark(0))
        _, per_class = nearest_centroid_accuracy(train, test)
        assert max(per_class) - min(per_class) >= 0.05

    def test_invalid_difficulty(self):
        with pytest.raises(ValueError):
            synth_benchmark(0, difficulty=0.0)
