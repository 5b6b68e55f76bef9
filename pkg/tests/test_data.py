import struct

import numpy as np
import pytest

from fcstg.data import (
    HEADER, CsvSchema, DatasetManifest, dataset_from, decode_blob, encode_blob, ingest_csv,
    iterate_batches, load_container, split_indices, standardize, synth_dedt, synth_rul,
    write_container,
)
from fcstg.errors import DataError


def write_sample(path, matrix, names=None):
    names = names or [f"s{k}" for k in range(matrix.shape[0])]
    lines = [",".join(names)] + [",".join(repr(float(v)) for v in col) for col in matrix.T]
    path.write_text("\n".join(lines) + "\n")


def make_csv_dir(root, n=20, N=3, L=30, loc=5.0, scale=2.0, seed=0):
    rng = np.random.default_rng(seed)
    root.mkdir(exist_ok=True)
    labels = ["sample_id,label"]
    for k in range(n):
        write_sample(root / f"s{k:03d}.csv", loc + scale * rng.standard_normal((N, L)))
        labels.append(f"s{k:03d},{k % 2}")
    (root / "labels.csv").write_text("\n".join(labels) + "\n")
    return root


# -- container round trip ------------------------------------------------------

def test_blob_layout_and_size():
    x = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    raw = encode_blob(x, np.array([1, 0]), "classification")
    assert raw[:6] == b"FCSTG1"
    assert len(raw) - HEADER.size == 2 * (12 * 4 + 4)
    assert struct.unpack_from("<2i", raw, HEADER.size + 2 * 12 * 4) == (1, 0)


def test_container_roundtrip(tmp_path, tiny_dedt, tiny_rul):
    for ds, name in ((tiny_dedt, "c"), (tiny_rul, "r")):
        write_container(tmp_path / name, ds.manifest, {s: ds.split(s) for s in ds.splits})
        back = load_container(tmp_path / name)
        assert back.manifest == ds.manifest
        for s in ("train", "val", "test"):
            np.testing.assert_array_equal(back.split(s)[0], ds.split(s)[0])
            np.testing.assert_array_equal(back.split(s)[1], ds.split(s)[1])
            assert back.split(s)[1].dtype == ds.split(s)[1].dtype


def test_manifest_json_roundtrip(tiny_rul):
    assert DatasetManifest.from_json(tiny_rul.manifest.to_json()) == tiny_rul.manifest


def corrupt(tmp_path, ds, mutate):
    d = write_container(tmp_path / "ds", ds.manifest, {s: ds.split(s) for s in ds.splits})
    p = d / "val.bin"
    p.write_bytes(mutate(p.read_bytes()))
    return d


def test_bad_magic_rejected(tmp_path, tiny_dedt):
    d = corrupt(tmp_path, tiny_dedt, lambda b: b"XXXXXX" + b[6:])
    with pytest.raises(DataError, match="val.bin.*magic"):
        load_container(d)


def test_size_mismatch_rejected(tmp_path, tiny_dedt):
    d = corrupt(tmp_path, tiny_dedt, lambda b: b[:-3])
    with pytest.raises(DataError, match="payload"):
        load_container(d)


def test_wrong_sample_width_rejected(tiny_dedt):
    x, y = tiny_dedt.split("val")
    raw = encode_blob(x[:, :, :-1], y, "classification")
    with pytest.raises(DataError, match="N\\*L"):
        decode_blob(raw, tiny_dedt.manifest)


def test_non_finite_rejected(tmp_path, tiny_rul):
    x, y = tiny_rul.split("val")
    with pytest.raises(DataError, match="non-finite"):
        encode_blob(x, y * 1e60, "regression")
    raw = bytearray(encode_blob(x, y, "regression"))
    raw[HEADER.size: HEADER.size + 4] = struct.pack("<f", float("nan"))
    with pytest.raises(DataError, match="non-finite"):
        decode_blob(bytes(raw), tiny_rul.manifest)


def test_missing_container(tmp_path):
    with pytest.raises(DataError, match="manifest.json"):
        load_container(tmp_path / "nowhere")


# -- standardisation -------------------------------------------------------------

def test_standardize_uses_train_only(rng):
    train = (5 + 2 * rng.standard_normal((40, 3, 20)), np.zeros(40))
    val = (100 + rng.standard_normal((10, 3, 20)), np.zeros(10))
    scaled, mu, sd, const = standardize({"train": train, "val": val})
    assert const == []
    np.testing.assert_allclose(scaled["train"][0].mean(axis=(0, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(scaled["train"][0].std(axis=(0, 2)), 1, atol=1e-12)
    # val is not re-centred, so it stays far from zero
    assert scaled["val"][0].mean() > 40


def test_constant_sensor_gets_unit_std(rng):
    x = rng.standard_normal((10, 2, 5))
    x[:, 1] = 3.0
    scaled, _, sd, const = standardize({"train": (x, np.zeros(10))})
    assert const == [1] and sd[1] == 1.0
    assert np.all(scaled["train"][0][:, 1] == 0)


def test_ingest_standardizes_example(tmp_path):
    src = make_csv_dir(tmp_path / "csv", n=40, loc=5.0, scale=2.0)
    manifest, _ = ingest_csv(src, CsvSchema(), out=tmp_path / "ds")
    ds = load_container(tmp_path / "ds")
    xt = ds.split("train")[0]
    np.testing.assert_allclose(xt.mean(axis=(0, 2)), 0, atol=1e-6)
    np.testing.assert_allclose(xt.std(axis=(0, 2)), 1, atol=1e-6)
    np.testing.assert_allclose(manifest.mean, 5, atol=0.3)
    np.testing.assert_allclose(manifest.std, 2, atol=0.3)
    assert sum(manifest.splits.values()) == 40 and manifest.K == 2


# -- CSV errors ----------------------------------------------------------------------

def test_wrong_length_names_the_file(tmp_path, rng):
    src = make_csv_dir(tmp_path / "csv", n=6, L=30)
    write_sample(src / "s004.csv", rng.standard_normal((3, 29)))
    with pytest.raises(DataError, match=r"s004\.csv.*L=29"):
        ingest_csv(src, CsvSchema())


def test_ragged_row_names_file_and_line(tmp_path):
    src = make_csv_dir(tmp_path / "csv", n=4)
    p = src / "s002.csv"
    lines = p.read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 1)[0]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=r"s002\.csv:6: ragged"):
        ingest_csv(src, CsvSchema())


def test_non_numeric_cell_names_line_and_column(tmp_path):
    src = make_csv_dir(tmp_path / "csv", n=4)
    p = src / "s001.csv"
    lines = p.read_text().splitlines()
    cells = lines[3].split(",")
    cells[1] = "n/a"
    lines[3] = ",".join(cells)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=r"s001\.csv:4:s1: non-numeric"):
        ingest_csv(src, CsvSchema())


def test_missing_label_is_named(tmp_path):
    src = make_csv_dir(tmp_path / "csv", n=4)
    lab = src / "labels.csv"
    lab.write_text("\n".join(l for l in lab.read_text().splitlines() if not l.startswith("s003"))
                   + "\n")
    with pytest.raises(DataError, match="s003"):
        ingest_csv(src, CsvSchema())


def test_long_layout_matches_per_file(tmp_path, rng):
    per = make_csv_dir(tmp_path / "per", n=10, N=2, L=8)
    long_dir = tmp_path / "long"
    long_dir.mkdir()
    rows = ["sample_id,s0,s1"]
    for k in range(10):
        body = (per / f"s{k:03d}.csv").read_text().splitlines()[1:]
        rows += [f"s{k:03d},{r}" for r in body]
    (long_dir / "data.csv").write_text("\n".join(rows) + "\n")
    (long_dir / "labels.csv").write_text((per / "labels.csv").read_text())
    a_man, a = ingest_csv(per, CsvSchema())
    b_man, b = ingest_csv(long_dir, CsvSchema(layout="long"))
    assert a_man == b_man
    for s in a:
        np.testing.assert_array_equal(a[s][0], b[s][0])


def test_regression_labels_clipped(tmp_path):
    src = make_csv_dir(tmp_path / "csv", n=10)
    (src / "labels.csv").write_text("sample_id,label\n" +
                                    "".join(f"s{k:03d},{k * 10}\n" for k in range(10)))
    manifest, splits = ingest_csv(src, CsvSchema(task="regression", max_rul=50.0))
    assert max(float(y.max()) for _, y in splits.values()) == 50.0
    assert manifest.max_rul == 50.0


# -- splits and iteration ------------------------------------------------------------

def test_split_indices_partition_and_stratify():
    labels = np.repeat([0, 1], 50)
    parts = split_indices(100, np.random.default_rng(0), labels)
    allidx = np.concatenate(list(parts.values()))
    assert sorted(allidx) == list(range(100))
    assert [len(parts[s]) for s in ("train", "val", "test")] == [60, 20, 20]
    assert np.bincount(labels[parts["val"]]).tolist() == [10, 10]


def test_iterate_batches_cover_everything():
    x, y = np.arange(103)[:, None, None].astype(float), np.arange(103)
    batches = list(iterate_batches(x, y, 10, np.random.default_rng(0)))
    assert len(batches) == 11 and len(batches[-1][0]) == 3
    assert sorted(np.concatenate([b[1] for b in batches])) == list(range(103))
    again = list(iterate_batches(x, y, 10, np.random.default_rng(0)))
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(batches, again))


def test_dataset_iterate_shuffles_train_only(tiny_dedt):
    order = lambda s, seed: np.concatenate([b[0][:, 0, 0] for b in tiny_dedt.iterate(s, 7, seed)])  # noqa: E731
    assert np.array_equal(order("train", 1), order("train", 1))
    assert not np.array_equal(order("train", 1), order("train", 2))
    np.testing.assert_array_equal(order("val", 1), tiny_dedt.split("val")[0][:, 0, 0])


def test_iterate_rejects_bad_batch():
    with pytest.raises(ValueError):
        list(iterate_batches(np.zeros((2, 1, 1)), np.zeros(2), 0))


# -- generators --------------------------------------------------------------------------

def test_synth_is_deterministic(tmp_path):
    for k, (m, s) in enumerate([synth_dedt(5, per_class=20), synth_dedt(5, per_class=20)]):
        write_container(tmp_path / f"d{k}", m, s)
    for name in ("manifest.json", "train.bin", "val.bin", "test.bin"):
        assert (tmp_path / "d0" / name).read_bytes() == (tmp_path / "d1" / name).read_bytes()
    assert synth_dedt(6, per_class=20)[1]["train"][0].tobytes() != \
        synth_dedt(5, per_class=20)[1]["train"][0].tobytes()


def test_dedt_classes_share_marginals():
    manifest, splits = synth_dedt(0, per_class=500)
    x = np.concatenate([splits[s][0] for s in splits])
    y = np.concatenate([splits[s][1] for s in splits])
    a, b = x[y == 0], x[y == 1]
    assert abs(a.mean() - b.mean()) < 0.05 and abs(a.std() - b.std()) < 0.05
    i, j = manifest.generator["pair"]
    # same-timestamp correlation of the coupled pair is near zero for both classes
    for part in (a, b):
        r = np.corrcoef(part[:, i].ravel(), part[:, j].ravel())[0, 1]
        assert abs(r) < 0.05


def test_dedt_class1_echoes_one_patch_later():
    manifest, splits = synth_dedt(1, per_class=50, sigma=0.0)
    i, j = manifest.generator["pair"]
    f = manifest.generator["tau"]
    mu, sd = np.array(manifest.mean), np.array(manifest.std)
    x, y = splits["train"]
    raw = x * sd[None, :, None] + mu[None, :, None]
    for sample, label in zip(raw, y):
        echoed = np.allclose(sample[j], 0.9 * np.roll(sample[i], f))
        assert echoed == (label == 1)


def test_rul_zero_noise_is_clean():
    manifest, splits = synth_rul(0, samples=300, noise=0.0, max_rul=1e9, step=1)
    assert manifest.max_rul == 1e9
    x, y = splits["train"]
    assert np.all(y >= 0) and np.all(np.diff(np.sort(y)) >= 0)
    # labels of one trajectory drop by one per step
    assert set(np.round(np.diff(np.unique(y)), 9)) == {1.0}
    g = manifest.generator
    mu, sd = np.array(manifest.mean), np.array(manifest.std)
    raw = x * sd[None, :, None] + mu[None, :, None]
    h = (raw[:, 0] - g["offset"][0]) / g["gain"][0]
    assert np.all(np.diff(h, axis=1) >= -1e-9)


def test_rul_labels_clipped_and_trajectories_unsplit():
    manifest, splits = synth_rul(2, samples=500, max_rul=40.0)
    assert max(float(splits[s][1].max()) for s in splits) == 40.0
    assert all(manifest.splits[s] > 0 for s in splits)


def test_dataset_from_matches_roundtrip(tmp_path):
    m, s = synth_rul(3, samples=50, L=12, life=(20, 40), step=2)
    a = dataset_from(m, s)
    write_container(tmp_path / "x", m, s)
    b = load_container(tmp_path / "x")
    for name in ("train", "val", "test"):
        assert a.split(name)[0].tobytes() == b.split(name)[0].tobytes()
