"""Dataset containers, CSV ingestion, synthetic generators and batch iteration.

A container is a directory holding ``manifest.json`` plus one blob per split
(``train.bin``, ``val.bin``, ``test.bin``).  Each blob is::

    header   16 bytes   b"FCSTG1", uint16 version, uint32 count, uint32 N*L
    values   count*N*L  float32, sample-major, each sample row-major by sensor
    labels   count      float32 (regression) or int32 (classification)

All integers and floats are little-endian.  The payload after the header is
exactly ``count * (N*L*4 + 4)`` bytes.  Values are stored already
standardised with the train-split moments recorded in the manifest.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError
from .seeding import rng_for

MAGIC = b"FCSTG1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<6sHII")
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass
class DatasetManifest:
    name: str
    task: str
    N: int
    L: int
    splits: dict[str, int]
    mean: list[float]
    std: list[float]
    K: int | None = None
    max_rul: float | None = None
    constant_sensors: list[int] = field(default_factory=list)
    generator: dict | None = None
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if v is not None}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            raw = json.loads(text)
            m = cls(**raw)
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from None
        if m.task not in ("regression", "classification"):
            raise DataError(f"manifest task must be regression or classification, got {m.task!r}")
        if m.task == "classification" and not m.K:
            raise DataError("classification manifest lacks K")
        if len(m.mean) != m.N or len(m.std) != m.N:
            raise DataError(f"manifest standardization has {len(m.mean)}/{len(m.std)} "
                            f"entries for N={m.N}")
        return m


@dataclass
class Dataset:
    manifest: DatasetManifest
    splits: dict[str, tuple[np.ndarray, np.ndarray]]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.splits:
            raise DataError(f"no split named {name!r}")
        return self.splits[name]

    def iterate(self, split: str, batch_size: int, seed: int | None = None):
        """Batches of ``split``; train is shuffled from ``seed``, others keep storage order."""
        x, y = self.split(split)
        rng = rng_for(seed or 0, "shuffle") if split == "train" else None
        return iterate_batches(x, y, batch_size, rng)


def iterate_batches(x, y, batch_size: int, rng: np.random.Generator | None = None
                    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(x, y)`` mini-batches; the last one may be partial."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(x)) if rng is None else rng.permutation(len(x))
    for lo in range(0, len(x), batch_size):
        idx = order[lo: lo + batch_size]
        yield x[idx], y[idx]


# ---------------------------------------------------------------------------
# binary blobs


def _label_dtype(task: str):
    return np.dtype("<i4") if task == "classification" else np.dtype("<f4")


def encode_blob(x: np.ndarray, y: np.ndarray, task: str) -> bytes:
    count, n, L = x.shape
    head = HEADER.pack(MAGIC, FORMAT_VERSION, count, n * L)
    with np.errstate(over="ignore", invalid="ignore"):
        xs = np.ascontiguousarray(x, dtype="<f4")
        ys = np.ascontiguousarray(y, dtype=_label_dtype(task))
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise DataError("values or labels are non-finite in float32")
    return head + xs.tobytes() + ys.tobytes()


def decode_blob(raw: bytes, manifest: DatasetManifest, where: str = "blob"):
    if len(raw) < HEADER.size:
        raise DataError(f"{where}: truncated header ({len(raw)} bytes)")
    magic, version, count, per = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{where}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{where}: unsupported format version {version}")
    nl = manifest.N * manifest.L
    if per != nl:
        raise DataError(f"{where}: header says {per} values per sample, manifest N*L = {nl}")
    payload = len(raw) - HEADER.size
    if payload != count * (nl * 4 + 4):
        raise DataError(f"{where}: payload is {payload} bytes, expected "
                        f"{count} * ({nl} * 4 + 4) = {count * (nl * 4 + 4)}")
    off = HEADER.size
    x = np.frombuffer(raw, "<f4", count * nl, off).reshape(count, manifest.N, manifest.L)
    y = np.frombuffer(raw, _label_dtype(manifest.task), count, off + count * nl * 4)
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError(f"{where}: non-finite value or label")
    return x.astype(np.float64), (y.astype(np.int64) if manifest.task == "classification"
                                  else y.astype(np.float64))


def write_container(path, manifest: DatasetManifest, splits: dict) -> Path:
    """Write ``manifest`` and the already-standardised ``splits`` to directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest.splits = {s: int(len(splits[s][0])) for s in SPLITS}
    (path / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    for s in SPLITS:
        x, y = splits[s]
        (path / f"{s}.bin").write_bytes(encode_blob(np.asarray(x), np.asarray(y), manifest.task))
    return path


def load_container(path) -> Dataset:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no dataset at {path} (missing manifest.json)")
    manifest = DatasetManifest.from_json(mpath.read_text(encoding="utf-8"))
    splits = {}
    for s in SPLITS:
        bpath = path / f"{s}.bin"
        if not bpath.is_file():
            raise DataError(f"{bpath}: missing split blob")
        x, y = decode_blob(bpath.read_bytes(), manifest, str(bpath))
        if len(x) != manifest.splits.get(s, len(x)):
            raise DataError(f"{bpath}: {len(x)} samples, manifest says {manifest.splits[s]}")
        if manifest.task == "classification" and len(y) and (y.min() < 0 or y.max() >= manifest.K):
            raise DataError(f"{bpath}: class label outside [0, {manifest.K})")
        splits[s] = (x, y)
    return Dataset(manifest, splits)


# ---------------------------------------------------------------------------
# standardisation and splitting


def standardize(splits: dict, train_key: str = "train"):
    """Scale every split with per-sensor moments of the train split.

    Returns ``(scaled_splits, mean, std, constant_sensors)``; constant sensors
    get std 1.
    """
    xt = splits[train_key][0]
    if len(xt) == 0:
        raise DataError("train split is empty; cannot compute standardization")
    mu = xt.mean(axis=(0, 2))
    sd = xt.std(axis=(0, 2))
    const = [int(i) for i in np.flatnonzero(sd == 0)]
    sd = np.where(sd == 0, 1.0, sd)
    scaled = {k: ((x - mu[:, None]) / sd[:, None], y) for k, (x, y) in splits.items()}
    return scaled, mu, sd, const


def split_indices(n: int, rng: np.random.Generator, labels=None) -> dict[str, np.ndarray]:
    """60/20/20 partition; stratified by class when ``labels`` is given."""
    groups = [np.arange(n)] if labels is None else [np.flatnonzero(labels == c)
                                                    for c in np.unique(labels)]
    parts = {s: [] for s in SPLITS}
    for g in groups:
        g = rng.permutation(g)
        a = int(round(SPLIT_FRACTIONS[0] * len(g)))
        b = a + int(round(SPLIT_FRACTIONS[1] * len(g)))
        for s, chunk in zip(SPLITS, (g[:a], g[a:b], g[b:])):
            parts[s].append(chunk)
    return {s: rng.permutation(np.concatenate(parts[s])) for s in SPLITS}


def _package(name, task, x, y, parts, K=None, max_rul=None, generator=None):
    raw = {s: (x[idx], y[idx]) for s, idx in parts.items()}
    scaled, mu, sd, const = standardize(raw)
    manifest = DatasetManifest(name=name, task=task, N=int(x.shape[1]), L=int(x.shape[2]),
                               splits={s: len(parts[s]) for s in SPLITS},
                               mean=[float(v) for v in mu], std=[float(v) for v in sd],
                               K=K, max_rul=max_rul, constant_sensors=const,
                               generator=generator)
    return manifest, scaled


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass
class CsvSchema:
    """How to read a directory of CSV files.

    ``layout="per_file"``: every ``*.csv`` except the labels file is one sample;
    its stem is the sample id, its header names the sensors, and each row is
    one timestamp.  ``layout="long"``: one file ``data_file`` whose
    ``id_column`` groups rows into samples, rows in time order.

    The labels file has a header ``sample_id,label``.
    """

    task: str = "classification"
    layout: str = "per_file"
    labels_file: str = "labels.csv"
    data_file: str = "data.csv"
    id_column: str = "sample_id"
    n_classes: int | None = None
    max_rul: float | None = None
    seed: int = 0
    name: str = "ingested"


def _float_cell(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{where}: non-numeric cell {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite cell {text!r}")
    return v


def _read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows[0], rows[1:]


def _matrix(header, rows, path, first_line=2, skip_col=None) -> np.ndarray:
    cols = [c for c in range(len(header)) if c != skip_col]
    out = np.empty((len(cols), len(rows)))
    for r, row in enumerate(rows):
        line = first_line + r
        if len(row) != len(header):
            raise DataError(f"{path}:{line}: ragged row with {len(row)} cells, "
                            f"header has {len(header)}")
        for k, c in enumerate(cols):
            out[k, r] = _float_cell(row[c], f"{path}:{line}:{header[c]}")
    return out


def _read_labels(path: Path, task: str) -> dict[str, float]:
    if not path.is_file():
        raise DataError(f"labels file {path} not found")
    header, rows = _read_rows(path)
    if len(header) < 2:
        raise DataError(f"{path}:1: labels header needs sample_id,label")
    labels = {}
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}:{r + 2}: ragged row with {len(row)} cells")
        v = _float_cell(row[1], f"{path}:{r + 2}:label")
        if task == "classification" and (v != int(v) or v < 0):
            raise DataError(f"{path}:{r + 2}: class label must be a non-negative integer, got {row[1]}")
        labels[row[0].strip()] = v
    return labels


def _check_dims(samples: dict[str, tuple[np.ndarray, str]]):
    ids = sorted(samples)
    ref_id = ids[0]
    n, L = samples[ref_id][0].shape
    for sid in ids[1:]:
        m, src = samples[sid]
        if m.shape != (n, L):
            raise DataError(f"{src}: sample {sid!r} has N={m.shape[0]}, L={m.shape[1]}; "
                            f"dataset has N={n}, L={L} (from sample {ref_id!r})")
    return ids


def read_csv_samples(directory, schema: CsvSchema) -> dict[str, tuple[np.ndarray, str]]:
    """Map sample id to ``(N x L matrix, source description)``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    samples: dict[str, tuple[np.ndarray, str]] = {}
    if schema.layout == "per_file":
        files = sorted(p for p in directory.glob("*.csv") if p.name != schema.labels_file)
        if not files:
            raise DataError(f"{directory}: no sample CSV files")
        for p in files:
            header, rows = _read_rows(p)
            if not rows:
                raise DataError(f"{p}: no data rows")
            samples[p.stem] = (_matrix(header, rows, p), str(p))
    elif schema.layout == "long":
        p = directory / schema.data_file
        if not p.is_file():
            raise DataError(f"{p}: long-format data file not found")
        header, rows = _read_rows(p)
        if schema.id_column not in header:
            raise DataError(f"{p}:1: no {schema.id_column!r} column")
        ic = header.index(schema.id_column)
        groups: dict[str, list[int]] = {}
        for r, row in enumerate(rows):
            if len(row) != len(header):
                raise DataError(f"{p}:{r + 2}: ragged row with {len(row)} cells, "
                                f"header has {len(header)}")
            groups.setdefault(row[ic].strip(), []).append(r)
        for sid, idx in groups.items():
            sub = [rows[r] for r in idx]
            m = np.empty((len(header) - 1, len(sub)))
            cols = [c for c in range(len(header)) if c != ic]
            for k, r in enumerate(idx):
                for j, c in enumerate(cols):
                    m[j, k] = _float_cell(rows[r][c], f"{p}:{r + 2}:{header[c]}")
            samples[sid] = (m, f"{p} (sample {sid})")
    else:
        raise DataError(f"unknown CSV layout {schema.layout!r}; use per_file or long")
    return samples


def ingest_csv(directory, schema: CsvSchema, out=None):
    """Read CSVs, split 60/20/20, standardise on train, and optionally write ``out``.

    Returns ``(manifest, splits)``.
    """
    if schema.task not in ("regression", "classification"):
        raise DataError(f"schema task must be regression or classification, got {schema.task!r}")
    samples = read_csv_samples(directory, schema)
    ids = _check_dims(samples)
    labels = _read_labels(Path(directory) / schema.labels_file, schema.task)
    missing = [sid for sid in ids if sid not in labels]
    if missing:
        raise DataError(f"missing labels for sample(s) {', '.join(missing[:5])}"
                        + (" ..." if len(missing) > 5 else ""))
    x = np.stack([samples[s][0] for s in ids])
    y = np.array([labels[s] for s in ids])
    rng = np.random.default_rng(schema.seed)
    K = max_rul = None
    if schema.task == "classification":
        y = y.astype(np.int64)
        K = schema.n_classes or int(y.max()) + 1
        if y.max() >= K:
            raise DataError(f"label {int(y.max())} outside [0, {K})")
        parts = split_indices(len(x), rng, y)
    else:
        max_rul = schema.max_rul
        if max_rul is not None:
            y = np.minimum(y, max_rul)
        parts = split_indices(len(x), rng)
    manifest, splits = _package(schema.name, schema.task, x, y, parts, K=K, max_rul=max_rul)
    if out is not None:
        write_container(out, manifest, splits)
    return manifest, splits


# ---------------------------------------------------------------------------
# synthetic generators


def synth_dedt(seed: int, N: int = 4, L: int = 48, per_class: int = 500, f: int = 6,
               alpha: float = 0.9, sigma: float = 0.3, source: str = "levels",
               jitter: float = 0.5):
    """Two classes separable only through a lagged cross-sensor coupling.

    Each sensor is a source process: with ``source="levels"`` every
    length-``f`` patch holds an independent N(0, 1) level plus
    ``jitter`` white noise; with ``source="white"`` every step is N(0, 1).
    For a hidden pair ``(i, j)`` drawn from ``seed``, sensor ``j`` is
    replaced by ``alpha * roll(i, lag) + sigma * noise``.  Class 1 uses
    ``lag = f``, so patch ``t+1`` of ``j`` echoes patch ``t`` of ``i``.
    Class 0 draws the lag per sample from ``2f .. (L_hat - 2) f``, so the echo
    lands outside any two-patch window.  Rolls are circular and lags are
    whole patches, so both classes share the same marginals, the same patch
    multiset and zero same-timestamp correlation between sensors.

    Returns ``(manifest, splits)``.
    """
    if N < 2:
        raise ValueError(f"synth_dedt needs N >= 2, got {N}")
    if f < 1 or L < 2 * f:
        raise ValueError(f"synth_dedt needs L >= 2f, got L={L}, f={f}")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if source not in ("levels", "white"):
        raise ValueError(f"source must be levels or white, got {source!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDED7]))
    i, j = (int(v) for v in rng.choice(N, 2, replace=False))
    n_patches = L // f
    lags = [k * f for k in range(2, n_patches - 1)]
    if not lags:
        lags = [t for t in range(1, L) if t not in (f, L - f)] or [0]
    n = 2 * per_class
    if source == "levels":
        x = rng.standard_normal((n, N, L)) * jitter
        x[:, :, : n_patches * f] += np.repeat(rng.standard_normal((n, N, n_patches)), f, axis=2)
    else:
        x = rng.standard_normal((n, N, L))
    y = np.repeat(np.array([0, 1]), per_class)
    lag = np.where(y == 1, f, rng.choice(lags, size=n))
    noise = rng.standard_normal((n, L))
    for k in range(n):
        x[k, j] = alpha * np.roll(x[k, i], lag[k]) + sigma * noise[k]
    parts = split_indices(n, rng, y)
    gen = {"kind": "dedt", "seed": seed, "pair": [i, j], "alpha": alpha, "tau": f,
           "sigma": sigma, "source": source, "jitter": jitter, "patch_size": f,
           "per_class": per_class, "class0_lags": [int(v) for v in lags]}
    return _package("synth_dedt", "classification", x, y, parts, K=2, generator=gen)


def synth_rul(seed: int, N: int = 4, L: int = 30, samples: int = 1000, max_rul: float = 60.0,
              noise: float = 0.05, life=(60, 160), step: int = 5):
    """Run-to-failure trajectories of a latent degradation ``h(t) = (t/T)^2``.

    Each trajectory has lifetime ``T`` drawn uniformly from ``life``; sensor
    ``k`` reads ``a_k h(t) + b_k + noise``.  Windows of ``L`` consecutive
    steps, started every ``step`` steps, are the samples, each labelled with the remaining steps ``T - e`` after
    its last step ``e``, clipped at ``max_rul``.  Whole trajectories go to a
    single split.

    Returns ``(manifest, splits)``.
    """
    if N < 2:
        raise ValueError(f"synth_rul needs N >= 2, got {N}")
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if samples < 3:
        raise ValueError("synth_rul needs at least 3 samples")
    lo, hi = life
    if lo <= L:
        raise ValueError(f"shortest lifetime {lo} must exceed L={L}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2B1]))
    gain = rng.uniform(0.5, 1.5, N) * rng.choice([-1.0, 1.0], N)
    offset = rng.uniform(-1.0, 1.0, N)
    xs, ys, traj = [], [], []
    t_id = 0
    while len(xs) < samples:
        T = int(rng.integers(lo, hi + 1))
        t = np.arange(T + 1)
        h = (t / T) ** 2
        series = gain[:, None] * h[None, :] + offset[:, None]
        if noise > 0:
            series = series + noise * rng.standard_normal(series.shape)
        for e in range(L - 1, T + 1, step):
            xs.append(series[:, e - L + 1: e + 1])
            ys.append(min(float(T - e), max_rul))
            traj.append(t_id)
            if len(xs) == samples:
                break
        t_id += 1
    x, y, traj = np.stack(xs), np.array(ys), np.array(traj)
    order = rng.permutation(t_id)
    counts = np.bincount(traj, minlength=t_id)
    targets = np.cumsum(SPLIT_FRACTIONS)[:2] * samples
    owner, acc = {}, 0
    for tid in order:
        owner[tid] = 0 if acc < targets[0] else (1 if acc < targets[1] else 2)
        acc += counts[tid]
    split_of = np.array([owner[t] for t in traj])
    # guarantee non-empty val/test when there are few trajectories
    for k in (1, 2):
        if not np.any(split_of == k):
            split_of[np.flatnonzero(traj == traj[-1 if k == 2 else len(traj) // 2])] = k
    parts = {s: np.flatnonzero(split_of == k) for k, s in enumerate(SPLITS)}
    gen = {"kind": "rul", "seed": seed, "noise": noise, "life": [lo, hi], "step": step,
           "trajectories": t_id, "gain": gain.tolist(), "offset": offset.tolist()}
    return _package("synth_rul", "regression", x, y, parts, max_rul=float(max_rul), generator=gen)


def dataset_from(manifest: DatasetManifest, splits: dict) -> Dataset:
    """In-memory :class:`Dataset` equal to what a write/load round trip gives."""
    out = {}
    for s in SPLITS:
        x, y = splits[s]
        x = np.asarray(x, dtype=np.float32).astype(np.float64)
        y = (np.asarray(y, dtype=np.int32).astype(np.int64) if manifest.task == "classification"
             else np.asarray(y, dtype=np.float32).astype(np.float64))
        out[s] = (x, y)
    manifest.splits = {s: len(out[s][0]) for s in SPLITS}
    return Dataset(manifest, out)


def exists(path) -> bool:
    return os.path.isfile(os.path.join(path, "manifest.json"))
