"""Dataset containers, history windows, test-protocol transforms and file I/O."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CSVFormatError,
    EmptyWindowError,
    FormatVersionError,
    ShapeMismatchError,
    TruncatedPayloadError,
)

DATA_MAGIC = b"HANODATA"
DATA_VERSION = 1


@dataclass
class StrainStressSequence:
    """One loading trajectory; rows are time steps, columns strain/stress components."""

    strain: np.ndarray
    stress: np.ndarray
    model_id: str = "unknown"
    units: str = ""
    seed: int | None = None
    params_digest: str = ""
    seq_id: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strain = np.asarray(self.strain, dtype=np.float64)
        self.stress = np.asarray(self.stress, dtype=np.float64)
        if self.strain.ndim == 1:
            self.strain = self.strain[:, None]
        if self.stress.ndim == 1:
            self.stress = self.stress[:, None]
        if self.strain.shape != self.stress.shape:
            raise ShapeMismatchError(f"strain {self.strain.shape} vs stress {self.stress.shape}")
        if len(self.strain) < 2:
            raise ShapeMismatchError("a sequence needs at least two steps")
        if not (np.all(np.isfinite(self.strain)) and np.all(np.isfinite(self.stress))):
            raise ShapeMismatchError("sequence contains non-finite values")

    @property
    def length(self) -> int:
        return self.strain.shape[0]

    @property
    def dim(self) -> int:
        return self.strain.shape[1]

    def header(self) -> dict:
        return {
            "seq_id": self.seq_id,
            "T": self.length,
            "d": self.dim,
            "model_id": self.model_id,
            "units": self.units,
            "seed": self.seed,
            "params_digest": self.params_digest,
            "meta": self.meta,
        }


@dataclass
class WindowSample:
    history_strain: np.ndarray
    history_stress: np.ndarray
    next_increment: np.ndarray
    target: np.ndarray
    seq_id: int
    target_index: int


def make_windows(seq: StrainStressSequence, k: int) -> list[WindowSample]:
    """One sample per target index in [k, T-1]: history = steps [n-k+1, n], target = n+1."""
    if k < 1:
        raise ValueError("window length k must be >= 1")
    T = seq.length
    if T <= k:
        raise EmptyWindowError(f"sequence {seq.seq_id} has T={T} <= k={k}")
    out = []
    for target in range(k, T):
        out.append(
            WindowSample(
                history_strain=seq.strain[target - k : target],
                history_stress=seq.stress[target - k : target],
                next_increment=seq.strain[target] - seq.strain[target - 1],
                target=seq.stress[target],
                seq_id=seq.seq_id,
                target_index=target,
            )
        )
    return out


def window_arrays(seqs: Sequence[StrainStressSequence], k: int, stress_override=None) -> dict:
    """Stack every window of ``seqs`` into arrays for batched training.

    ``stress_override`` (one array per sequence) replaces the history stress,
    e.g. a scheduled-sampling buffer; targets always come from ``seq.stress``.
    """
    strain, stress, d_eps, target, sid, pos = [], [], [], [], [], []
    for j, seq in enumerate(seqs):
        T = seq.length
        if T <= k:
            raise EmptyWindowError(f"sequence {seq.seq_id} has T={T} <= k={k}")
        hist = seq.stress if stress_override is None else stress_override[j]
        idx = np.arange(k, T)
        gather = idx[:, None] + np.arange(-k, 0)[None, :]
        strain.append(seq.strain[gather])
        stress.append(hist[gather])
        d_eps.append(seq.strain[idx] - seq.strain[idx - 1])
        target.append(seq.stress[idx])
        sid.append(np.full(len(idx), j))
        pos.append(idx)
    return {
        "strain": np.concatenate(strain),
        "stress": np.concatenate(stress),
        "d_eps": np.concatenate(d_eps),
        "target": np.concatenate(target),
        "seq_index": np.concatenate(sid),
        "target_index": np.concatenate(pos),
    }


def split_dataset(sequences: Sequence, n_train: int, rng: np.random.Generator):
    """Random permutation split into (train, test) lists."""
    n = len(sequences)
    if not 0 <= n_train <= n:
        raise ValueError(f"n_train={n_train} outside [0, {n}]")
    perm = rng.permutation(n)
    train = [sequences[i] for i in sorted(perm[:n_train])]
    test = [sequences[i] for i in sorted(perm[n_train:])]
    return train, test


def truncate_prefix(seq: StrainStressSequence, fraction: float | None = None, rng=None,
                    bounds=(0.3, 0.5)) -> StrainStressSequence:
    """Drop the first floor(fraction * T) steps; fraction drawn from ``bounds`` if not given."""
    if fraction is None:
        if rng is None:
            raise ValueError("need either fraction or rng")
        fraction = float(rng.uniform(*bounds))
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    cut = int(math.floor(fraction * seq.length))
    meta = dict(seq.meta, truncated_at=cut, truncation_fraction=fraction)
    return replace(seq, strain=seq.strain[cut:].copy(), stress=seq.stress[cut:].copy(), meta=meta)


def resample_resolution(amplitudes, n_steps: int) -> np.ndarray:
    """Same cyclic path geometry sampled with ``n_steps`` increments per cycle."""
    from .constitutive import cyclic_path_from_amplitudes

    if not 2 <= n_steps:
        raise ValueError("n_steps must be >= 2")
    return cyclic_path_from_amplitudes(np.asarray(amplitudes, dtype=float), n_steps)


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    model_id: str
    global_seed: int | None = None
    path_config: dict = field(default_factory=dict)
    split: dict = field(default_factory=lambda: {"train": [], "test": []})
    sequences: list = field(default_factory=list)
    format_version: int = DATA_VERSION

    @property
    def count(self) -> int:
        return len(self.sequences)

    def validate_split(self):
        train, test = set(self.split.get("train", [])), set(self.split.get("test", []))
        ids = {h["seq_id"] for h in self.sequences}
        if train & test:
            raise ShapeMismatchError("train and test splits overlap")
        if (train | test) and (train | test) != ids:
            raise ShapeMismatchError("split assignment is not exhaustive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = {
            "sequences": self.count,
            "train": len(self.split.get("train", [])),
            "test": len(self.split.get("test", [])),
        }
        return d


def write_dataset(sequences: Sequence[StrainStressSequence], manifest: DatasetManifest, path) -> None:
    offset = 0
    headers = []
    for seq in sequences:
        h = seq.header()
        h["offset"] = offset
        offset += 2 * seq.length * seq.dim * 8
        headers.append(h)
    manifest = replace(manifest, sequences=headers)
    manifest.validate_split()
    blob = json.dumps(manifest.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<IQ", DATA_VERSION, len(blob)))
        fh.write(blob)
        for seq in sequences:
            fh.write(seq.strain.astype("<f8").tobytes())
            fh.write(seq.stress.astype("<f8").tobytes())


def read_dataset(path) -> tuple[list[StrainStressSequence], DatasetManifest]:
    raw = Path(path).read_bytes()
    if raw[:8] != DATA_MAGIC:
        raise FormatVersionError(f"{path}: not a dataset file (bad magic)")
    if len(raw) < 20:
        raise TruncatedPayloadError(f"{path}: header truncated")
    version, mlen = struct.unpack("<IQ", raw[8:20])
    if version != DATA_VERSION:
        raise FormatVersionError(f"{path}: unsupported version {version}")
    if len(raw) < 20 + mlen:
        raise TruncatedPayloadError(f"{path}: manifest truncated")
    try:
        man = json.loads(raw[20 : 20 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatVersionError(f"{path}: manifest is not valid JSON") from exc
    payload = memoryview(raw)[20 + mlen :]
    headers = man.get("sequences", [])
    expected = sum(2 * h["T"] * h["d"] * 8 for h in headers)
    counts = man.get("counts", {})
    if counts.get("sequences", len(headers)) != len(headers):
        raise ShapeMismatchError("manifest sequence count disagrees with its headers")
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise ShapeMismatchError(f"{path}: payload larger than the manifest declares")
    seqs = []
    for h in headers:
        n = h["T"] * h["d"]
        off = h["offset"]
        strain = np.frombuffer(payload[off : off + 8 * n], dtype="<f8").reshape(h["T"], h["d"]).astype(np.float64)
        stress = np.frombuffer(payload[off + 8 * n : off + 16 * n], dtype="<f8").reshape(h["T"], h["d"]).astype(np.float64)
        seqs.append(
            StrainStressSequence(
                strain=strain, stress=stress, model_id=h["model_id"], units=h["units"], seed=h["seed"],
                params_digest=h["params_digest"], seq_id=h["seq_id"], meta=h.get("meta", {}),
            )
        )
    manifest = DatasetManifest(
        model_id=man["model_id"], global_seed=man.get("global_seed"), path_config=man.get("path_config", {}),
        split=man.get("split", {"train": [], "test": []}), sequences=headers,
        format_version=man.get("format_version", version),
    )
    manifest.validate_split()
    return seqs, manifest


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def ingest_csv(path, column_map: dict, seq_id: int = 0, model_id: str = "external") -> StrainStressSequence:
    """Read one trajectory from a header-first CSV.

    ``column_map`` = {"strain": [col, ...], "stress": [col, ...], "units": "MPa"}.
    """
    strain_cols = list(column_map["strain"])
    stress_cols = list(column_map["stress"])
    if len(strain_cols) != len(stress_cols):
        raise CSVFormatError("strain and stress column lists differ in length")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError("empty file (header row required)", row=1) from None
        header = [h.strip() for h in header]
        index = {}
        for col in strain_cols + stress_cols:
            if col not in header:
                raise CSVFormatError("missing column", row=1, column=col)
            index[col] = header.index(col)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CSVFormatError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
            vals = []
            for col in strain_cols + stress_cols:
                cell = row[index[col]].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise CSVFormatError(f"non-numeric cell {cell!r}", row=lineno, column=col) from None
                if not math.isfinite(v):
                    raise CSVFormatError(f"non-finite value {cell!r}", row=lineno, column=col)
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise CSVFormatError("no data rows after the header")
    if len(rows) < 2:
        raise CSVFormatError("a sequence needs at least two rows")
    arr = np.array(rows)
    d = len(strain_cols)
    return StrainStressSequence(
        strain=arr[:, :d], stress=arr[:, d:], model_id=model_id, units=column_map.get("units", ""),
        seq_id=seq_id, meta={"source": str(path)},
    )


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


@dataclass
class ChannelNormalizer:
    """Per-component affine scaling of strain and stress.

    Strain increments get their own scale (no shift); without one they fall
    back to the strain scale.
    """

    strain_mean: np.ndarray | None = None
    strain_scale: np.ndarray | None = None
    stress_mean: np.ndarray | None = None
    stress_scale: np.ndarray | None = None
    increment_scale: np.ndarray | None = None

    @classmethod
    def identity(cls, dim: int) -> "ChannelNormalizer":
        z, o = np.zeros(dim), np.ones(dim)
        return cls(z, o, z.copy(), o.copy())

    def fit(self, seqs: Iterable[StrainStressSequence]) -> "ChannelNormalizer":
        seqs = list(seqs)
        stress = np.concatenate([s.stress for s in seqs])
        strain = np.concatenate([s.strain for s in seqs])
        self.strain_mean = strain.mean(0)
        self.strain_scale = np.where(strain.std(0) > 0, strain.std(0), 1.0)
        self.stress_mean = stress.mean(0)
        self.stress_scale = np.where(stress.std(0) > 0, stress.std(0), 1.0)
        inc = np.concatenate([np.diff(s.strain, axis=0) for s in seqs])
        rms = np.sqrt(np.mean(inc**2, axis=0))
        self.increment_scale = np.where(rms > 0, rms, 1.0)
        return self

    def strain(self, x):
        return (x - self.strain_mean) / self.strain_scale

    def increment(self, dx):
        scale = self.strain_scale if self.increment_scale is None else self.increment_scale
        return dx / scale

    def stress(self, s):
        return (s - self.stress_mean) / self.stress_scale

    def inverse_stress(self, s):
        return s * self.stress_scale + self.stress_mean

    def to_dict(self) -> dict:
        return {k: None if v is None else np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict | None) -> "ChannelNormalizer | None":
        if d is None:
            return None
        return cls(**{k: None if v is None else np.asarray(v, dtype=np.float64) for k, v in d.items()})
