import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hano.constitutive import PathConfig, generate_sequences
from hano.dataio import (
    ChannelNormalizer,
    DatasetManifest,
    StrainStressSequence,
    ingest_csv,
    make_windows,
    read_dataset,
    resample_resolution,
    split_dataset,
    truncate_prefix,
    window_arrays,
    write_dataset,
)
from hano.errors import (
    CSVFormatError,
    EmptyWindowError,
    FormatVersionError,
    ShapeMismatchError,
    TruncatedPayloadError,
)


@pytest.fixture(scope="module")
def seqs():
    return generate_sequences("elastoplastic", 4, PathConfig(), seed=3)


def test_sequence_validation():
    with pytest.raises(ShapeMismatchError):
        StrainStressSequence(np.zeros((5, 1)), np.zeros((4, 1)))
    with pytest.raises(ShapeMismatchError):
        StrainStressSequence(np.zeros(1), np.zeros(1))
    with pytest.raises(ShapeMismatchError):
        StrainStressSequence(np.array([0.0, np.nan]), np.zeros(2))
    assert StrainStressSequence(np.zeros(3), np.zeros(3)).dim == 1


def test_window_count_and_content(seqs):
    s = seqs[0]
    w = make_windows(s, 10)
    assert len(w) == s.length - 10
    first = w[0]
    np.testing.assert_array_equal(first.history_strain, s.strain[0:10])
    np.testing.assert_array_equal(first.next_increment, s.strain[10] - s.strain[9])
    np.testing.assert_array_equal(first.target, s.stress[10])
    with pytest.raises(EmptyWindowError):
        make_windows(StrainStressSequence(np.zeros(5), np.zeros(5)), 5)


def test_window_arrays_override(seqs):
    over = [np.full_like(s.stress, 7.0) for s in seqs]
    arr = window_arrays(seqs, 4, stress_override=over)
    assert np.all(arr["stress"] == 7.0)
    assert arr["target"].shape[0] == sum(s.length - 4 for s in seqs)
    assert not np.all(arr["target"] == 7.0)


def test_split_is_partition(seqs):
    tr, te = split_dataset(seqs, 3, np.random.default_rng(0))
    ids = sorted(s.seq_id for s in tr + te)
    assert ids == sorted(s.seq_id for s in seqs) and len(tr) == 3


def test_truncate_prefix(seqs):
    s = seqs[0]
    t = truncate_prefix(s, 0.45)
    assert t.meta["truncated_at"] == 45 and t.length == s.length - 45
    np.testing.assert_array_equal(t.stress[0], s.stress[45])
    r = truncate_prefix(s, rng=np.random.default_rng(1))
    assert 0.3 * s.length <= r.meta["truncated_at"] <= 0.5 * s.length


def test_resample_resolution_same_geometry():
    amps = np.array([[0.012, 0.004], [0.009, 0.006]])
    a, b = resample_resolution(amps, 30), resample_resolution(amps, 75)
    assert len(a) == 61 and len(b) == 151
    assert a.max() == b.max() == 0.012 and a[-1] == b[-1] == 0.006


def test_binary_round_trip(tmp_path, seqs):
    man = DatasetManifest("elastoplastic", 3, PathConfig().to_dict(), {"train": [0, 1], "test": [2, 3]})
    path = tmp_path / "d.bin"
    write_dataset(seqs, man, path)
    back, m2 = read_dataset(path)
    assert m2.split == man.split and m2.count == 4
    for a, b in zip(seqs, back):
        assert a.strain.tobytes() == b.strain.tobytes() and a.stress.tobytes() == b.stress.tobytes()
        assert a.meta == b.meta


def test_binary_errors(tmp_path, seqs):
    man = DatasetManifest("elastoplastic")
    path = tmp_path / "d.bin"
    write_dataset(seqs, man, path)
    raw = path.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"NOTADATA" + raw[8:])
    with pytest.raises(FormatVersionError):
        read_dataset(tmp_path / "magic.bin")
    (tmp_path / "ver.bin").write_bytes(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(FormatVersionError):
        read_dataset(tmp_path / "ver.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(TruncatedPayloadError):
        read_dataset(tmp_path / "short.bin")
    (tmp_path / "long.bin").write_bytes(raw + b"\0" * 8)
    with pytest.raises(ShapeMismatchError):
        read_dataset(tmp_path / "long.bin")


def test_overlapping_split_rejected(tmp_path, seqs):
    man = DatasetManifest("elastoplastic", split={"train": [0, 1], "test": [1, 2, 3]})
    with pytest.raises(ShapeMismatchError):
        write_dataset(seqs, man, tmp_path / "x.bin")


def test_csv_ingest(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("eps,sig\n0,0\n0.001,0.2\n0.002,0.21\n")
    s = ingest_csv(p, {"strain": ["eps"], "stress": ["sig"], "units": "GPa"})
    assert s.length == 3 and s.units == "GPa"
    p.write_text("eps,sig\n0,0\n0.001,abc\n")
    with pytest.raises(CSVFormatError) as exc:
        ingest_csv(p, {"strain": ["eps"], "stress": ["sig"]})
    assert exc.value.row == 3 and exc.value.column == "sig"
    with pytest.raises(CSVFormatError):
        ingest_csv(p, {"strain": ["eps"], "stress": ["tau"]})


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=30))
def test_normalizer_inverse(values):
    arr = np.array(values)
    s = StrainStressSequence(np.cumsum(np.abs(arr)) * 1e-3, arr)
    nz = ChannelNormalizer().fit([s])
    np.testing.assert_allclose(nz.inverse_stress(nz.stress(s.stress)), s.stress, atol=1e-12)
    back = ChannelNormalizer.from_dict(nz.to_dict())
    np.testing.assert_array_equal(back.stress_scale, nz.stress_scale)
    np.testing.assert_array_equal(back.increment_scale, nz.increment_scale)
