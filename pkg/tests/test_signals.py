import json

import numpy as np
import pytest

from eegrefine.exceptions import DataError
from eegrefine.montage import Lobe
from eegrefine.signals import (
    EegWindow,
    SynthSpec,
    generate_synthetic,
    load_windows,
    read_csv_recording,
    read_windows_json,
    slice_windows,
    write_csv_recording,
    write_windows_json,
)

from conftest import small_spec


def quiet_spec(**kw):
    base = dict(n_windows=3, planted_edges=[("F3", "F4")], seizure_schedule=[], artifact_rate=0.0)
    base.update(kw)
    return SynthSpec.from_dict(base)


def test_noise_free_planted_pair_is_perfectly_correlated():
    windows = generate_synthetic(quiet_spec(noise_std=0.0))
    i, j = windows[0].montage.index("F3"), windows[0].montage.index("F4")
    for w in windows:
        assert abs(np.corrcoef(w.data[i], w.data[j])[0, 1]) == pytest.approx(1.0, abs=1e-12)


def test_noisy_planted_correlation_matches_snr():
    # shared sine of amplitude A plus unit noise: r = (A^2/2) / (A^2/2 + sigma^2)
    spec = quiet_spec(noise_std=1.0, source_amplitude=10.0, n_windows=5)
    expected = 50.0 / 51.0
    windows = generate_synthetic(spec)
    m = windows[0].montage
    i, j, k = m.index("F3"), m.index("F4"), m.index("O1")
    for w in windows:
        r = np.corrcoef(w.data[i], w.data[j])[0, 1]
        assert r > 0.9
        assert r == pytest.approx(expected, abs=0.01)
        assert -0.3 < np.corrcoef(w.data[i], w.data[k])[0, 1] < 0.3


def test_same_seed_same_bytes():
    a = generate_synthetic(small_spec())
    b = generate_synthetic(small_spec())
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a, b))
    c = generate_synthetic(small_spec(seed=7))
    assert a[0].data.tobytes() != c[0].data.tobytes()


def test_schedule_ground_truth():
    spec = small_spec()
    assert spec.active_lobe(3) is None
    assert spec.active_lobe(4) is Lobe.FRONTAL
    assert spec.active_lobe(7) is Lobe.TEMPORAL
    labels = spec.seizure_labels()
    assert list(np.flatnonzero(labels)) == [4, 5, 6, 7]
    gt = spec.ground_truth()
    m = spec.montage
    fr = m.lobe_members(Lobe.FRONTAL)
    assert gt[4][fr[0], fr[1]] == 1 and gt[0][fr[0], fr[1]] == spec.planted_adjacency()[fr[0], fr[1]]


def test_invalid_schedule_rejected():
    with pytest.raises(DataError):
        SynthSpec.from_dict({"n_windows": 5, "seizure_schedule": [(3, 9, ("Frontal",))]})
    with pytest.raises(Exception):
        SynthSpec.from_dict({"planted_edges": [("F3", "Q9")]})


def test_spec_dict_roundtrip(tmp_path):
    spec = small_spec()
    assert SynthSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert SynthSpec.from_json(p, seed=9).seed == 9


@pytest.mark.parametrize(
    "seconds, rate, window, expected",
    [(10, 250, 4, 2), (4, 250, 4, 1), (7.9, 200, 2, 3)],
)
def test_slice_windows_counts(seconds, rate, window, expected):
    n = int(round(seconds * rate))
    rec = np.zeros((19, n))
    wins = slice_windows(rec, rate, window)
    assert len(wins) == expected
    assert all(w.n_samples == int(window * rate) for w in wins)
    assert [w.window_index for w in wins] == list(range(expected))


def test_slice_too_short():
    with pytest.raises(DataError):
        slice_windows(np.zeros((19, 100)), 250, 4)


def test_slicing_preserves_planted_correlation():
    windows = generate_synthetic(quiet_spec(noise_std=0.0))
    rec = np.concatenate([w.data for w in windows], axis=1)
    m = windows[0].montage
    for w in slice_windows(rec, 250.0, 2.0):
        assert abs(np.corrcoef(w.data[m.index("F3")], w.data[m.index("F4")])[0, 1]) == pytest.approx(1.0)


def test_window_validation(montage):
    with pytest.raises(DataError):
        EegWindow(np.zeros((18, 10)), 250.0, 0, montage)
    with pytest.raises(DataError):
        EegWindow(np.full((19, 10), np.nan), 250.0, 0, montage)
    with pytest.raises(DataError):
        EegWindow(np.zeros((19, 1)), 250.0, 0, montage)


def test_csv_and_json_roundtrip(tmp_path):
    windows = generate_synthetic(small_spec(n_windows=10, seizure_schedule=[]))
    rec = np.concatenate([w.data for w in windows[:2]], axis=1)
    path = tmp_path / "rec.csv"
    write_csv_recording(path, windows[0].labels, rec)
    labels, data = read_csv_recording(path)
    assert labels == windows[0].labels
    assert np.allclose(data, rec, atol=1e-6)
    assert len(load_windows(path, 4.0, 250.0)) == 2
    jpath = tmp_path / "w.json"
    write_windows_json(jpath, windows[:3])
    back = read_windows_json(jpath)
    assert np.array_equal(back[1].data, windows[1].data)
    with pytest.raises(DataError):
        load_windows(path, 4.0, None)
