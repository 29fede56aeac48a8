import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tlfault.codes import CLASS_CODES, N_CLASSES, FaultType, code_to_label, label_to_code
from tlfault.errors import ValidationError
from tlfault.featurex import (
    FEATURE_NAMES,
    FeatureDataset,
    Sample,
    Scaler,
    apply_scaler,
    assemble_frame,
    fit_scaler,
    main_harmonic,
    prepare,
    read_dataset,
    scaler_path,
    split_dataset,
    split_indices,
    write_dataset,
    zero_sequence,
)
from tlfault.powersim import FaultSpec, LineParams, SourceParams, solve_network, synthesize_waveforms

N = 30
FS = 1200.0


def dft_bin(x, f0=60.0):
    """Brute-force single-bin DFT amplitude, one term at a time."""
    acc = 0j
    for n, v in enumerate(x):
        acc += v * complex(np.cos(2 * np.pi * f0 * n / FS), -np.sin(2 * np.pi * f0 * n / FS))
    return 2.0 / len(x) * abs(acc)


def test_leakage_term_vanishes():
    # The negative-frequency image sum over 1.5 cycles is exactly zero.
    s = sum(np.exp(-2j * 2 * np.pi * 60 * n / FS) for n in range(N))
    assert abs(s) < 1e-13


@pytest.mark.parametrize("phi", np.linspace(0, 2 * np.pi, 13))
def test_pure_tone_recovered(phi):
    n = np.arange(N)
    assert main_harmonic(np.cos(2 * np.pi * 60 * n / FS + phi)) == pytest.approx(1.0, abs=1e-12)
    assert main_harmonic(2.5 * np.cos(2 * np.pi * 60 * n / FS)) == pytest.approx(2.5, abs=1e-12)


def test_zero_window():
    assert main_harmonic(np.zeros(N)) == 0.0


def test_matches_brute_force_on_random_windows(rng):
    x = rng.standard_normal((500, N)) * rng.uniform(0.1, 1000, (500, 1))
    got = main_harmonic(x)
    want = np.array([dft_bin(w) for w in x])
    assert np.max(np.abs(got - want) / np.maximum(want, 1.0)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, N, elements=st.floats(-1e3, 1e3)), st.floats(-100, 100))
def test_homogeneous(x, alpha):
    assert abs(main_harmonic(alpha * x) - abs(alpha) * main_harmonic(x)) <= 1e-12 * max(1.0, abs(alpha) * main_harmonic(x))


def test_wrong_window_length():
    with pytest.raises(ValidationError):
        main_harmonic(np.zeros(29))


def test_zero_sequence_cases():
    t = np.arange(60) / FS
    ia, ib, ic = (np.cos(2 * np.pi * 60 * t - k * 2 * np.pi / 3) for k in range(3))
    assert np.max(np.abs(zero_sequence(ia, ib, ic))) < 1e-12
    c = np.full(10, 3.7)
    assert np.allclose(zero_sequence(c, c, c), 3.7)
    with pytest.raises(ValidationError):
        zero_sequence(np.zeros(3), np.zeros(3), np.zeros(4))


# ------------------------------------------------------------------ codes


def test_class_codes():
    assert N_CLASSES == 11 == len(set(CLASS_CODES))
    for label, code in enumerate(CLASS_CODES):
        assert code_to_label(code) == label
        assert label_to_code(label) == code
    assert code_to_label("1111") == code_to_label("1110")
    assert FaultType.AG.code == "1001" and FaultType.NO_FAULT.code == "0000"
    assert FaultType.ABG.grounded and not FaultType.ABC.grounded
    assert FaultType.BC.phases == (1, 2)


# ------------------------------------------------------------------ frames


def _record(ft=FaultType.AG, n_post=40, snr=None):
    lp = LineParams()
    spec = FaultSpec(ft, 30.0, 20.0, 1.0) if ft != FaultType.NO_FAULT else FaultSpec(ft)
    pre = solve_network(lp, SourceParams(), SourceParams(), FaultSpec(FaultType.NO_FAULT, distance=30.0))
    post = solve_network(lp, SourceParams(), SourceParams(), spec) if spec.is_fault else pre
    return synthesize_waveforms(pre, post, spec, 20, n_post, lp, snr_db=snr, rng=np.random.default_rng(0))


def test_frame_layout_and_oracle():
    rec = _record()
    s = assemble_frame(rec)
    assert s.frame.shape == (7, 7)
    assert s.class_code == "1001" and s.class_label == CLASS_CODES.index("1001")
    assert s.location == pytest.approx(0.3)
    ch = rec.channels
    i0 = (ch[3] + ch[4] + ch[5]) / 3
    for row in range(7):
        start = rec.inception_index + row
        want = [dft_bin(ch[c, start : start + N]) for c in range(6)] + [dft_bin(i0[start : start + N])]
        assert np.allclose(s.frame[row], want, rtol=1e-12, atol=1e-9)
    assert len(FEATURE_NAMES) == 7


def test_no_fault_rows_identical():
    s = assemble_frame(_record(FaultType.NO_FAULT))
    assert np.allclose(s.frame, s.frame[0], rtol=1e-9, atol=1e-9 * np.abs(s.frame).max())
    assert np.isnan(s.location)


def test_insufficient_post_samples():
    rec = _record(n_post=36)
    rec.voltages = rec.voltages[:, :-1]
    rec.currents = rec.currents[:, :-1]
    with pytest.raises(ValidationError):
        assemble_frame(rec)


# ------------------------------------------------------------------ scaler


def test_scaler_examples():
    train = np.array([[0.0, 4.0], [5.0, 4.0], [10.0, 4.0]])
    s = fit_scaler(train)
    out = apply_scaler(s, train)
    assert np.allclose(out[:, 0], [0, 0.5, 1])
    assert np.allclose(out[:, 1], 0)
    assert apply_scaler(s, np.array([[20.0, 9.0]]))[0, 0] == 1.0
    assert apply_scaler(s, np.array([[-3.0, 9.0]]))[0, 0] == 0.0
    assert json.loads(json.dumps(s.to_dict())) == s.to_dict()
    back = Scaler.from_dict(s.to_dict())
    assert np.array_equal(back.minimum, s.minimum) and np.array_equal(back.maximum, s.maximum)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (20, 7, 7), elements=st.floats(0, 1e6)))
def test_scaled_columns_span_unit_interval(frames):
    s = fit_scaler(frames)
    out = apply_scaler(s, frames).reshape(-1, 7)
    for c in range(7):
        col = frames.reshape(-1, 7)[:, c]
        if col.max() > col.min():
            assert out[:, c].min() == 0.0 and out[:, c].max() == 1.0
    assert out.min() >= 0 and out.max() <= 1


def test_empty_scaler_rejected():
    with pytest.raises(ValidationError):
        fit_scaler(np.zeros((0, 7, 7)))


# ------------------------------------------------------------------- split


def test_split_counts_per_class():
    labels = np.repeat(np.arange(11), 2160)
    tr, te = split_indices(labels, 0.7, seed=3)
    assert set(np.bincount(labels[tr])) == {1512}
    assert set(np.bincount(labels[te])) == {648}
    assert len(np.intersect1d(tr, te)) == 0


def test_split_deterministic_and_seeded():
    labels = np.repeat(np.arange(11), 30)
    a = split_indices(labels, 0.7, seed=5)
    b = split_indices(labels, 0.7, seed=5)
    c = split_indices(labels, 0.7, seed=6)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=2, max_size=11), st.floats(0.1, 0.9), st.integers(0, 2**32))
def test_split_preserves_proportions(sizes, ratio, seed):
    labels = np.concatenate([np.full(n, k) for k, n in enumerate(sizes)])
    tr, _ = split_indices(labels, ratio, seed)
    got = np.bincount(labels[tr], minlength=len(sizes))
    assert np.all(np.abs(got - ratio * np.array(sizes)) <= 1.0)


@pytest.mark.parametrize("ratio", [0.0, 1.0, 1.5])
def test_bad_ratio(ratio):
    with pytest.raises(ValidationError):
        split_indices(np.repeat(np.arange(3), 5), ratio)


def test_singleton_class_rejected():
    with pytest.raises(ValidationError):
        split_indices(np.array([0, 0, 1]), 0.5)


def test_split_sample_lists():
    samples = [Sample(np.zeros((7, 7)), k % 3, 0.5) for k in range(30)]
    tr, te = split_dataset(samples, 0.7, seed=0)
    assert len(tr) + len(te) == 30 and len(tr) == 21


# --------------------------------------------------------------------- io


def test_dataset_round_trip(tmp_path, reduced_split):
    path = write_dataset(reduced_split, tmp_path / "f.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header[:2] == ["x00", "x01"] and header[48] == "x66"
    assert header[49:] == ["class_label", "class_code", "location", "split"]
    side = json.loads(scaler_path(path).read_text())
    assert side["class_order"] == list(CLASS_CODES)
    back = read_dataset(path)
    for a, b in ((reduced_split.train, back.train), (reduced_split.test, back.test)):
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(np.isnan(a.locations), np.isnan(b.locations))
        assert np.array_equal(a.locations[~np.isnan(a.locations)], b.locations[~np.isnan(b.locations)])
    assert np.array_equal(back.scaler.minimum, reduced_split.scaler.minimum)


def test_prepare_normalizes_with_train_stats(reduced_dataset):
    sp = prepare(reduced_dataset, 0.7, seed=2)
    assert sp.train.frames.min() == 0.0 and sp.train.frames.max() == 1.0
    assert sp.test.frames.min() >= 0.0 and sp.test.frames.max() <= 1.0
    assert len(sp.train) + len(sp.test) == len(reduced_dataset)


def test_feature_dataset_shape_check():
    with pytest.raises(ValidationError):
        FeatureDataset(np.zeros((3, 6, 7)), np.zeros(3), np.zeros(3))
