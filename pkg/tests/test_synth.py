import dataclasses

import numpy as np
import pytest
from scipy.stats import spearmanr

from minvent import synth as sy
from minvent.errors import ChecksumError, HeaderError, InputError, TruncatedError, VersionError

SMALL = sy.DatasetManifest(n_subjects=6, n_female=3, n_male=3, windows_per_subject=4, rng_seed=7)


def profile(**kw):
    base = dict(subject_id=0, sex="female", age_years=30, has_disorder=False, base_tidal_volume=0.5,
                base_resp_rate=12.0, base_heart_rate=70.0, rsa_gain=4.0, stress_level=0.0)
    base.update(kw)
    return sy.SubjectProfile(**base)


@pytest.fixture(scope="module")
def small():
    return sy.build_dataset(SMALL)


def test_mv_is_tidal_volume_times_rate_without_jitter():
    # start phase is random; whole breaths fit exactly when the window is a multiple of the period
    _, mv = sy.synth_breath_waveform(profile(), 60.0, 25.0, rng=0, jitter=0.0)
    assert mv == pytest.approx(6.0, rel=1e-6)


def test_zero_amplitude_gives_zero_flow():
    flow, mv = sy.synth_breath_waveform(profile(base_tidal_volume=0.0), 60.0, 25.0, rng=1)
    assert not flow.any() and mv == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_integration_oracle_reproduces_label(seed):
    rng = np.random.default_rng(seed)
    p = profile(base_tidal_volume=rng.uniform(0.2, 1.0), base_resp_rate=rng.uniform(8, 30))
    flow, mv = sy.synth_breath_waveform(p, 60.0, 25.0, rng=rng, jitter=0.1)
    assert sy.ventilation_from_flow(flow, 25.0) == pytest.approx(mv, rel=0.02)


def test_breath_input_validation():
    with pytest.raises(InputError):
        sy.synth_breath_waveform(profile(), 60.0, 0.5, rng=0)  # below 4x breathing frequency
    with pytest.raises(InputError):
        sy.synth_breath_waveform(profile(), 3.0, 25.0, rng=0)  # shorter than one breath
    with pytest.raises(InputError):
        profile(base_resp_rate=0.0)
    with pytest.raises(InputError):
        profile(base_tidal_volume=-0.1)


def test_heart_constant_without_rsa_or_stress():
    flow, _ = sy.synth_breath_waveform(profile(), 60.0, 25.0, rng=0)
    hr = sy.synth_heart_series(profile(rsa_gain=0.0), flow, rng=0)
    assert np.all(hr == np.float32(70.0))


def test_stress_raises_mean_heart_rate():
    flow, _ = sy.synth_breath_waveform(profile(), 60.0, 25.0, rng=0)
    calm = sy.synth_heart_series(profile(stress_level=0.0), flow, rng=3)
    duress = sy.synth_heart_series(profile(stress_level=1.0), flow, rng=3)
    assert duress.mean() > calm.mean()


def test_heart_rejects_empty_flow():
    with pytest.raises(InputError):
        sy.synth_heart_series(profile(), np.zeros(0), rng=0)


@pytest.mark.parametrize("coupling", [0.5, -0.5])
def test_sdnn_ventilation_rank_correlation_follows_configured_sign(coupling):
    # rsa_gain is held fixed per subject; ventilation varies through tidal volume
    params = sy.SynthParams(hrv_coupling=coupling)
    rng = np.random.default_rng(11)
    sd, mv = [], []
    for i in range(50):
        p = profile(subject_id=i, base_tidal_volume=rng.uniform(0.3, 0.9))
        flow, m = sy.synth_breath_waveform(p, 60.0, 25.0, rng=rng)
        sd.append(sy.sdnn(sy.synth_heart_series(p, flow, rng=rng, params=params)))
        mv.append(m)
    rho = spearmanr(sd, mv).statistic
    assert np.sign(rho) == np.sign(coupling) and abs(rho) > 0.5


def clean_window(seed=0):
    p = profile()
    flow, mv = sy.synth_breath_waveform(p, 60.0, 25.0, rng=seed)
    return sy.SignalWindow(0, 0, flow, sy.synth_heart_series(p, flow, rng=seed), 0, mv)


def test_level_zero_is_identity():
    w = clean_window()
    assert sy.inject_artifacts(w, 0, rng=5) == w


def test_distortion_grows_with_level():
    w = clean_window()
    dev = [np.sqrt(np.mean((sy.inject_artifacts(w, lv, rng=9).resp_flow - w.resp_flow) ** 2.0))
           for lv in (1, 2, 3)]
    assert dev[0] < dev[1] < dev[2]


def test_level_two_noise_rms_matches_configuration():
    z = sy.SignalWindow(0, 0, np.zeros(1500, np.float32), np.zeros(1500, np.float32), 0, 0.0)
    out = sy.inject_artifacts(z, 2, rng=4)
    for ch, series in enumerate((out.resp_flow, out.heart_series)):
        rms = np.sqrt(np.mean(series.astype(np.float64) ** 2))
        assert rms == pytest.approx(sy.DEFAULT_PARAMS.artifact_rms(2, ch), rel=0.05)


def test_artifacts_keep_label_and_reject_unknown_level():
    w = clean_window()
    assert sy.inject_artifacts(w, 3, rng=1).mv_true == w.mv_true
    with pytest.raises(InputError):
        sy.inject_artifacts(w, 4, rng=1)


def test_default_manifest_cohort_shape():
    m = sy.DatasetManifest()
    m.validate()
    assert (m.n_subjects, m.n_female, m.n_male) == (103, 53, 50)
    assert m.n_subjects * m.windows_per_subject == 41_200
    assert m.window_len == 1500


def test_profiles_cover_teen_bracket():
    rng = np.random.default_rng(0)
    ages = [sy.sample_profile(i, "female", rng).age_years for i in range(103)]
    assert min(ages) >= 8 and max(ages) <= 75
    assert any(12 <= a <= 20 for a in ages)


def test_build_dataset_shape_and_disjoint_splits(small):
    assert len(small.windows) == 24
    sexes = [p.sex for p in small.profiles]
    assert sexes.count("female") == 3 and sexes.count("male") == 3
    for sid in range(6):
        assert sum(w.subject_id == sid for w in small.windows) == 4
    parts = [set(small.splits[n]) for n in ("train", "val", "test")]
    assert set.union(*parts) == set(range(6))
    assert not (parts[0] & parts[1]) and not (parts[0] & parts[2]) and not (parts[1] & parts[2])
    assert all(len(p) > 0 for p in parts)
    x, y, levels, sids = small.arrays("test")
    assert x.shape == (len(y), 2, 1500) and set(sids) == parts[2]


def test_bad_split_rejected():
    with pytest.raises(InputError):
        sy.build_dataset(dataclasses.replace(SMALL, split=(0.5, 0.3, 0.3)))
    with pytest.raises(InputError):
        sy.build_dataset(dataclasses.replace(SMALL, n_female=4))


def test_dataset_export_is_deterministic(tmp_path, small):
    again = sy.build_dataset(SMALL)
    a = sy.export_dataset(small, tmp_path / "a.vntd").read_bytes()
    b = sy.export_dataset(again, tmp_path / "b.vntd").read_bytes()
    assert a == b
    other = sy.build_dataset(dataclasses.replace(SMALL, rng_seed=8))
    assert sy.encode_dataset(other.windows, 25.0) != a


def test_roundtrip(tmp_path, small):
    path = sy.export_dataset(small, tmp_path / "d.vntd")
    back = sy.import_dataset(path)
    assert back.windows == small.windows
    assert back.manifest == small.manifest
    assert back.splits == small.splits
    assert back.params == small.params


def test_truncation_names_offset(small):
    blob = sy.encode_dataset(small.windows, 25.0)
    rec = (len(blob) - sy._HEADER.size - 4) // len(small.windows)
    cut = sy._HEADER.size + 2 * rec + 10
    with pytest.raises(TruncatedError) as err:
        sy.decode_dataset(blob[:cut])
    assert err.value.offset == sy._HEADER.size + 2 * rec
    assert str(sy._HEADER.size + 2 * rec) in str(err.value)


def test_sample_rate_byte_flip_is_checksum_error(small):
    blob = bytearray(sy.encode_dataset(small.windows, 25.0))
    blob[10] ^= 0x01  # fs_hz occupies header bytes 10..13
    with pytest.raises(ChecksumError):
        sy.decode_dataset(bytes(blob))


def test_distinct_header_errors(small):
    blob = sy.encode_dataset(small.windows, 25.0)
    with pytest.raises(HeaderError):
        sy.decode_dataset(b"XXXX" + blob[4:])
    with pytest.raises(VersionError):
        sy.decode_dataset(blob[:4] + b"\x09\x00" + blob[6:])
    with pytest.raises(HeaderError):
        sy.decode_dataset(blob + b"\x00")
