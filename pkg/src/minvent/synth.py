"""Synthetic respiration / heart-rate cohort with minute-ventilation labels.

The generator stands in for a private wearable-sensor dataset.  Each
subject gets a :class:`SubjectProfile`; each one-minute window gets a
respiratory flow trace (L/s), a heart-rate trace (beats/min) modulated by
respiratory sinus arrhythmia, an artifact level 0-3 and the clean
minute-ventilation label.

Labels always come from the clean flow.  Artifacts are added afterwards and
never touch ``mv_true``.
"""
from __future__ import annotations

import dataclasses
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text, format_kv, parse_kv
from .errors import ChecksumError, HeaderError, InputError, TruncatedError, VersionError

FEMALE, MALE = "female", "male"
SEX_CODES = {FEMALE: 0, MALE: 1}
SEX_NAMES = {v: k for k, v in SEX_CODES.items()}
ARTIFACT_LEVELS = (0, 1, 2, 3)
CHANNELS = ("resp_flow", "heart_series")


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: int
    sex: str
    age_years: int
    has_disorder: bool
    base_tidal_volume: float  # L
    base_resp_rate: float  # breaths/min
    base_heart_rate: float  # beats/min
    rsa_gain: float  # beats/min of modulation at the reference ventilation
    stress_level: float = 0.0  # 0 carefree .. 1 under duress

    def __post_init__(self):
        if self.sex not in SEX_CODES:
            raise InputError(f"sex must be one of {sorted(SEX_CODES)}, got {self.sex!r}")
        if self.base_tidal_volume < 0:
            raise InputError(f"base_tidal_volume must be >= 0, got {self.base_tidal_volume}")
        if self.base_resp_rate <= 0 or self.base_heart_rate <= 0:
            raise InputError("base_resp_rate and base_heart_rate must be positive")
        if self.rsa_gain < 0:
            raise InputError(f"rsa_gain must be >= 0, got {self.rsa_gain}")
        if not 0.0 <= self.stress_level <= 1.0:
            raise InputError(f"stress_level must lie in [0, 1], got {self.stress_level}")


@dataclass
class SignalWindow:
    subject_id: int
    window_id: int
    resp_flow: np.ndarray  # float32, L/s
    heart_series: np.ndarray  # float32, beats/min
    artifact_level: int
    mv_true: float  # L/min, float32-representable
    sex: str = FEMALE
    age_years: int = 0

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.window_id)

    def channels(self) -> np.ndarray:
        return np.stack([self.resp_flow, self.heart_series])

    def __eq__(self, other):
        if not isinstance(other, SignalWindow):
            return NotImplemented
        return (self.key == other.key
                and self.artifact_level == other.artifact_level
                and self.sex == other.sex and self.age_years == other.age_years
                and np.float32(self.mv_true).tobytes() == np.float32(other.mv_true).tobytes()
                and self.resp_flow.tobytes() == other.resp_flow.tobytes()
                and self.heart_series.tobytes() == other.heart_series.tobytes())


@dataclass(frozen=True)
class DatasetManifest:
    n_subjects: int = 103
    n_female: int = 53
    n_male: int = 50
    windows_per_subject: int = 400
    fs_hz: float = 25.0
    window_seconds: float = 60.0
    rng_seed: int = 0
    split: tuple = (0.7, 0.15, 0.15)

    def validate(self):
        if self.n_subjects < 1 or self.n_female < 0 or self.n_male < 0:
            raise InputError("subject counts must be non-negative and n_subjects >= 1")
        if self.n_female + self.n_male != self.n_subjects:
            raise InputError(
                f"n_female + n_male = {self.n_female + self.n_male} != n_subjects = {self.n_subjects}")
        if self.windows_per_subject < 1:
            raise InputError("windows_per_subject must be >= 1")
        if self.fs_hz <= 0 or self.window_seconds <= 0:
            raise InputError("fs_hz and window_seconds must be positive")
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise InputError(f"split must be three non-negative fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise InputError(f"split fractions sum to {sum(self.split)}, not 1")
        n = self.window_seconds * self.fs_hz
        if abs(n - round(n)) > 1e-9:
            raise InputError("window_seconds * fs_hz must be a whole number of samples")

    @property
    def window_len(self) -> int:
        return int(round(self.window_seconds * self.fs_hz))


@dataclass(frozen=True)
class SynthParams:
    """Generator knobs that are not part of the cohort shape."""

    age_min: int = 8
    age_max: int = 75
    disorder_fraction: float = 0.3
    breath_jitter: float = 0.05  # relative sd of breath-to-breath period/volume
    window_vt_spread: float = 0.3  # lognormal sd of per-window tidal volume
    window_rr_spread: float = 0.2  # lognormal sd of per-window rate
    hrv_coupling: float = 0.5  # sign sets the SDNN-vs-ventilation direction
    mv_reference: float = 6.0  # L/min at which RSA amplitude equals rsa_gain
    stress_hr_shift: float = 15.0  # beats/min added at stress_level = 1
    stress_rsa_drop: float = 0.5  # fractional RSA reduction at stress_level = 1
    # per-level-unit RMS of (wander, bursts, white) per channel
    flow_artifact_rms: tuple = (0.12, 0.16, 0.08)
    heart_artifact_rms: tuple = (4.0, 6.0, 2.0)

    def artifact_rms(self, level: int, channel: int = 0) -> float:
        """Total RMS of the injected contamination for ``level`` on ``channel``."""
        table = self.flow_artifact_rms if channel == 0 else self.heart_artifact_rms
        return float(level * np.sqrt(np.sum(np.square(table))))


DEFAULT_PARAMS = SynthParams()


# -- single-window synthesis ---------------------------------------------------

def synth_breath_waveform(profile: SubjectProfile, window_seconds: float, fs_hz: float,
                          rng=None, jitter: float = DEFAULT_PARAMS.breath_jitter):
    """Quasi-periodic sinusoidal flow and the minute ventilation it carries.

    Each breath ``i`` has period ``T_i`` and volume ``V_i`` (jittered around
    the profile's rate and tidal volume) and flow
    ``V_i * pi / T_i * sin(2 pi t / T_i)``: the inspiratory half-lobe
    integrates to ``V_i``.  ``mv_true`` is the exact inspired volume inside
    the window scaled to one minute, i.e. effective tidal volume times
    effective (fractional) breath count per minute.

    Returns ``(resp_flow[float32], mv_true)``.
    """
    rng = _rng(rng)
    vt, rr = float(profile.base_tidal_volume), float(profile.base_resp_rate)
    if vt < 0 or rr <= 0 or fs_hz <= 0 or window_seconds <= 0:
        raise InputError("tidal volume must be >= 0; rate, fs_hz, window_seconds must be > 0")
    if fs_hz < 4 * rr / 60.0:
        raise InputError(f"fs_hz={fs_hz} below 4x breathing frequency {rr / 60.0:.3f} Hz")
    period = 60.0 / rr
    if window_seconds < period:
        raise InputError(f"window of {window_seconds}s shorter than one breath ({period:.2f}s)")
    if jitter < 0 or jitter >= 0.5:
        raise InputError("jitter must lie in [0, 0.5)")

    n = int(round(window_seconds * fs_hz))
    t = np.arange(n) / fs_hz
    flow = np.zeros(n)
    start = -rng.uniform(0.0, period)
    inspired = 0.0
    while start < window_seconds:
        e_t, e_v = np.clip(rng.standard_normal(2), -2.0, 2.0)
        t_i = period * (1.0 + jitter * e_t)
        v_i = vt * (1.0 + jitter * e_v)
        amp = v_i * np.pi / t_i
        lo = np.searchsorted(t, start, side="left")
        hi = np.searchsorted(t, start + t_i, side="left")
        flow[lo:hi] = amp * np.sin(2.0 * np.pi * (t[lo:hi] - start) / t_i)
        # inspiration lobe is [start, start + t_i/2]; clip to [0, window]
        a = max(start, 0.0)
        b = min(start + 0.5 * t_i, window_seconds)
        if b > a:
            w = 2.0 * np.pi / t_i
            inspired += amp / w * (np.cos(w * (a - start)) - np.cos(w * (b - start)))
        start += t_i
    mv = inspired * 60.0 / window_seconds
    return flow.astype(np.float32), float(np.float32(mv))


def ventilation_from_flow(resp_flow, fs_hz: float) -> float:
    """Trapezoidal integral of the positive flow lobes, scaled to L/min."""
    f = np.clip(np.asarray(resp_flow, dtype=np.float64), 0.0, None)
    if f.size < 2:
        return 0.0
    inspired = np.trapezoid(f, dx=1.0 / fs_hz)
    return float(inspired * 60.0 / (f.size / fs_hz))


def synth_heart_series(profile: SubjectProfile, resp_flow, rng=None, fs_hz: float = 25.0,
                       params: SynthParams = DEFAULT_PARAMS) -> np.ndarray:
    """Heart-rate trace with respiratory sinus arrhythmia and a stress offset.

    ``hr = base + stress_shift * stress + gain_eff * phase`` where ``phase`` is
    the flow normalized to [-1, 1] (lagged by a random 0-1 s), and the
    effective gain shrinks with stress and scales with the window's
    ventilation through ``params.hrv_coupling``.
    """
    rng = _rng(rng)
    flow = np.asarray(resp_flow, dtype=np.float64)
    if flow.size == 0:
        raise InputError("resp_flow is empty")
    peak = np.max(np.abs(flow))
    lag = int(round(rng.uniform(0.0, 1.0) * fs_hz))
    phase = np.zeros_like(flow)
    if peak > 0:
        phase = np.roll(flow / peak, lag)
        if lag:
            phase[:lag] = flow[0] / peak
    mv = ventilation_from_flow(flow, fs_hz)
    coupling = max(0.0, 1.0 + params.hrv_coupling * (mv - params.mv_reference) / params.mv_reference)
    gain = profile.rsa_gain * (1.0 - params.stress_rsa_drop * profile.stress_level) * coupling
    hr = profile.base_heart_rate + params.stress_hr_shift * profile.stress_level + gain * phase
    return hr.astype(np.float32)


def sdnn(heart_series) -> float:
    """Standard deviation of the rate series over the window (time-domain HRV)."""
    return float(np.std(np.asarray(heart_series, dtype=np.float64), ddof=1))


def _unit_rms(x: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.mean(x * x))
    return x / r if r > 0 else x


def artifact_components(n: int, fs_hz: float, rng) -> np.ndarray:
    """Three orthonormal (unit-RMS, mutually orthogonal) noise shapes.

    Rows are baseline wander, burst transients and white noise.
    """
    rng = _rng(rng)
    t = np.arange(n) / fs_hz
    wander = np.zeros(n)
    for _ in range(2):
        f = rng.uniform(0.02, 0.15)
        wander += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    bursts = np.zeros(n)
    for _ in range(1 + rng.poisson(2.0)):
        centre = rng.uniform(0, t[-1] if n > 1 else 1.0)
        width = rng.uniform(0.2, 1.0)
        bursts += rng.choice((-1.0, 1.0)) * rng.uniform(0.5, 1.0) * np.exp(-0.5 * ((t - centre) / width) ** 2)
    white = rng.standard_normal(n)
    basis = []
    for comp in (wander, bursts, white):
        for b in basis:
            comp = comp - (comp @ b) / (b @ b) * b
        basis.append(comp)
    return np.stack([_unit_rms(b) for b in basis])


def inject_artifacts(window: SignalWindow, artifact_level: int, rng=None,
                     fs_hz: float = 25.0, params: SynthParams = DEFAULT_PARAMS) -> SignalWindow:
    """Add wander + bursts + white noise scaled by ``artifact_level``.

    Level 0 returns the input unchanged.  For a fixed ``rng`` the noise
    shapes do not depend on the level, so contamination grows linearly with
    it.  ``mv_true`` is carried over untouched.
    """
    if artifact_level not in ARTIFACT_LEVELS:
        raise InputError(f"artifact_level must be one of {ARTIFACT_LEVELS}, got {artifact_level!r}")
    if artifact_level == 0:
        return dataclasses.replace(window, artifact_level=0)
    rng = _rng(rng)
    out = []
    for ch, (series, table) in enumerate(((window.resp_flow, params.flow_artifact_rms),
                                         (window.heart_series, params.heart_artifact_rms))):
        comps = artifact_components(series.size, fs_hz, rng)
        noise = artifact_level * (np.asarray(table, dtype=np.float64) @ comps)
        out.append((series.astype(np.float64) + noise).astype(np.float32))
    return dataclasses.replace(window, resp_flow=out[0], heart_series=out[1],
                               artifact_level=int(artifact_level))


# -- cohort ----------------------------------------------------------------------

def sample_profile(subject_id: int, sex: str, rng, params: SynthParams = DEFAULT_PARAMS) -> SubjectProfile:
    rng = _rng(rng)
    disorder = bool(rng.uniform() < params.disorder_fraction)
    lo, hi = (0.35, 0.60) if sex == FEMALE else (0.45, 0.75)
    vt = rng.uniform(lo, hi) * (0.85 if disorder else 1.0)
    rr = rng.uniform(10.0, 20.0) + (3.0 if disorder else 0.0)
    return SubjectProfile(
        subject_id=subject_id, sex=sex,
        age_years=int(rng.integers(params.age_min, params.age_max + 1)),
        has_disorder=disorder, base_tidal_volume=float(vt), base_resp_rate=float(rr),
        base_heart_rate=float(rng.uniform(60.0, 85.0)), rsa_gain=float(rng.uniform(2.0, 8.0)),
        stress_level=float(rng.uniform(0.0, 1.0)))


def synth_window(profile: SubjectProfile, window_id: int, manifest: DatasetManifest,
                 rng, params: SynthParams = DEFAULT_PARAMS, artifact_level: int | None = None) -> SignalWindow:
    """One window: per-window ventilation drift, clean channels, then artifacts."""
    rng = _rng(rng)
    vt = profile.base_tidal_volume * float(np.exp(params.window_vt_spread * rng.standard_normal()))
    rr = profile.base_resp_rate * float(np.exp(params.window_rr_spread * rng.standard_normal()))
    rr = float(np.clip(rr, 60.0 / manifest.window_seconds, 15.0 * manifest.fs_hz))
    level = int(rng.integers(0, 4)) if artifact_level is None else artifact_level
    w_profile = dataclasses.replace(profile, base_tidal_volume=vt, base_resp_rate=rr)
    s_flow, s_heart, s_art = rng.spawn(3)
    flow, mv = synth_breath_waveform(w_profile, manifest.window_seconds, manifest.fs_hz, s_flow,
                                     jitter=params.breath_jitter)
    heart = synth_heart_series(w_profile, flow, s_heart, manifest.fs_hz, params)
    clean = SignalWindow(profile.subject_id, window_id, flow, heart, 0, mv,
                         sex=profile.sex, age_years=profile.age_years)
    return inject_artifacts(clean, level, s_art, manifest.fs_hz, params)


@dataclass
class Dataset:
    manifest: DatasetManifest
    windows: list
    splits: dict  # split name -> sorted tuple of subject ids
    params: SynthParams = DEFAULT_PARAMS
    profiles: list = field(default_factory=list)

    SPLIT_NAMES = ("train", "val", "test")

    def subset(self, name: str) -> list:
        ids = set(self.splits[name])
        return [w for w in self.windows if w.subject_id in ids]

    def arrays(self, name: str | None = None):
        """``(X[N, 2, L] float32, y[N] float32, levels[N], subject_ids[N])``."""
        ws = self.windows if name is None else self.subset(name)
        return windows_to_arrays(ws)


def windows_to_arrays(windows):
    if not windows:
        return (np.zeros((0, 2, 0), np.float32), np.zeros(0, np.float32),
                np.zeros(0, np.int64), np.zeros(0, np.int64))
    x = np.stack([w.channels() for w in windows]).astype(np.float32)
    y = np.array([w.mv_true for w in windows], dtype=np.float32)
    levels = np.array([w.artifact_level for w in windows], dtype=np.int64)
    sids = np.array([w.subject_id for w in windows], dtype=np.int64)
    return x, y, levels, sids


def split_subjects(subject_ids, fractions, rng) -> dict:
    ids = np.array(sorted(subject_ids))
    perm = _rng(rng).permutation(ids)
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if fractions[2] > 0 and n_train + n_val >= n and n >= 3:
        n_train = min(n_train, n - 1 - (n_val > 0))
    n_val = min(n_val, n - n_train)
    parts = perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
    return {name: tuple(sorted(int(i) for i in part)) for name, part in zip(Dataset.SPLIT_NAMES, parts)}


def build_dataset(manifest: DatasetManifest = DatasetManifest(),
                  params: SynthParams = DEFAULT_PARAMS) -> Dataset:
    """Generate the full cohort; pure in ``(manifest, params)``.

    Every subject draws from its own stream seeded by ``(rng_seed, subject_id)``
    so subjects could be generated in any order or in parallel.
    """
    manifest.validate()
    root = np.random.default_rng(np.random.SeedSequence([manifest.rng_seed, 0xC0407]))
    sexes = np.array([FEMALE] * manifest.n_female + [MALE] * manifest.n_male)
    sexes = root.permutation(sexes)
    profiles, windows = [], []
    for sid in range(manifest.n_subjects):
        srng = np.random.default_rng(np.random.SeedSequence([manifest.rng_seed, sid]))
        profile = sample_profile(sid, str(sexes[sid]), srng, params)
        profiles.append(profile)
        for wid, wrng in enumerate(srng.spawn(manifest.windows_per_subject)):
            windows.append(synth_window(profile, wid, manifest, wrng, params))
    splits = split_subjects(range(manifest.n_subjects), manifest.split, root)
    return Dataset(manifest, windows, splits, params, profiles)


# -- binary dataset file ---------------------------------------------------------

MAGIC = b"VNTD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIfIH")
_RECORD_HEAD = struct.Struct("<IIBBHf")


def _sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def encode_dataset(windows, fs_hz: float) -> bytes:
    if windows:
        window_len = windows[0].resp_flow.size
    else:
        window_len = 0
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(windows), fs_hz, window_len, len(CHANNELS))]
    for w in windows:
        if w.resp_flow.size != window_len or w.heart_series.size != window_len:
            raise InputError(f"window {w.key} has length {w.resp_flow.size}, expected {window_len}")
        parts.append(_RECORD_HEAD.pack(w.subject_id, w.window_id, w.artifact_level,
                                       SEX_CODES[w.sex], w.age_years, w.mv_true))
        parts.append(np.asarray(w.resp_flow, dtype="<f4").tobytes())
        parts.append(np.asarray(w.heart_series, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_dataset(blob: bytes):
    """Inverse of :func:`encode_dataset`; returns ``(windows, fs_hz)``."""
    if len(blob) < _HEADER.size:
        if blob[:4] != MAGIC[:len(blob[:4])]:
            raise HeaderError("not a VNTD dataset file (bad magic)")
        raise TruncatedError("file ends inside the header", len(blob))
    magic, version, n_windows, fs_hz, window_len, n_channels = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise HeaderError(f"not a VNTD dataset file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported dataset format version {version}")
    if n_channels != len(CHANNELS):
        raise HeaderError(f"expected {len(CHANNELS)} channels, header says {n_channels}")
    rec_size = _RECORD_HEAD.size + 4 * n_channels * window_len
    expected = _HEADER.size + n_windows * rec_size + 4
    if len(blob) < expected:
        body_len = max(len(blob) - _HEADER.size, 0)
        rec = body_len // rec_size if rec_size else 0
        offset = _HEADER.size + rec * rec_size
        if rec >= n_windows:
            raise TruncatedError("file ends inside the CRC32 trailer", len(blob))
        raise TruncatedError(f"file ends inside record {rec} of {n_windows}", offset)
    if len(blob) > expected:
        raise HeaderError(f"{len(blob) - expected} unexpected trailing bytes after CRC32 trailer")
    (stored,) = struct.unpack_from("<I", blob, expected - 4)
    actual = zlib.crc32(blob[:expected - 4])
    if stored != actual:
        raise ChecksumError(f"CRC32 mismatch: stored {stored:#010x}, computed {actual:#010x}")
    if not fs_hz > 0:
        raise HeaderError(f"non-positive sample rate {fs_hz}")
    windows = []
    off = _HEADER.size
    for _ in range(n_windows):
        sid, wid, level, sex, age, mv = _RECORD_HEAD.unpack_from(blob, off)
        off += _RECORD_HEAD.size
        chans = np.frombuffer(blob, dtype="<f4", count=n_channels * window_len, offset=off)
        chans = chans.astype(np.float32).reshape(n_channels, window_len)
        off += 4 * n_channels * window_len
        if level not in ARTIFACT_LEVELS or sex not in SEX_NAMES:
            raise HeaderError(f"record ({sid}, {wid}) has invalid level/sex codes")
        windows.append(SignalWindow(sid, wid, chans[0].copy(), chans[1].copy(), level,
                                    float(np.float32(mv)), sex=SEX_NAMES[sex], age_years=age))
    return windows, float(fs_hz)


def _manifest_lines(dataset: Dataset):
    m, p = dataset.manifest, dataset.params
    pairs = [(f"manifest.{f.name}", getattr(m, f.name))
             for f in dataclasses.fields(m) if f.name != "split"]
    pairs.append(("manifest.split", ",".join(repr(float(s)) for s in m.split)))
    for f in dataclasses.fields(p):
        v = getattr(p, f.name)
        pairs.append((f"params.{f.name}", ",".join(repr(float(x)) for x in v) if isinstance(v, tuple) else repr(v)))
    for name, ids in dataset.splits.items():
        pairs.append((f"split.{name}", ",".join(str(i) for i in ids)))
    return pairs


def export_dataset(dataset: Dataset, path) -> Path:
    """Write the binary file and its ``.manifest`` sidecar, both atomically."""
    path = Path(path)
    atomic_write_bytes(path, encode_dataset(dataset.windows, dataset.manifest.fs_hz))
    atomic_write_text(_sidecar_path(path), format_kv(_manifest_lines(dataset)))
    return path


def _parse_field(f, raw: str):
    if f.type in ("int", int):
        return int(raw)
    if f.type in ("float", float):
        return float(raw)
    if f.type in ("bool", bool):
        return raw == "True"
    if f.type in ("tuple", tuple):
        return tuple(float(x) for x in raw.split(",") if x)
    return raw


def import_dataset(path) -> Dataset:
    """Read a dataset file (and its sidecar, when present)."""
    path = Path(path)
    blob = path.read_bytes()
    windows, fs_hz = decode_dataset(blob)
    sidecar = _sidecar_path(path)
    manifest, params, splits = None, DEFAULT_PARAMS, {}
    if sidecar.exists():
        kv = parse_kv(sidecar.read_text(), str(sidecar))
        mvals = {f.name: _parse_field(f, kv[f"manifest.{f.name}"])
                 for f in dataclasses.fields(DatasetManifest) if f"manifest.{f.name}" in kv}
        manifest = DatasetManifest(**mvals)
        pvals = {f.name: _parse_field(f, kv[f"params.{f.name}"])
                 for f in dataclasses.fields(SynthParams) if f"params.{f.name}" in kv}
        params = SynthParams(**pvals)
        for name in Dataset.SPLIT_NAMES:
            raw = kv.get(f"split.{name}", "")
            splits[name] = tuple(int(x) for x in raw.split(",") if x)
        if manifest.fs_hz != fs_hz:
            raise HeaderError(f"sidecar fs_hz {manifest.fs_hz} != file fs_hz {fs_hz}")
    else:
        n_sub = len({w.subject_id for w in windows})
        length = windows[0].resp_flow.size if windows else 0
        manifest = DatasetManifest(n_subjects=n_sub, n_female=n_sub, n_male=0,
                                   windows_per_subject=max(1, len(windows) // max(n_sub, 1)),
                                   fs_hz=fs_hz, window_seconds=length / fs_hz if fs_hz else 0.0)
        splits = {"train": tuple(sorted({w.subject_id for w in windows})), "val": (), "test": ()}
    return Dataset(manifest, windows, splits, params)
