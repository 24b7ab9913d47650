"""Baseband I/Q signals: OFDM generation, dataset I/O, splitting, features.

Every other module consumes the data layout defined here: complex baseband
samples at a known rate, and the per-sample real feature vector
[I, Q, |x|, |x|^3] that feeds the recurrent models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

QAM_ORDERS = (4, 16, 64, 256, 1024)

# One FFT frame per OFDM symbol; cyclic prefix is 1/8 of the frame.
OFDM_FFT_SIZE = 1024
OFDM_CP_LEN = OFDM_FFT_SIZE // 8
OFDM_SYMBOL_LEN = OFDM_FFT_SIZE + OFDM_CP_LEN


class BandPlanError(ValueError):
    """Requested channel plan does not fit the sample rate."""


class DatasetFormatError(ValueError):
    """Dataset file violates the expected CSV layout."""


@dataclass(frozen=True)
class IQSignal:
    """A finite sequence of complex baseband samples with a sample rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("IQSignal needs a non-empty 1-D sample array")
        if not (self.sample_rate_hz > 0):
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def papr_db(self) -> float:
        return 10.0 * math.log10(self.peak() ** 2 / self.mean_power())


@dataclass(frozen=True)
class OfdmConfig:
    """Multi-channel OFDM plan: contiguous channels on a grid centered at DC."""

    n_channels: int
    channel_bw_hz: float
    qam_order: int
    n_symbols: int
    seed: int

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not (self.channel_bw_hz > 0):
            raise ValueError("channel_bw_hz must be positive")
        if self.qam_order not in QAM_ORDERS:
            raise ValueError(f"qam_order must be one of {QAM_ORDERS}")
        if self.n_symbols < 1:
            raise ValueError("n_symbols must be >= 1")

    def validate_band(self, sample_rate_hz: float) -> None:
        if self.n_channels * self.channel_bw_hz > sample_rate_hz / 2:
            raise BandPlanError(
                f"{self.n_channels} x {self.channel_bw_hz/1e6:.1f} MHz channels "
                f"exceed half the {sample_rate_hz/1e6:.1f} MHz sample rate"
            )


@dataclass(frozen=True)
class OfdmLayout:
    """Resolved subcarrier plan for a config at a concrete sample rate."""

    center_bins: np.ndarray     # one FFT bin index per channel
    active_offsets: np.ndarray  # symmetric odd set of bin offsets per channel
    n_fft: int = OFDM_FFT_SIZE
    cp_len: int = OFDM_CP_LEN

    @property
    def n_active(self) -> int:
        return self.active_offsets.size

    @property
    def symbol_len(self) -> int:
        return self.n_fft + self.cp_len


def resolve_layout(cfg: OfdmConfig, sample_rate_hz: float) -> OfdmLayout:
    cfg.validate_band(sample_rate_hz)
    df = sample_rate_hz / OFDM_FFT_SIZE
    # Leave at least one empty bin of guard inside each channel edge so the
    # occupied band stays strictly within n_channels * channel_bw.
    n_active = int(math.floor(cfg.channel_bw_hz / df)) - 1
    if n_active % 2 == 0:
        n_active -= 1
    if n_active < 1:
        raise BandPlanError("channel_bw_hz too small for the FFT grid")
    half = (n_active - 1) // 2
    offsets = np.arange(-half, half + 1)
    centers_hz = (np.arange(cfg.n_channels) - (cfg.n_channels - 1) / 2.0) * cfg.channel_bw_hz
    center_bins = np.rint(centers_hz / df).astype(int)
    return OfdmLayout(center_bins=center_bins, active_offsets=offsets)


@dataclass(frozen=True)
class OfdmReference:
    """Transmitted QAM symbols retained for later demodulation/EVM."""

    cfg: OfdmConfig
    sample_rate_hz: float
    symbols: np.ndarray  # complex, shape (n_symbols, n_channels, n_active)

    @property
    def layout(self) -> OfdmLayout:
        return resolve_layout(self.cfg, self.sample_rate_hz)


def _qam_alphabet(order: int) -> np.ndarray:
    """Square QAM constellation normalized to unit average power."""
    m = int(round(math.sqrt(order)))
    levels = 2 * np.arange(m) - (m - 1)
    grid = levels[:, None] + 1j * levels[None, :]
    points = grid.ravel()
    return points / math.sqrt(np.mean(np.abs(points) ** 2))


def _modulate(symbols: np.ndarray, layout: OfdmLayout) -> np.ndarray:
    """Rebuild the time-domain waveform (unnormalized) from QAM symbols."""
    n_sym = symbols.shape[0]
    spectrum = np.zeros((n_sym, layout.n_fft), dtype=np.complex128)
    for ch, center in enumerate(layout.center_bins):
        bins = (center + layout.active_offsets) % layout.n_fft
        spectrum[:, bins] = symbols[:, ch, :]
    body = np.fft.ifft(spectrum, axis=1)
    with_cp = np.concatenate([body[:, -layout.cp_len:], body], axis=1)
    return with_cp.ravel()


def generate_ofdm(cfg: OfdmConfig, sample_rate_hz: float) -> tuple[IQSignal, OfdmReference]:
    """Generate a seeded multi-channel OFDM waveform, peak-normalized to 1.0.

    Returns the signal together with the transmitted per-channel QAM symbols
    so a receiver can measure EVM later.
    """
    layout = resolve_layout(cfg, sample_rate_hz)
    rng = np.random.default_rng(cfg.seed)
    alphabet = _qam_alphabet(cfg.qam_order)
    idx = rng.integers(0, alphabet.size, size=(cfg.n_symbols, cfg.n_channels, layout.n_active))
    symbols = alphabet[idx]
    wave = _modulate(symbols, layout)
    wave = wave / np.max(np.abs(wave))
    return (
        IQSignal(wave, sample_rate_hz),
        OfdmReference(cfg=cfg, sample_rate_hz=sample_rate_hz, symbols=symbols),
    )


def extract_features(x) -> np.ndarray:
    """Per-sample feature vector [I, Q, |x|, |x|^3], full precision.

    Accepts a scalar or an array of complex samples; returns shape (..., 4).
    """
    arr = np.asarray(x, dtype=np.complex128)
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature extraction requires finite samples")
    amp = np.abs(arr)
    feats = np.stack([arr.real, arr.imag, amp, amp**3], axis=-1)
    return feats


def features_backward(x, grad_features: np.ndarray) -> np.ndarray:
    """Adjoint of extract_features: map feature gradients to (I, Q) gradients.

    Needed when gradients must flow through the feature map inside a cascade.
    Returns shape (..., 2). The |x| terms use d|x|/dI = I/|x| (0 at x = 0).
    """
    arr = np.asarray(x, dtype=np.complex128)
    g = np.asarray(grad_features, dtype=np.float64)
    amp = np.abs(arr)
    safe = np.where(amp > 0, amp, 1.0)
    unit_i = np.where(amp > 0, arr.real / safe, 0.0)
    unit_q = np.where(amp > 0, arr.imag / safe, 0.0)
    # d(|x|^3)/dI = 3|x|^2 * I/|x| = 3|x| I
    gi = g[..., 0] + g[..., 2] * unit_i + g[..., 3] * 3.0 * amp * unit_i
    gq = g[..., 1] + g[..., 2] * unit_q + g[..., 3] * 3.0 * amp * unit_q
    return np.stack([gi, gq], axis=-1)


@dataclass(frozen=True)
class DatasetSplit:
    """Contiguous train/validation/test segments of a paired dataset."""

    train: tuple[IQSignal, IQSignal]
    validation: tuple[IQSignal, IQSignal]
    test: tuple[IQSignal, IQSignal]
    split_fractions: tuple[float, float, float]

    @property
    def test_offset(self) -> int:
        """Sample index where the test segment starts in the original signal."""
        return len(self.train[0]) + len(self.validation[0])


def split_lengths(n: int, fractions) -> tuple[int, int, int]:
    """floor(N*f) for train and validation; remainder goes to test."""
    f = tuple(float(v) for v in fractions)
    if len(f) != 3 or any(v <= 0 for v in f):
        raise ValueError("need three positive fractions")
    if abs(sum(f) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1.0")
    n_train = int(math.floor(n * f[0]))
    n_val = int(math.floor(n * f[1]))
    return n_train, n_val, n - n_train - n_val


def split_dataset(pair: tuple[IQSignal, IQSignal], fractions=(0.6, 0.2, 0.2)) -> DatasetSplit:
    """Split a paired signal into contiguous time-ordered segments."""
    x, y = pair
    if len(x) != len(y):
        raise ValueError("paired signals must have equal length")
    n_train, n_val, n_test = split_lengths(len(x), fractions)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("dataset too short for the requested split")
    fs = x.sample_rate_hz

    def seg(sig, a, b):
        return IQSignal(sig.samples[a:b], fs)

    a, b = n_train, n_train + n_val
    return DatasetSplit(
        train=(seg(x, 0, a), seg(y, 0, a)),
        validation=(seg(x, a, b), seg(y, a, b)),
        test=(seg(x, b, len(x)), seg(y, b, len(y))),
        split_fractions=tuple(float(v) for v in fractions),
    )


def normalize_pair(inp: IQSignal, out: IQSignal) -> tuple[IQSignal, IQSignal, tuple[float, float]]:
    """Scale each signal to unit peak amplitude; return the applied scales."""
    s_in, s_out = inp.peak(), out.peak()
    if s_in == 0 or s_out == 0:
        raise ValueError("cannot normalize an all-zero signal")
    return (
        IQSignal(inp.samples / s_in, inp.sample_rate_hz),
        IQSignal(out.samples / s_out, out.sample_rate_hz),
        (s_in, s_out),
    )


DATASET_HEADER = "I_in,Q_in,I_out,Q_out"


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_dataset(path, inp: IQSignal, out: IQSignal | None = None) -> None:
    """Write the dataset CSV plus a sidecar JSON carrying the sample rate."""
    path = Path(path)
    lines = [DATASET_HEADER]
    xi, xq = inp.samples.real, inp.samples.imag
    if out is None:
        for i in range(len(inp)):
            lines.append(f"{xi[i]!r},{xq[i]!r},,")
    else:
        if len(out) != len(inp):
            raise ValueError("paired signals must have equal length")
        yi, yq = out.samples.real, out.samples.imag
        for i in range(len(inp)):
            lines.append(f"{xi[i]!r},{xq[i]!r},{yi[i]!r},{yq[i]!r}")
    path.write_text("\n".join(lines) + "\n")
    _sidecar_path(path).write_text(
        json.dumps({"sample_rate_hz": inp.sample_rate_hz}, indent=2) + "\n"
    )


def load_dataset(path, sample_rate_hz: float | None = None):
    """Load a dataset CSV; returns (input, output-or-None, sample_rate_hz).

    The sample rate comes from the sidecar JSON unless given explicitly.
    Parse failures report the offending line number.
    """
    path = Path(path)
    if sample_rate_hz is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise DatasetFormatError(f"no sample rate given and no sidecar {sidecar}")
        sample_rate_hz = float(json.loads(sidecar.read_text())["sample_rate_hz"])

    text = path.read_text().splitlines()
    if not text or text[0].strip() != DATASET_HEADER:
        raise DatasetFormatError(f"{path}:1: expected header '{DATASET_HEADER}'")
    xs, ys = [], []
    has_output = None
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise DatasetFormatError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        empty_out = fields[2].strip() == "" and fields[3].strip() == ""
        if has_output is None:
            has_output = not empty_out
        elif has_output == empty_out:
            raise DatasetFormatError(f"{path}:{lineno}: mixed rows with and without outputs")
        try:
            xs.append(complex(float(fields[0]), float(fields[1])))
            if not empty_out:
                ys.append(complex(float(fields[2]), float(fields[3])))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    if not xs:
        raise DatasetFormatError(f"{path}: no data rows")
    inp = IQSignal(np.array(xs), sample_rate_hz)
    out = IQSignal(np.array(ys), sample_rate_hz) if has_output else None
    return inp, out, sample_rate_hz
