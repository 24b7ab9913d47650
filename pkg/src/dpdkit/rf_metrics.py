"""Linearization quality metrics: Welch PSD, ACPR, OFDM EVM, NMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .signals import IQSignal, OfdmReference, _modulate

# Values clamped here mean "below the numerical floor", not a real level.
FLOOR_DB = -200.0


class AlignmentError(ValueError):
    """Received signal could not be aligned to the reference frame grid."""


@dataclass(frozen=True)
class ChannelPlan:
    """Main band plus its two flanking adjacent bands, all equal width (Hz)."""

    main_band_hz: tuple[float, float]
    adjacent_left_hz: tuple[float, float]
    adjacent_right_hz: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.main_band_hz
        ll, lh = self.adjacent_left_hz
        rl, rh = self.adjacent_right_hz
        width = hi - lo
        if width <= 0:
            raise ValueError("main band must have positive width")
        for name, (a, b) in (("left", (ll, lh)), ("right", (rl, rh))):
            if abs((b - a) - width) > 1e-6 * width:
                raise ValueError(f"{name} adjacent band width must equal the main band width")
        if abs(lh - lo) > 1e-6 * width or abs(rl - hi) > 1e-6 * width:
            raise ValueError("adjacent bands must flank the main band contiguously")

    @classmethod
    def centered(cls, main_bw_hz: float) -> "ChannelPlan":
        """Symmetric plan: main band (-bw/2, +bw/2) with contiguous neighbors."""
        h = main_bw_hz / 2.0
        return cls((-h, h), (-3 * h, -h), (h, 3 * h))


# Default plan for the 4 x 40 MHz signal sampled at 640 MHz.
DEFAULT_PLAN_160MHZ = ChannelPlan.centered(160e6)


@dataclass(frozen=True)
class Psd:
    """Averaged periodogram: per-bin power (linear), fftshifted frequencies."""

    freq_hz: np.ndarray
    power: np.ndarray

    def total_power(self) -> float:
        return float(np.sum(self.power))

    def power_db(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.power, 1e-30))


def compute_psd(x: IQSignal, segment_length: int = 4096, overlap: float = 0.5) -> Psd:
    """Hann-windowed averaged periodogram, normalized so that a constant-
    modulus signal satisfies Parseval exactly (sum of bins = mean power)."""
    n = segment_length
    if len(x) < n:
        raise ValueError(f"signal shorter than segment_length={n}")
    if not (0 <= overlap < 1):
        raise ValueError("overlap must be in [0, 1)")
    hop = max(1, int(round(n * (1.0 - overlap))))
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)  # periodic Hann
    win_power = float(np.sum(win**2))
    samples = x.samples
    n_segs = (len(x) - n) // hop + 1
    acc = np.zeros(n)
    for k in range(n_segs):
        seg = samples[k * hop : k * hop + n]
        spec = np.fft.fft(seg * win)
        acc += np.abs(spec) ** 2
    power = acc / (n_segs * n * win_power)
    freqs = np.fft.fftshift(np.fft.fftfreq(n, d=1.0 / x.sample_rate_hz))
    return Psd(freq_hz=freqs, power=np.fft.fftshift(power))


def band_power(psd: Psd, band_hz: tuple[float, float]) -> float:
    lo, hi = band_hz
    mask = (psd.freq_hz >= lo) & (psd.freq_hz < hi)
    return float(np.sum(psd.power[mask]))


def compute_acpr(psd: Psd, plan: ChannelPlan) -> tuple[float, float]:
    """Adjacent-to-main channel power ratio in dBc, (left, right).

    A side with zero adjacent power is clamped to FLOOR_DB (floor-limited).
    """
    nyq = np.max(np.abs(psd.freq_hz))
    for a, b in (plan.adjacent_left_hz, plan.adjacent_right_hz, plan.main_band_hz):
        if min(a, b) < -nyq - 1e-9 or max(a, b) > nyq * 1.001 + 1e-9:
            raise ValueError("channel plan exceeds the Nyquist span of the PSD")
    p_main = band_power(psd, plan.main_band_hz)
    if p_main <= 0:
        raise ValueError("zero main-band power")

    def ratio_db(p_adj: float) -> float:
        if p_adj <= 0:
            return FLOOR_DB
        return max(10.0 * math.log10(p_adj / p_main), FLOOR_DB)

    return (
        ratio_db(band_power(psd, plan.adjacent_left_hz)),
        ratio_db(band_power(psd, plan.adjacent_right_hz)),
    )


def compute_nmse(y: IQSignal, ref: IQSignal) -> float:
    """10*log10(sum|y-ref|^2 / sum|ref|^2), clamped at FLOOR_DB."""
    if len(y) != len(ref):
        raise ValueError("signals must have equal length")
    denom = float(np.sum(np.abs(ref.samples) ** 2))
    if denom == 0:
        raise ValueError("reference signal has zero power")
    num = float(np.sum(np.abs(y.samples - ref.samples) ** 2))
    if num == 0:
        return FLOOR_DB
    return max(10.0 * math.log10(num / denom), FLOOR_DB)


@dataclass(frozen=True)
class EvmResult:
    evm_db: float
    lag: int
    # Rows of (channel, equalized re, im, reference re, im) for plotting.
    constellation: np.ndarray
    eq_taps: np.ndarray


def _align(received: np.ndarray, reference: np.ndarray, threshold: float) -> int:
    """Find the lag of `received` inside `reference` by cross-correlation."""
    n_ref, n_rx = reference.size, received.size
    if n_rx > n_ref:
        raise AlignmentError("received signal longer than the reference frame")
    size = 1 << int(np.ceil(np.log2(n_ref + n_rx)))
    corr = np.fft.ifft(np.fft.fft(reference, size) * np.conj(np.fft.fft(received, size)))
    corr = corr[: n_ref - n_rx + 1]
    ref_energy = np.concatenate([[0.0], np.cumsum(np.abs(reference) ** 2)])
    seg_energy = ref_energy[n_rx:] - ref_energy[: n_ref - n_rx + 1]
    denom = np.sqrt(np.maximum(seg_energy, 1e-30) * np.sum(np.abs(received) ** 2))
    score = np.abs(corr) / denom
    lag = int(np.argmax(score))
    if score[lag] < threshold:
        raise AlignmentError(f"correlation peak {score[lag]:.3f} below threshold {threshold}")
    return lag


def compute_evm(received: IQSignal, reference: OfdmReference, align_threshold: float = 0.5) -> EvmResult:
    """Demodulate the received OFDM waveform and measure EVM in dB.

    Aligns against the remodulated reference, strips cyclic prefixes, FFTs
    each symbol, applies one least-squares complex equalizer tap per channel,
    and compares against the transmitted QAM symbols.
    """
    if abs(received.sample_rate_hz - reference.sample_rate_hz) > 1e-6:
        raise ValueError("sample rate mismatch between received signal and reference")
    layout = reference.layout
    ref_wave = _modulate(reference.symbols, layout)
    lag = _align(received.samples, ref_wave, align_threshold)

    sym_len = layout.symbol_len
    first_sym = (lag + sym_len - 1) // sym_len
    last_sym = (lag + len(received)) // sym_len  # exclusive
    if last_sym <= first_sym:
        raise AlignmentError("received span covers no complete OFDM symbol")

    n_ch = reference.cfg.n_channels
    rx_bins = np.empty((last_sym - first_sym, n_ch, layout.n_active), dtype=np.complex128)
    for i, s in enumerate(range(first_sym, last_sym)):
        start = s * sym_len - lag + layout.cp_len
        spec = np.fft.fft(received.samples[start : start + layout.n_fft])
        for ch, center in enumerate(layout.center_bins):
            bins = (center + layout.active_offsets) % layout.n_fft
            rx_bins[i, ch, :] = spec[bins]

    tx_bins = reference.symbols[first_sym:last_sym]
    # ifft in the modulator carries 1/n_fft; undo so the tap stays near unity.
    rx_bins *= 1.0 / layout.n_fft

    taps = np.empty(n_ch, dtype=np.complex128)
    rows = []
    err_power = 0.0
    ref_power = 0.0
    for ch in range(n_ch):
        y = rx_bins[:, ch, :].ravel()
        s = tx_bins[:, ch, :].ravel()
        taps[ch] = np.vdot(y, s) / np.vdot(y, y)
        eq = taps[ch] * y
        err_power += float(np.sum(np.abs(eq - s) ** 2))
        ref_power += float(np.sum(np.abs(s) ** 2))
        rows.append(
            np.column_stack([np.full(y.size, ch, dtype=float), eq.real, eq.imag, s.real, s.imag])
        )
    evm = FLOOR_DB if err_power == 0 else max(10.0 * math.log10(err_power / ref_power), FLOOR_DB)
    return EvmResult(evm_db=evm, lag=lag, constellation=np.concatenate(rows), eq_taps=taps)


@dataclass(frozen=True)
class MetricsReport:
    """ACPR/EVM/NMSE summary for one received signal."""

    acpr_left_dbc: float
    acpr_right_dbc: float
    evm_db: float
    nmse_db: float
    psd: Psd
    floor_limited: bool = False

    def lines(self) -> list[str]:
        tag = "  [floor-limited]" if self.floor_limited else ""
        return [
            f"ACPR left  : {self.acpr_left_dbc:8.2f} dBc{tag}",
            f"ACPR right : {self.acpr_right_dbc:8.2f} dBc{tag}",
            f"EVM        : {self.evm_db:8.2f} dB",
            f"NMSE       : {self.nmse_db:8.2f} dB",
        ]


def measure(
    received: IQSignal,
    plan: ChannelPlan,
    reference: OfdmReference | None = None,
    nmse_ref: IQSignal | None = None,
    segment_length: int = 4096,
) -> MetricsReport:
    """One-stop metric computation used by evaluation and the CLI."""
    psd = compute_psd(received, segment_length=segment_length)
    left, right = compute_acpr(psd, plan)
    evm = math.nan
    if reference is not None:
        evm = compute_evm(received, reference).evm_db
    nmse = math.nan
    if nmse_ref is not None:
        nmse = compute_nmse(received, nmse_ref)
    floor = left <= FLOOR_DB or right <= FLOOR_DB
    return MetricsReport(
        acpr_left_dbc=left,
        acpr_right_dbc=right,
        evm_db=evm,
        nmse_db=nmse,
        psd=psd,
        floor_limited=floor,
    )
