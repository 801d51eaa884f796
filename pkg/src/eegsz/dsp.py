"""Band-pass filtering, band decomposition, z-scoring and Welch PSD features."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import DegenerateChannelError, ParameterError, ShapeError
from .ingest import Segment

DEFAULT_ORDER = 4
BROADBAND = (4.0, 45.0)


@dataclass(frozen=True)
class BandDef:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not 0 < self.lo_hz < self.hi_hz:
            raise ParameterError(f"band {self.name!r}: need 0 < lo < hi, got "
                                 f"{self.lo_hz}-{self.hi_hz}")

    def check_rate(self, fs_hz):
        if self.hi_hz >= fs_hz / 2:
            raise ParameterError(f"band {self.name!r} upper edge {self.hi_hz} Hz is not "
                                 f"below Nyquist ({fs_hz / 2} Hz)")


BANDS = {
    "theta": BandDef("theta", 4.0, 8.0),
    "alpha": BandDef("alpha", 8.0, 15.0),
    "beta": BandDef("beta", 15.0, 32.0),
    "gamma": BandDef("gamma", 32.0, 45.0),
    "all": BandDef("all", 4.0, 45.0),
}
BAND_ORDER = ("theta", "alpha", "beta", "gamma", "all")


def get_band(name):
    try:
        return BANDS[name]
    except KeyError:
        raise ParameterError(f"unknown band {name!r}; choose from {', '.join(BAND_ORDER)}") \
            from None


@dataclass(frozen=True, eq=False)
class FilterSpec:
    """Butterworth band-pass as a cascade of biquads.

    ``sections`` rows are ``[b0, b1, b2, 1, a1, a2]``.
    """

    order: int
    lo_hz: float
    hi_hz: float
    fs_hz: float
    sections: np.ndarray

    def response(self, freqs_hz):
        """Complex cascade response at the given frequencies."""
        z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=float) / self.fs_hz)
        h = np.ones_like(z)
        for b0, b1, b2, _, a1, a2 in self.sections:
            h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
        return h

    def poles(self):
        return np.concatenate([np.roots(s[3:]) for s in self.sections])


def design_butterworth_bandpass(order: int, lo_hz: float, hi_hz: float,
                                fs_hz: float) -> FilterSpec:
    """Digital Butterworth band-pass of total order ``order`` (must be even).

    Analog low-pass prototype of order ``order // 2``, low-pass to band-pass
    transform around pre-warped edges, then the bilinear transform. The result
    is -3 dB at both edges.
    """
    if order <= 0 or order % 2:
        raise ParameterError(f"band-pass order must be a positive even integer, got {order}")
    if not 0 < lo_hz < hi_hz:
        raise ParameterError(f"need 0 < lo < hi, got lo={lo_hz}, hi={hi_hz}")
    if hi_hz >= fs_hz / 2:
        raise ParameterError(f"upper edge {hi_hz} Hz violates Nyquist ({fs_hz / 2} Hz)")

    n = order // 2
    k = np.arange(n)
    proto = np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))

    fs2 = 2.0 * fs_hz
    w1 = fs2 * np.tan(np.pi * lo_hz / fs_hz)
    w2 = fs2 * np.tan(np.pi * hi_hz / fs_hz)
    bw, w0 = w2 - w1, np.sqrt(w1 * w2)

    half = proto * bw / 2.0
    root = np.sqrt(half * half - w0 * w0)
    analog_poles = np.concatenate([half + root, half - root])
    gain = bw ** n  # n analog zeros at s = 0

    digital_poles = (fs2 + analog_poles) / (fs2 - analog_poles)
    # analog zeros at 0 map to z = +1; the n zeros at infinity map to z = -1
    gain = gain * np.real(fs2 ** n / np.prod(fs2 - analog_poles))

    upper = digital_poles[digital_poles.imag > 0]
    if upper.size != n:
        raise ParameterError("filter design produced real poles; edges too close to DC")
    upper = upper[np.argsort(np.abs(upper))]
    sections = np.zeros((n, 6))
    for i, p in enumerate(upper):
        sections[i] = [1.0, 0.0, -1.0, 1.0, -2.0 * p.real, abs(p) ** 2]
    sections[0, :3] *= gain
    return FilterSpec(order, float(lo_hz), float(hi_hz), float(fs_hz), sections)


def _pad_length(spec):
    return 3 * (3 * len(spec.sections))


def filtfilt(spec: FilterSpec, x: np.ndarray) -> np.ndarray:
    """Zero-phase forward-backward filtering along the last axis.

    The signal is extended at both ends by odd reflection and each pass starts
    from the steady-state section state scaled to the edge value. The
    forward-backward result is averaged with its backward-forward twin so the
    operator commutes exactly with time reversal.
    """
    x = np.asarray(x, dtype=np.float64)
    pad = _pad_length(spec)
    if x.shape[-1] <= pad:
        raise ShapeError(f"signal of length {x.shape[-1]} too short for zero-phase "
                         f"filtering; need more than {pad} samples")
    sos = spec.sections
    head = 2.0 * x[..., :1] - x[..., pad:0:-1]
    tail = 2.0 * x[..., -1:] - x[..., -2:-pad - 2:-1]
    ext = np.concatenate([head, x, tail], axis=-1)

    zi = signal.sosfilt_zi(sos)  # (sections, 2)
    shape = (len(sos),) + (1,) * (ext.ndim - 1) + (2,)
    zi = zi.reshape(shape)

    def run(y):
        z0 = zi * y[..., 0][None, ..., None]
        out, _ = signal.sosfilt(sos, y, axis=-1, zi=z0)
        return out

    fb = run(run(ext)[..., ::-1])[..., ::-1]
    bf = run(run(ext[..., ::-1])[..., ::-1])
    return 0.5 * (fb + bf)[..., pad:-pad]


def band_filter(data: np.ndarray, band: BandDef, fs_hz: float,
                order: int = DEFAULT_ORDER) -> np.ndarray:
    band.check_rate(fs_hz)
    return filtfilt(design_butterworth_bandpass(order, band.lo_hz, band.hi_hz, fs_hz), data)


def band_decompose(seg: Segment, bands, fs_hz: float, order: int = DEFAULT_ORDER) -> dict:
    """Filter every channel of ``seg`` into each band; shapes are preserved."""
    out = {}
    for band in bands:
        if isinstance(band, str):
            band = get_band(band)
        out[band.name] = seg.replace_data(band_filter(seg.data, band, fs_hz, order))
    return out


def zscore(seg, channel_names=None):
    """Per-channel standardization with population (divide-by-N) deviation.

    Accepts a :class:`Segment` or a ``[channels x T]`` array and returns the
    same kind.
    """
    data = seg.data if isinstance(seg, Segment) else np.asarray(seg, dtype=np.float64)
    mean = data.mean(axis=-1, keepdims=True)
    centered = data - mean
    std = np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True))
    scale = np.maximum(np.abs(mean), 1.0)
    bad = np.flatnonzero(std.reshape(-1) <= 1e-12 * scale.reshape(-1))
    if bad.size:
        i = int(bad[0])
        name = channel_names[i] if channel_names is not None else f"index {i}"
        raise DegenerateChannelError(f"channel {name} is constant; cannot z-score")
    out = centered / std
    return seg.replace_data(out) if isinstance(seg, Segment) else out


@dataclass(frozen=True, eq=False)
class PsdFeature:
    """Per-channel log power spectral density (natural log of uV^2/Hz)."""

    freqs_hz: np.ndarray
    power: np.ndarray
    log_power: np.ndarray  # NaN where power is not positive
    band_mask: np.ndarray
    valid: np.ndarray

    def features(self):
        """Channel-major vector of in-band log-power bins."""
        return self.log_power[:, self.band_mask].reshape(-1)

    @property
    def masked_bins(self):
        return int(np.count_nonzero(~self.valid))


def welch_psd(seg, fs_hz: float, nfft: int = 256, window: str = "hann",
              overlap: float = 0.5, band=BROADBAND) -> PsdFeature:
    """Welch PSD with ``nfft``-sample blocks, one-sided, then natural log.

    ``window`` is ``"hann"`` (periodic Hann) or ``"boxcar"``. Non-positive
    power bins are reported through ``valid`` and left as NaN in
    ``log_power``.
    """
    data = seg.data if isinstance(seg, Segment) else np.asarray(seg, dtype=np.float64)
    data = np.atleast_2d(data)
    T = data.shape[-1]
    if T < nfft:
        raise ShapeError(f"segment length {T} shorter than nfft={nfft}")
    if not 0.0 <= overlap < 1.0:
        raise ParameterError(f"overlap must be in [0, 1), got {overlap}")
    if window == "hann":
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(nfft) / nfft)
    elif window == "boxcar":
        w = np.ones(nfft)
    else:
        raise ParameterError(f"unknown window {window!r}")
    step = max(int(round(nfft * (1.0 - overlap))), 1)
    n_blocks = (T - nfft) // step + 1
    blocks = np.lib.stride_tricks.sliding_window_view(data, nfft, axis=-1)[..., ::step, :]
    blocks = blocks[..., :n_blocks, :]
    spectra = np.fft.rfft(blocks * w, axis=-1)
    power = np.mean(spectra.real ** 2 + spectra.imag ** 2, axis=-2)
    power = power / (fs_hz * np.sum(w * w))
    if nfft % 2 == 0:
        power[..., 1:-1] *= 2.0
    else:
        power[..., 1:] *= 2.0
    freqs = np.arange(power.shape[-1]) * fs_hz / nfft
    valid = power > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_power = np.where(valid, np.log(np.where(valid, power, 1.0)), np.nan)
    lo, hi = band if band is not None else (0.0, np.inf)
    mask = (freqs >= lo) & (freqs <= hi)
    return PsdFeature(freqs, power, log_power, mask, valid)


def band_power(psd: PsdFeature, lo_hz: float, hi_hz: float) -> np.ndarray:
    """Per-channel power integrated over [lo, hi) by the rectangle rule."""
    df = psd.freqs_hz[1] - psd.freqs_hz[0]
    sel = (psd.freqs_hz >= lo_hz) & (psd.freqs_hz < hi_hz)
    return psd.power[..., sel].sum(axis=-1) * df


def psd_feature_matrix(data: np.ndarray, fs_hz: float, **kwargs):
    """Stack of :meth:`PsdFeature.features` for ``data`` shaped [N x C x T]."""
    return np.stack([welch_psd(x, fs_hz, **kwargs).features() for x in data])


def write_feature_csv(path, data: np.ndarray, fs_hz: float, channel_names,
                      labels=None, subjects=None, **kwargs):
    """One row per segment; columns are ``<channel>@<freq>Hz`` in channel-major order."""
    if len(data) == 0:
        raise ShapeError("no segments to dump")
    first = welch_psd(data[0], fs_hz, **kwargs)
    freqs = first.freqs_hz[first.band_mask]
    header = [f"{ch}@{f:.4f}Hz" for ch in channel_names for f in freqs]
    prefix = []
    if subjects is not None:
        prefix.append("subject_id")
    if labels is not None:
        prefix.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(prefix + header)
        for i, x in enumerate(data):
            row = []
            if subjects is not None:
                row.append(subjects[i])
            if labels is not None:
                row.append(int(labels[i]))
            row.extend(repr(float(v)) for v in welch_psd(x, fs_hz, **kwargs).features())
            writer.writerow(row)
