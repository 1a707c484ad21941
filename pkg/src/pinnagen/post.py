"""Post-processing of simulated transfer-function sets.

A set is a complex ``(n_f, n_d)`` matrix over ascending, uniformly spaced
frequencies. Processing pads the 0 Hz bin, derives the common transfer
function (CTF) as the minimum-phase spectrum of the direction-weighted mean
log-magnitude, and divides it out (diffuse-field equalization).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLOOR_DB = -300.0
_FLOOR = 10.0 ** (FLOOR_DB / 20.0)


@dataclass
class PrtfSet:
    values: np.ndarray
    frequencies: np.ndarray
    dc_padded: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.frequencies):
            raise ValueError("values must be (n_f, n_d) with one row per frequency")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite transfer-function values")
        if len(self.frequencies) > 1 and np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must be strictly ascending")

    @property
    def n_frequencies(self) -> int:
        return self.values.shape[0]

    @property
    def n_directions(self) -> int:
        return self.values.shape[1]


@dataclass
class Ctf:
    values: np.ndarray
    log_magnitude: np.ndarray


def _step(frequencies: np.ndarray) -> float:
    if len(frequencies) > 1:
        steps = np.diff(frequencies)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValueError("frequencies must be uniformly spaced")
        return float(steps[0])
    return float(frequencies[0])


def dc_pad(raw: PrtfSet) -> PrtfSet:
    """Prepend a 0 Hz row equal to the first (lowest-frequency) row."""
    if raw.dc_padded or raw.frequencies[0] == 0:
        raise ValueError("set already contains a 0 Hz bin")
    step = _step(raw.frequencies)
    if not np.isclose(raw.frequencies[0], step, rtol=1e-9):
        raise ValueError(f"first bin {raw.frequencies[0]} Hz is not one step ({step} Hz) above 0 Hz")
    values = np.vstack([raw.values[:1], raw.values])
    return PrtfSet(values, np.concatenate([[0.0], raw.frequencies]), True, dict(raw.meta))


def _db(values: np.ndarray) -> np.ndarray:
    return 20.0 * np.log10(np.maximum(np.abs(values), _FLOOR))


def log_magnitude(prtf: PrtfSet | np.ndarray) -> np.ndarray:
    """Element-wise 20 log10 |p|; zero entries are an error naming the bin."""
    values = prtf.values if isinstance(prtf, PrtfSet) else np.asarray(prtf)
    zero = np.argwhere(np.abs(values) == 0)
    if len(zero):
        raise ValueError(f"zero magnitude at bin {tuple(int(i) for i in zero[0])}")
    return _db(values)


def min_phase(log_magnitude_db: np.ndarray, pad_factor: int = 1) -> np.ndarray:
    """Minimum-phase spectrum with the given magnitude (dB) on bins 0..Nyquist.

    The half spectrum of ``n`` bins is embedded in a conjugate-symmetric
    spectrum of length ``2 (n - 1)``; ``pad_factor`` > 1 evaluates the cepstrum
    on a proportionally denser grid to reduce aliasing, then samples back.
    """
    mag_db = np.asarray(log_magnitude_db, dtype=float)
    if mag_db.ndim != 1 or len(mag_db) < 2:
        raise ValueError("need a 1-D half spectrum with at least 2 bins")
    if not np.all(np.isfinite(mag_db)):
        raise ValueError("non-finite log-magnitude")
    n_bins = len(mag_db)
    if pad_factor > 1:
        dense = np.linspace(0.0, 1.0, pad_factor * (n_bins - 1) + 1)
        mag_db_dense = np.interp(dense, np.linspace(0.0, 1.0, n_bins), mag_db)
        return min_phase(mag_db_dense)[::pad_factor]
    n_fft = 2 * (n_bins - 1)
    log_mag = mag_db * (np.log(10.0) / 20.0)
    cepstrum = np.fft.irfft(log_mag, n=n_fft)
    fold = np.zeros(n_fft)
    fold[0] = cepstrum[0]
    fold[1:n_fft // 2] = 2.0 * cepstrum[1:n_fft // 2]
    fold[n_fft // 2] = cepstrum[n_fft // 2]
    return np.exp(np.fft.rfft(fold))


def compute_ctf(prtf: PrtfSet, weights: np.ndarray, pad_factor: int = 1) -> Ctf:
    w = np.asarray(weights, dtype=float)
    if w.shape != (prtf.n_directions,):
        raise ValueError(f"expected {prtf.n_directions} weights, got {w.shape}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    mean_db = log_magnitude(prtf) @ w
    if prtf.frequencies[0] != 0:
        raise ValueError("CTF needs bins from 0 Hz to the top frequency; call dc_pad first")
    return Ctf(min_phase(mean_db, pad_factor), mean_db)


def equalize(prtf: PrtfSet, ctf: Ctf) -> PrtfSet:
    c = np.asarray(ctf.values, dtype=complex)
    if c.shape != (prtf.n_frequencies,):
        raise ValueError("CTF and set have different frequency bins")
    zero = np.flatnonzero(c == 0)
    if len(zero):
        raise ValueError(f"CTF is zero at bin {zero[0]}")
    return PrtfSet(prtf.values / c[:, None], prtf.frequencies, prtf.dc_padded, dict(prtf.meta))


def diffuse_field_equalize(raw: PrtfSet, weights: np.ndarray, pad_factor: int = 1) -> tuple[PrtfSet, Ctf]:
    padded = raw if raw.dc_padded else dc_pad(raw)
    ctf = compute_ctf(padded, weights, pad_factor)
    return equalize(padded, ctf), ctf


def impulse_response(spectrum: np.ndarray) -> np.ndarray:
    """Real impulse response of a half spectrum (bins 0..Nyquist)."""
    spectrum = np.asarray(spectrum)
    return np.fft.irfft(spectrum, n=2 * (len(spectrum) - 1))


def anticausal_energy_ratio(spectrum: np.ndarray) -> float:
    """Energy of the second half of the impulse response over the total."""
    h = impulse_response(spectrum)
    half = len(h) // 2
    total = float(np.sum(h * h))
    return float(np.sum(h[half + 1:] ** 2)) / total if total > 0 else 0.0
