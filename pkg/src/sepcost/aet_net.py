"""End-to-end separation network with a learned analysis/synthesis transform.

Dataflow: a strided 1-D convolution bank turns the mixture waveform into
an adaptive time-frequency representation X; a nonnegative smoothing
kernel over |X| yields the modulation envelope M (an STFT-magnitude
analogue) and the carrier P = X / M keeps the rapid variation (a phase
analogue). Two softplus dense layers estimate the target's modulation
from M; the estimate re-modulates the mixture carrier and a transposed
convolution bank synthesizes the output waveform.

In shared mode the synthesis bank is storage-tied to the analysis bank:
conv1d_transpose applies filters as their transpose, so passing the same
tensor realizes W^T synthesis with no copy.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diff_engine as engine
from .diff_engine import Tensor, as_tensor, parameter
from .errors import ShapeError, SignalTooShort
from .signal_io import Waveform


@dataclass(frozen=True)
class NetConfig:
    components: int = 1024
    filter_len: int = 1024
    stride: int = 16
    smoothing_width: int = 5
    hidden_units: int | None = None  # defaults to components
    weight_sharing: str = "shared"  # "shared" | "independent"
    modulation_floor: float = 1e-8

    def __post_init__(self):
        if self.weight_sharing not in ("shared", "independent"):
            raise ValueError("weight_sharing must be 'shared' or 'independent'")
        if self.stride < 1 or self.filter_len < self.stride:
            raise ValueError("need filter_len >= stride >= 1")
        if self.smoothing_width < 1:
            raise ValueError("smoothing_width must be at least 1")

    @property
    def hidden(self) -> int:
        return self.hidden_units if self.hidden_units is not None else self.components


@dataclass
class AetRepresentation:
    """Adaptive transform X, modulation M (> 0), carrier P = X / M."""

    X: Tensor
    M: Tensor
    P: Tensor


class SeparatorParams:
    """Parameter tensors of the separation network.

    smoothing_raw is the unconstrained form of the smoothing kernel; the
    effective kernel is softplus(raw) renormalized to sum to one per
    component, which keeps it nonnegative under gradient updates.
    """

    def __init__(self, cfg: NetConfig, analysis, smoothing_raw, w1, b1, w2, b2, synthesis=None):
        self.cfg = cfg
        self.analysis = analysis
        self.smoothing_raw = smoothing_raw
        self.w1 = w1
        self.b1 = b1
        self.w2 = w2
        self.b2 = b2
        if cfg.weight_sharing == "shared":
            if synthesis is not None:
                raise ValueError("shared mode must not carry a separate synthesis bank")
            self._synthesis = None
        else:
            if synthesis is None:
                raise ValueError("independent mode needs a synthesis bank")
            self._synthesis = synthesis

    @property
    def synthesis_filters(self) -> Tensor:
        """Synthesis bank; in shared mode this is the analysis tensor itself."""
        return self.analysis if self._synthesis is None else self._synthesis

    def tensors(self) -> dict[str, Tensor]:
        """Named leaf tensors (the tied synthesis view is not duplicated)."""
        out = {
            "analysis": self.analysis,
            "smoothing_raw": self.smoothing_raw,
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
        }
        if self._synthesis is not None:
            out["synthesis"] = self._synthesis
        return out

    def smoothing_kernel(self) -> Tensor:
        positive = engine.softplus(self.smoothing_raw)
        return positive / engine.sum_(positive, axis=1, keepdims=True)


def init_params(seed: int, cfg: NetConfig = NetConfig()) -> SeparatorParams:
    """Deterministic uniform [-a, a] init with a = sqrt(6 / (fan_in + fan_out)).

    Biases start at zero; the smoothing kernel starts uniform (1/width
    after normalization).
    """
    rng = np.random.default_rng(seed)
    k, taps, hidden = cfg.components, cfg.filter_len, cfg.hidden
    bound_bank = np.sqrt(6.0 / (taps + k))
    analysis = parameter(rng.uniform(-bound_bank, bound_bank, size=(k, taps)))
    synthesis = None
    if cfg.weight_sharing == "independent":
        synthesis = parameter(rng.uniform(-bound_bank, bound_bank, size=(k, taps)))
    w1 = parameter(rng.uniform(-np.sqrt(6.0 / (k + hidden)), np.sqrt(6.0 / (k + hidden)), size=(hidden, k)))
    w2 = parameter(rng.uniform(-np.sqrt(6.0 / (hidden + k)), np.sqrt(6.0 / (hidden + k)), size=(k, hidden)))
    b1 = parameter(np.zeros((hidden, 1)))
    b2 = parameter(np.zeros((k, 1)))
    # softplus(log(e - 1)) = 1, so the normalized kernel is exactly uniform
    smoothing_raw = parameter(np.full((k, cfg.smoothing_width), np.log(np.e - 1.0)))
    return SeparatorParams(cfg, analysis, smoothing_raw, w1, b1, w2, b2, synthesis)


def num_frames(n_samples: int, cfg: NetConfig) -> int:
    return (n_samples - cfg.filter_len) // cfg.stride + 1


def analysis_forward(w, params: SeparatorParams) -> AetRepresentation:
    """Mixture waveform -> (X, M, P)."""
    cfg = params.cfg
    x = as_tensor(w.samples if isinstance(w, Waveform) else w)
    if x.data.size < cfg.filter_len:
        raise SignalTooShort(f"need at least {cfg.filter_len} samples, got {x.data.size}")
    X = engine.conv1d(x, params.analysis, cfg.stride)
    magnitude = engine.abs_(X)

    width = cfg.smoothing_width
    pad_left, pad_right = (width - 1) // 2, width // 2
    k, n_cols = X.data.shape
    pieces = []
    if pad_left:
        pieces.append(Tensor(np.zeros((k, pad_left))))
    pieces.append(magnitude)
    if pad_right:
        pieces.append(Tensor(np.zeros((k, pad_right))))
    padded = engine.concatenate(pieces, axis=1) if len(pieces) > 1 else magnitude

    kernel = params.smoothing_kernel()
    smoothed = None
    for d in range(width):
        term = kernel[:, d : d + 1] * padded[:, d : d + n_cols]
        smoothed = term if smoothed is None else smoothed + term
    M = smoothed + cfg.modulation_floor
    P = X / M
    return AetRepresentation(X=X, M=M, P=P)


def separator_forward(modulation, params: SeparatorParams) -> Tensor:
    """Estimate the target modulation from the mixture modulation (per frame)."""
    m = as_tensor(modulation)
    if m.data.ndim != 2 or m.data.shape[0] != params.cfg.components:
        raise ShapeError(f"modulation must be ({params.cfg.components}, frames), got {m.data.shape}")
    hidden = engine.softplus(engine.matmul(params.w1, m) + params.b1)
    return engine.softplus(engine.matmul(params.w2, hidden) + params.b2)


def synthesis_forward(modulation_hat, carrier, params: SeparatorParams) -> Tensor:
    """Re-modulate the carrier and synthesize a waveform by transposed convolution."""
    m_hat = as_tensor(modulation_hat)
    p = as_tensor(carrier)
    if m_hat.data.shape != p.data.shape:
        raise ShapeError(f"modulation {m_hat.data.shape} and carrier {p.data.shape} differ")
    x_hat = m_hat * p
    return engine.conv1d_transpose(x_hat, params.synthesis_filters, params.cfg.stride)


def forward(w, params: SeparatorParams) -> Tensor:
    """Full network composition; output length (L-1)*stride + filter_len."""
    rep = analysis_forward(w, params)
    m_hat = separator_forward(rep.M, params)
    return synthesis_forward(m_hat, rep.P, params)


def separate(w_mix: Waveform, params: SeparatorParams) -> Waveform:
    """Run the network without gradient recording."""
    with engine.no_grad():
        out = forward(w_mix, params)
    return Waveform(out.data.copy(), w_mix.sample_rate)


def separate_full_length(w_mix: Waveform, params: SeparatorParams) -> Waveform:
    """Length-preserving separation: pad, separate, cut the synthesis edges.

    The input is zero-padded by half a filter length on each side so the
    synthesis covers the whole original extent; the output is then the
    slice aligned with the input samples.
    """
    cfg = params.cfg
    half = cfg.filter_len // 2
    if cfg.stride > half:
        raise ValueError("length-preserving separation needs stride <= filter_len/2")
    n = len(w_mix)
    padded = np.concatenate([np.zeros(half), w_mix.samples, np.zeros(half)])
    with engine.no_grad():
        out = forward(Tensor(padded), params)
    return Waveform(out.data[half : half + n].copy(), w_mix.sample_rate)


def order_bases_by_dominant_frequency(params: SeparatorParams, sample_rate: int, dft_len: int = 4096):
    """Ascending sort of the analysis filters by their spectral peak.

    Returns (permutation, dominant_frequencies_hz); the permutation is a
    stable argsort, so re-computation is reproducible.
    """
    spectra = np.abs(np.fft.rfft(params.analysis.data, n=dft_len, axis=1))
    freqs = spectra.argmax(axis=1) * (sample_rate / dft_len)
    perm = np.argsort(freqs, kind="stable")
    return perm, freqs


def export_bases_csv(params: SeparatorParams, sample_rate: int, path) -> None:
    """CSV of analysis filters, one row per filter sorted by dominant frequency.

    Column 1 is the dominant frequency in Hz; the remaining columns are
    the filter taps at full precision.
    """
    perm, freqs = order_bases_by_dominant_frequency(params, sample_rate)
    bank = params.analysis.data
    lines = []
    for i in perm:
        lines.append(",".join([repr(float(freqs[i]))] + [repr(float(v)) for v in bank[i]]))
    Path(path).write_text("\n".join(lines) + "\n")
