"""Differentiable separation costs and their composites.

Minimization surrogates for the BSS energy ratios (an estimate x against
target y and interference z, all time-domain):

    sdr_loss = <x,x> / (<x,y>^2 + eps)
    sir_loss = <x,z>^2 / (<x,y>^2 + eps)
    sar_loss = <x,x> / (<x,y>^2/<y,y> + <x,z>^2/<z,z> + eps)

plus MSE and an intelligibility loss (1 - short-time octave-band envelope
correlation). Every denominator that can vanish carries an explicit
epsilon; the graphs record the math as written otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diff_engine as engine
from . import dsp
from .diff_engine import Tensor, as_tensor
from .errors import DegenerateScale, ShapeError, SignalTooShort
from .signal_io import Waveform, resample_plan

EPS = 1e-12

COST_KINDS = ("mse", "sdr", "sir", "sar", "stoi")


@dataclass(frozen=True)
class StoiConfig:
    """Parameters of the intelligibility pipeline."""

    frame_len: int = 256
    fft_len: int = 512
    hop: int = 128
    num_bands: int = 15
    lowest_center: float = 150.0
    segment_frames: int = 30
    clip_db: float = -15.0
    analysis_rate: int = 10000
    epsilon: float = 1e-12
    band_pool: str = "l2"

    def __post_init__(self):
        if self.segment_frames < 1:
            raise ValueError("segment_frames must be at least 1")
        if self.hop != self.frame_len // 2:
            raise ValueError("hop must be half the frame length")
        if self.clip_db >= 0:
            raise ValueError("clip_db must be negative")
        if self.band_pool not in ("l2", "l1"):
            raise ValueError("band_pool must be 'l2' or 'l1'")

    @property
    def clip_factor(self) -> float:
        return 1.0 + 10.0 ** (-self.clip_db / 20.0)


def _signal(x) -> tuple[Tensor, int | None]:
    if isinstance(x, Waveform):
        return as_tensor(x.samples), x.sample_rate
    return as_tensor(x), None


def _pair(x, y) -> tuple[Tensor, Tensor, int | None]:
    xt, rx = _signal(x)
    yt, ry = _signal(y)
    if rx is not None and ry is not None and rx != ry:
        raise ShapeError(f"sample rates differ: {rx} vs {ry}")
    if xt.data.shape != yt.data.shape:
        raise ShapeError(f"signal lengths differ: {xt.data.shape} vs {yt.data.shape}")
    return xt, yt, rx if rx is not None else ry


def inner_product(a, b) -> Tensor:
    """<a, b> = sum_i a_i b_i over equal-length vectors."""
    at, _ = _signal(a)
    bt, _ = _signal(b)
    return engine.dot(at, bt)


def mse_loss(x, y) -> Tensor:
    """Mean squared sample error."""
    xt, yt, _ = _pair(x, y)
    return engine.mean(engine.square(xt - yt))


def sdr_loss(x, y, epsilon: float = EPS) -> Tensor:
    """Distortion surrogate: scale-invariant, minimized when x is proportional to y."""
    xt, yt, _ = _pair(x, y)
    return engine.dot(xt, xt) / (engine.square(engine.dot(xt, yt)) + epsilon)


def sir_loss(x, y, z, epsilon: float = EPS) -> Tensor:
    """Interference surrogate: correlation with z over correlation with y."""
    xt, yt, _ = _pair(x, y)
    zt, _ = _signal(z)
    if zt.data.shape != xt.data.shape:
        raise ShapeError("interference length differs from estimate")
    return engine.square(engine.dot(xt, zt)) / (engine.square(engine.dot(xt, yt)) + epsilon)


def sar_loss(x, y, z, epsilon: float = EPS) -> Tensor:
    """Artifact surrogate: estimate energy over its projection onto span{y, z}.

    Assumes y and z are orthogonal in time; minimized by any x inside the span
    (the identity map on the mixture, in particular).
    """
    xt, yt, _ = _pair(x, y)
    zt, _ = _signal(z)
    if zt.data.shape != xt.data.shape:
        raise ShapeError("interference length differs from estimate")
    proj = engine.square(engine.dot(xt, yt)) / engine.dot(yt, yt) + engine.square(
        engine.dot(xt, zt)
    ) / engine.dot(zt, zt)
    return engine.dot(xt, xt) / (proj + epsilon)


def _band_frames_graph(t: Tensor, cfg: StoiConfig) -> Tensor:
    """(J bands, M frames) envelope of a signal at the analysis rate.

    Magnitude STFT (Hann frames zero-padded to fft_len) followed by the
    one-third-octave band matrix applied in the power domain.
    """
    mag = engine.stft_magnitude(
        t, cfg.frame_len, cfg.fft_len, cfg.hop, dsp.hann_periodic(cfg.frame_len)
    )
    bands = dsp.octave_band_matrix(cfg.analysis_rate, cfg.fft_len, cfg.num_bands, cfg.lowest_center)
    if cfg.band_pool == "l2":
        return engine.sqrt(engine.matmul(bands.weights, engine.square(mag)))
    return engine.matmul(bands.weights, mag)


def _segment_stack(bands: Tensor, seg_len: int, n_positions: int) -> Tensor:
    """Stack sliding seg_len-frame windows of a (J, M) envelope: (N, J, M').

    Entry [n, j, p] is band j at frame p + n, so column p holds the
    segment ending at frame p + seg_len - 1.
    """
    return engine.stack([bands[:, n : n + n_positions] for n in range(seg_len)], axis=0)


def stoi_forward(x, y, cfg: StoiConfig = StoiConfig(), sample_rate: int | None = None):
    """Short-time octave-band envelope correlation between estimate and target.

    Both signals are resampled (in-graph) to cfg.analysis_rate, framed,
    pooled into one-third-octave bands, cut into overlapping
    segment_frames-long segments, and the estimate segments are
    normalized to the target scale and clipped before the centered
    correlation. Returns (score, d) where score is the mean of the
    per-(band, frame) correlation matrix d.
    """
    xt, yt, rate = _pair(x, y)
    if rate is None:
        rate = sample_rate if sample_rate is not None else cfg.analysis_rate
    if rate != cfg.analysis_rate:
        idx, weights, out_len = resample_plan(xt.data.size, rate, cfg.analysis_rate)
        xt = engine.gather_linear(xt, idx, weights)
        yt = engine.gather_linear(yt, idx, weights)
        n10 = out_len
    else:
        n10 = xt.data.size

    n_seg = cfg.segment_frames
    if n10 < cfg.frame_len:
        raise SignalTooShort(f"{n10} samples at {cfg.analysis_rate} Hz is less than one frame")
    n_frames = (n10 - cfg.frame_len) // cfg.hop + 1
    if n_frames < n_seg:
        raise SignalTooShort(f"{n_frames} frames < {n_seg} needed for one segment")

    bands_x = _band_frames_graph(xt, cfg)
    bands_y = _band_frames_graph(yt, cfg)
    seg_x = _segment_stack(bands_x, n_seg, n_frames - n_seg + 1)
    seg_y = _segment_stack(bands_y, n_seg, n_frames - n_seg + 1)

    eps = cfg.epsilon
    norm_x = engine.norm(seg_x, axis=0)
    norm_y = engine.norm(seg_y, axis=0)
    alpha = norm_y / (norm_x + eps)
    clipped = engine.minimum(alpha * seg_x, cfg.clip_factor * seg_y)

    xc = clipped - engine.mean(clipped, axis=0, keepdims=True)
    yc = seg_y - engine.mean(seg_y, axis=0, keepdims=True)
    num = engine.sum_(xc * yc, axis=0)
    den = engine.norm(xc, axis=0) * engine.norm(yc, axis=0) + eps
    d = num / den
    return engine.mean(d), d


def stoi_loss(x, y, cfg: StoiConfig = StoiConfig(), sample_rate: int | None = None) -> Tensor:
    """1 - stoi_forward score (minimization form, range [0, 2])."""
    score, _ = stoi_forward(x, y, cfg, sample_rate=sample_rate)
    return 1.0 - score


@dataclass(frozen=True)
class CostComponent:
    kind: str
    weight: float


@dataclass(frozen=True)
class CompositeCost:
    """Weighted cost components with per-component normalization scales."""

    components: tuple[CostComponent, ...]
    scales: tuple[float, ...]

    def __post_init__(self):
        if len(self.components) != len(self.scales):
            raise ValueError("one scale per component required")
        if sum(c.weight for c in self.components) <= 0:
            raise ValueError("total weight must be positive")

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(c.kind for c in self.components)

    def needs_interference(self) -> bool:
        return any(c.kind in ("sir", "sar") for c in self.components)


def parse_cost_spec(spec: str) -> CompositeCost:
    """Parse a cost string such as "mse", "sdr", or "sir:0.75+sar:0.25".

    Component names and positive decimal weights, joined by '+'.
    """
    parts = [p.strip() for p in spec.strip().lower().split("+")]
    components = []
    seen = set()
    for part in parts:
        if not part:
            raise ValueError(f"empty component in cost spec {spec!r}")
        name, sep, weight_text = part.partition(":")
        if sep:
            try:
                weight = float(weight_text)
            except ValueError:
                raise ValueError(f"bad weight {weight_text!r} in cost spec {spec!r}") from None
            if not np.isfinite(weight) or weight <= 0:
                raise ValueError(f"weight must be a positive decimal, got {weight_text!r}")
        else:
            weight = 1.0
        if name not in COST_KINDS:
            raise ValueError(f"unknown cost component {name!r}")
        if name in seen:
            raise ValueError(f"duplicate cost component {name!r}")
        seen.add(name)
        components.append(CostComponent(name, weight))
    return CompositeCost(tuple(components), tuple(1.0 for _ in components))


def normalize_cost_scales(cost: CompositeCost, initial_losses) -> CompositeCost:
    """Set each scale to 1/initial so every scaled component starts at unity."""
    initial = [float(v) for v in initial_losses]
    if len(initial) != len(cost.components):
        raise ValueError("one initial loss per component required")
    for comp, value in zip(cost.components, initial):
        if not np.isfinite(value) or value <= 0:
            raise DegenerateScale(f"initial {comp.kind} loss {value!r} cannot be normalized")
    return CompositeCost(cost.components, tuple(1.0 / v for v in initial))


def component_loss(kind: str, x, y, z=None, cfg: StoiConfig = StoiConfig(), sample_rate: int | None = None) -> Tensor:
    if kind == "mse":
        return mse_loss(x, y)
    if kind == "sdr":
        return sdr_loss(x, y)
    if kind in ("sir", "sar"):
        if z is None:
            raise ValueError(f"{kind} loss needs an interference signal")
        return sir_loss(x, y, z) if kind == "sir" else sar_loss(x, y, z)
    if kind == "stoi":
        return stoi_loss(x, y, cfg, sample_rate=sample_rate)
    raise ValueError(f"unknown cost component {kind!r}")


def composite_terms(
    cost: CompositeCost, x, y, z=None, cfg: StoiConfig = StoiConfig(), sample_rate: int | None = None
) -> dict[str, Tensor]:
    """Raw (unweighted, unscaled) loss tensor per component kind."""
    return {c.kind: component_loss(c.kind, x, y, z, cfg, sample_rate) for c in cost.components}


def composite_loss(
    cost: CompositeCost, x, y, z=None, cfg: StoiConfig = StoiConfig(), sample_rate: int | None = None
) -> Tensor:
    """sum_i weight_i * scale_i * raw_i over the cost components."""
    terms = composite_terms(cost, x, y, z, cfg, sample_rate)
    total = None
    for comp, scale in zip(cost.components, cost.scales):
        term = comp.weight * (scale * terms[comp.kind])
        total = term if total is None else total + term
    return total
