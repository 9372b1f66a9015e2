"""Dataset assembly, gradient training on composite costs, checkpoints.

Determinism contract: every run is a pure function of (seed, config,
data). Per-step randomness is derived statelessly from
(seed, epoch, position), so training resumed from a checkpoint replays
the exact step sequence of an uninterrupted run.
"""

from __future__ import annotations

import base64
import binascii
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import aet_net, losses
from . import diff_engine as engine
from .aet_net import NetConfig, SeparatorParams, init_params
from .diff_engine import Tensor, parameter
from .errors import CorruptFile, IncompatibleCheckpoint, NoData, NumericalDivergence
from .losses import CompositeCost, StoiConfig, normalize_cost_scales, parse_cost_spec
from .signal_io import MixturePair, mix_at_snr, read_wav, resample

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    cost: str = "sdr"
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    epochs: int = 1
    seed: int = 0
    snr_db: float = 0.0
    excerpt_len: int = 32768  # 0 trains on full utterances
    trim: int = 1024  # samples cut from each end before the loss
    sample_rate: int = 16000

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.excerpt_len != 0 and self.excerpt_len < 4096:
            raise ValueError("excerpt_len must be 0 (full) or at least 4096")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.epochs < 0 or self.trim < 0:
            raise ValueError("epochs and trim must be nonnegative")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


@dataclass
class Dataset:
    pairs: list[MixturePair]
    split: str = "train"


@dataclass
class OptState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class FitResult:
    params: SeparatorParams
    opt_state: OptState
    cost: CompositeCost
    log: list[dict]
    steps_done: int


def _wav_files(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".wav")


def build_dataset(
    target_dir, interference_dir, snr_db: float = 0.0, seed: int = 0, sample_rate: int = 16000
) -> Dataset:
    """Pair target and interference WAVs (seeded shuffle, zip) and mix each pair.

    Files are resampled to sample_rate first; pairing and mixing are
    fully reproducible from the seed.
    """
    targets = _wav_files(target_dir)
    interferences = _wav_files(interference_dir)
    if not targets or not interferences:
        raise NoData(f"no WAV files under {target_dir} or {interference_dir}")
    rng = np.random.default_rng(seed)
    t_order = rng.permutation(len(targets))
    i_order = rng.permutation(len(interferences))
    pairs = []
    for ti, ii in zip(t_order, i_order):
        y = resample(read_wav(targets[ti]), sample_rate)
        z = resample(read_wav(interferences[ii]), sample_rate)
        pairs.append(mix_at_snr(y, z, snr_db))
    return Dataset(pairs, split="train")


def _excerpt(pair: MixturePair, cfg: TrainConfig, rng=None):
    """Cut one training excerpt; rng=None takes the leading excerpt."""
    n = len(pair.mixture)
    length = n if cfg.excerpt_len == 0 else min(cfg.excerpt_len, n)
    max_offset = n - length
    offset = int(rng.integers(0, max_offset + 1)) if (rng is not None and max_offset > 0) else 0
    window = slice(offset, offset + length)
    return (
        pair.mixture.samples[window],
        pair.target.samples[window],
        pair.interference.samples[window],
    )


def _aligned_loss_inputs(estimate: Tensor, y: np.ndarray, z: np.ndarray, trim: int):
    """Trim synthesis edges; all three signals leave with identical lengths."""
    n_out = estimate.data.size
    if n_out <= 2 * trim:
        raise ValueError(f"trim {trim} leaves no samples of a {n_out}-sample output")
    x_al = estimate[trim : n_out - trim]
    y_al = Tensor(y[trim : n_out - trim])
    z_al = Tensor(z[trim : n_out - trim])
    assert x_al.data.size == y_al.data.size == z_al.data.size
    return x_al, y_al, z_al


def _apply_update(params: SeparatorParams, opt: OptState, cfg: TrainConfig) -> None:
    opt.step += 1
    for name, t in params.tensors().items():
        g = t.grad
        if g is None:
            continue
        if cfg.optimizer == "sgd":
            t.data -= cfg.learning_rate * g
            continue
        if name not in opt.m:
            opt.m[name] = np.zeros_like(t.data)
            opt.v[name] = np.zeros_like(t.data)
        m = opt.m[name]
        v = opt.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**opt.step)
        v_hat = v / (1.0 - cfg.beta2**opt.step)
        t.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_opt)


def train_step(
    params: SeparatorParams,
    pair: MixturePair,
    cost: CompositeCost,
    cfg: TrainConfig,
    opt_state: OptState,
    stoi_cfg: StoiConfig = StoiConfig(),
    rng=None,
):
    """One optimizer step on one excerpt.

    Returns (pre-update total loss, raw per-component values). Aborts
    before any update if the loss or a gradient is non-finite.
    """
    mix, y, z = _excerpt(pair, cfg, rng)
    estimate = aet_net.forward(Tensor(mix), params)
    x_al, y_al, z_al = _aligned_loss_inputs(estimate, y, z, cfg.trim)

    terms = losses.composite_terms(cost, x_al, y_al, z_al, stoi_cfg, cfg.sample_rate)
    total = None
    for comp, scale in zip(cost.components, cost.scales):
        term = comp.weight * (scale * terms[comp.kind])
        total = term if total is None else total + term
    loss_value = total.item()
    if not math.isfinite(loss_value):
        raise NumericalDivergence(f"non-finite loss {loss_value!r}")

    for t in params.tensors().values():
        t.zero_grad()
    total.backward()
    for name, t in params.tensors().items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericalDivergence(f"non-finite gradient for {name}")
    _apply_update(params, opt_state, cfg)
    raw = {kind: tensor.item() for kind, tensor in terms.items()}
    return loss_value, raw


def initial_component_means(
    params: SeparatorParams,
    pairs,
    cost: CompositeCost,
    cfg: TrainConfig,
    stoi_cfg: StoiConfig = StoiConfig(),
) -> dict[str, float]:
    """Average raw loss per component over the normalization batch.

    Uses the leading excerpt of each pair with the given (initial)
    parameters; no gradients are recorded.
    """
    sums = {c.kind: 0.0 for c in cost.components}
    with engine.no_grad():
        for pair in pairs:
            mix, y, z = _excerpt(pair, cfg, rng=None)
            estimate = aet_net.forward(Tensor(mix), params)
            x_al, y_al, z_al = _aligned_loss_inputs(estimate, y, z, cfg.trim)
            terms = losses.composite_terms(cost, x_al, y_al, z_al, stoi_cfg, cfg.sample_rate)
            for kind, tensor in terms.items():
                sums[kind] += tensor.item()
    return {kind: total / len(pairs) for kind, total in sums.items()}


def fit(
    dataset: Dataset,
    cfg: TrainConfig,
    net_cfg: NetConfig = NetConfig(),
    stoi_cfg: StoiConfig = StoiConfig(),
    log_path=None,
    resume=None,
    step_callback=None,
) -> FitResult:
    """Normalization pass, then epochs x dataset sweeps of train_step.

    Each epoch visits the pairs in a seeded shuffled order. On
    divergence the exception carries the last good state in its
    .params/.opt_state/.log/.steps_done attributes.
    """
    if not dataset.pairs:
        raise NoData("dataset is empty")
    cost = parse_cost_spec(cfg.cost)
    log: list[dict] = []

    if resume is not None:
        params, opt_state, meta = load_checkpoint(resume)
        steps_done = int(meta["steps_done"])
        cost = CompositeCost(cost.components, tuple(meta["cost_scales"]))
    else:
        params = init_params(cfg.seed, net_cfg)
        opt_state = OptState()
        steps_done = 0
        batch = dataset.pairs[: min(10, len(dataset.pairs))]
        initial = initial_component_means(params, batch, cost, cfg, stoi_cfg)
        cost = normalize_cost_scales(cost, [initial[c.kind] for c in cost.components])
        for comp, scale in zip(cost.components, cost.scales):
            log.append(
                {
                    "event": "normalize",
                    "component": comp.kind,
                    "initial": initial[comp.kind],
                    "scale": scale,
                }
            )

    steps_per_epoch = len(dataset.pairs)
    total_steps = cfg.epochs * steps_per_epoch
    epoch_order = None
    order_epoch = -1
    for global_step in range(steps_done, total_steps):
        epoch, position = divmod(global_step, steps_per_epoch)
        if epoch != order_epoch:
            epoch_order = np.random.default_rng([cfg.seed, epoch]).permutation(steps_per_epoch)
            order_epoch = epoch
        pair = dataset.pairs[int(epoch_order[position])]
        step_rng = np.random.default_rng([cfg.seed, epoch, position])
        try:
            loss_value, raw = train_step(params, pair, cost, cfg, opt_state, stoi_cfg, step_rng)
        except NumericalDivergence as exc:
            exc.params = params
            exc.opt_state = opt_state
            exc.log = log
            exc.steps_done = global_step
            exc.cost = cost
            raise
        entry = {"epoch": epoch, "step": global_step, "components": raw, "total": loss_value}
        log.append(entry)
        if step_callback is not None:
            step_callback(params, opt_state, entry)

    if log_path is not None:
        write_log(log, log_path)
    return FitResult(params, opt_state, cost, log, total_steps)


def write_log(log: list[dict], path) -> None:
    """JSON-lines training log, one object per entry."""
    with open(path, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")


# ---------------------------------------------------------------------------
# checkpoints

def _encode_tensor(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(data.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_tensor(entry: dict, path) -> np.ndarray:
    try:
        raw = base64.b64decode(entry["data"], validate=True)
    except (binascii.Error, KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: bad tensor payload") from exc
    shape = tuple(entry.get("shape", ()))
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise CorruptFile(f"{path}: tensor payload does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(
    params: SeparatorParams,
    opt_state: OptState,
    path,
    train_cfg: TrainConfig | None = None,
    meta: dict | None = None,
) -> None:
    """JSON checkpoint: config plus base64 little-endian float64 tensors."""
    tensors = {name: _encode_tensor(t.data) for name, t in params.tensors().items()}
    for name, arr in opt_state.m.items():
        tensors[f"opt.m.{name}"] = _encode_tensor(arr)
    for name, arr in opt_state.v.items():
        tensors[f"opt.v.{name}"] = _encode_tensor(arr)
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "network": asdict(params.cfg),
            "train": asdict(train_cfg) if train_cfg is not None else None,
            "meta": dict(meta or {}, opt_step=opt_state.step),
        },
        "tensors": tensors,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Rebuild (params, opt_state, meta) bit-exactly from a checkpoint file."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: not valid checkpoint JSON") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptFile(f"{path}: missing format_version")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(
            f"{path}: format_version {doc['format_version']} != {CHECKPOINT_VERSION}"
        )
    try:
        net_cfg = NetConfig(**doc["config"]["network"])
        tensors = doc["tensors"]
    except (KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: malformed checkpoint structure") from exc

    def grab(name: str) -> Tensor:
        if name not in tensors:
            raise CorruptFile(f"{path}: missing tensor {name!r}")
        return parameter(_decode_tensor(tensors[name], path))

    synthesis = grab("synthesis") if net_cfg.weight_sharing == "independent" else None
    params = SeparatorParams(
        net_cfg,
        analysis=grab("analysis"),
        smoothing_raw=grab("smoothing_raw"),
        w1=grab("w1"),
        b1=grab("b1"),
        w2=grab("w2"),
        b2=grab("b2"),
        synthesis=synthesis,
    )
    meta = dict(doc["config"].get("meta") or {})
    opt_state = OptState(step=int(meta.pop("opt_step", 0)))
    for key, entry in tensors.items():
        if key.startswith("opt.m."):
            opt_state.m[key[6:]] = _decode_tensor(entry, path)
        elif key.startswith("opt.v."):
            opt_state.v[key[6:]] = _decode_tensor(entry, path)
    meta["train"] = doc["config"].get("train")
    return params, opt_state, meta
