import numpy as np
import pytest

from sepcost import diff_engine as E
from sepcost.errors import DegenerateScale, ShapeError, SignalTooShort
from sepcost.losses import (
    EPS,
    CompositeCost,
    CostComponent,
    StoiConfig,
    composite_loss,
    inner_product,
    mse_loss,
    normalize_cost_scales,
    parse_cost_spec,
    sar_loss,
    sdr_loss,
    sir_loss,
    stoi_forward,
    stoi_loss,
)
from sepcost.metrics import bss_eval_metrics
from sepcost.signal_io import Waveform

from reference import speechlike

SMALL_STOI = StoiConfig(
    frame_len=64, fft_len=128, hop=32, num_bands=8, lowest_center=300.0,
    segment_frames=8, analysis_rate=4000,
)


def test_inner_product_examples():
    assert inner_product([1.0, 2.0], [3.0, 4.0]).item() == 11.0
    assert inner_product([3.0, 4.0], [3.0, 4.0]).item() == 25.0
    assert inner_product([1.0, 0.0], [0.0, 1.0]).item() == 0.0
    with pytest.raises(ShapeError):
        inner_product([1.0], [1.0, 2.0])


def test_mse_examples():
    assert mse_loss([1.0, 2.0], [1.0, 2.0]).item() == 0.0
    assert mse_loss([1.0, 1.0], [0.0, 0.0]).item() == 1.0
    with pytest.raises(ShapeError):
        mse_loss([1.0], [1.0, 2.0])
    with pytest.raises(ShapeError):
        mse_loss(Waveform(np.ones(4), 8000), Waveform(np.ones(4), 16000))


def test_mse_gradient():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(128), rng.standard_normal(128)
    _, grads = E.evaluate_with_gradient(lambda t: mse_loss(t["x"], t["y"]), {"x": x, "y": y}, ["x"])
    np.testing.assert_allclose(grads["x"], 2.0 / 128 * (x - y), rtol=1e-12)


def test_sdr_loss_examples():
    v = sdr_loss([1.0, 0.0], [1.0, 0.0]).item()
    assert v == pytest.approx(1.0 / (1.0 + EPS))
    # scale invariance: alpha squared cancels; correlated pair keeps <x,y>^2 >> eps
    rng = np.random.default_rng(1)
    x = rng.standard_normal(256)
    y = x + 0.1 * rng.standard_normal(256)
    base = sdr_loss(x, y).item()
    for alpha in (0.3, -2.0, 17.0):
        assert sdr_loss(alpha * x, y).item() == pytest.approx(base, rel=1e-12)


def test_sdr_minimum_recovers_target_direction():
    # projected gradient descent on the sphere must land on x proportional to y
    rng = np.random.default_rng(2)
    y = rng.standard_normal(16)
    x = rng.standard_normal(16)
    x /= np.linalg.norm(x)
    for _ in range(800):
        _, grads = E.evaluate_with_gradient(lambda t: sdr_loss(t["x"], y), {"x": x}, ["x"])
        g = grads["x"]
        x = x - 2.0 * (g - (g @ x) * x)  # tangent component only
        x /= np.linalg.norm(x)
    cosine = abs(x @ y) / np.linalg.norm(y)
    assert cosine > 0.999999  # closed-form minimizer is the projection direction


def test_sir_loss_examples():
    assert sir_loss([1.0, 0.0], [1.0, 0.0], [0.0, 1.0]).item() == 0.0
    rng = np.random.default_rng(3)
    x, y, z = rng.standard_normal((3, 200))
    base = sir_loss(x, y, z).item()
    assert sir_loss(x, y, 2.0 * z).item() == 4.0 * base  # exact: numerator scales by 4


def test_sir_degenerate_blowup_is_bounded_by_eps():
    z = np.array([0.0, 1.0])
    y = np.array([1.0, 0.0])
    v = sir_loss(z, y, z).item()
    assert v == pytest.approx(np.dot(z, z) ** 2 / EPS)


def test_sar_loss_examples():
    y = np.array([1.0, 0.0])
    z = np.array([0.0, 1.0])
    assert sar_loss(y + z, y, z).item() == pytest.approx(1.0, abs=1e-9)
    assert sar_loss(y, y, z).item() == pytest.approx(1.0, abs=1e-9)


def test_sar_identity_is_minimizer_on_toys():
    rng = np.random.default_rng(4)
    y = np.zeros(8)
    y[0] = 1.0
    z = np.zeros(8)
    z[1] = 1.0
    best = sar_loss(y + z, y, z).item()
    for _ in range(200):
        x = rng.standard_normal(8)
        x /= np.linalg.norm(x)
        assert sar_loss(x, y, z).item() >= best


def test_losses_pass_fd_checks():
    rng = np.random.default_rng(5)
    x, y, z = rng.standard_normal((3, 256))
    cases = {
        "mse": lambda t: mse_loss(t["x"], t["y"]),
        "sdr": lambda t: sdr_loss(t["x"], t["y"]),
        "sir": lambda t: sir_loss(t["x"], t["y"], t["z"]),
        "sar": lambda t: sar_loss(t["x"], t["y"], t["z"]),
    }
    for name, graph in cases.items():
        _, grads = E.evaluate_with_gradient(graph, {"x": x, "y": y, "z": z}, ["x"])
        fd = E.finite_difference_gradient(graph, {"x": x, "y": y, "z": z}, "x")
        assert E.max_relative_error(grads["x"], fd) <= 1e-6, name


def test_stoi_identity_is_one():
    rng = np.random.default_rng(6)
    y = speechlike(rng, 12000, 10000)
    score, d = stoi_forward(Waveform(y, 10000), Waveform(y, 10000))
    assert score.item() == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.abs(d.data) <= 1.0 + 1e-12)


def test_stoi_blind_to_global_sign():
    rng = np.random.default_rng(7)
    y = speechlike(rng, 8000, 10000)
    flipped, d_f = stoi_forward(Waveform(-y, 10000), Waveform(y, 10000))
    same, d_s = stoi_forward(Waveform(y, 10000), Waveform(y, 10000))
    np.testing.assert_array_equal(d_f.data, d_s.data)  # |STFT| ignores global sign
    assert flipped.item() == pytest.approx(1.0, abs=1e-9)


def test_stoi_loss_range_and_complement():
    rng = np.random.default_rng(8)
    y = speechlike(rng, 9000, 10000)
    x = y + 0.5 * rng.standard_normal(y.size) * y.std()
    score, _ = stoi_forward(Waveform(x, 10000), Waveform(y, 10000))
    loss = stoi_loss(Waveform(x, 10000), Waveform(y, 10000))
    assert 0.0 <= loss.item() <= 2.0
    assert loss.item() == 1.0 - score.item()


def test_stoi_too_short():
    with pytest.raises(SignalTooShort):
        stoi_forward(np.zeros(1000), np.zeros(1000), sample_rate=10000)


def test_stoi_fd_small_config_no_resample():
    rng = np.random.default_rng(9)
    inputs = {"x": rng.standard_normal(400), "y": rng.standard_normal(400)}
    graph = lambda t: stoi_loss(t["x"], t["y"], SMALL_STOI, sample_rate=4000)
    _, grads = E.evaluate_with_gradient(graph, inputs, ["x"])
    fd = E.finite_difference_gradient(graph, inputs, "x")
    assert E.max_relative_error(grads["x"], fd) <= 1e-5


def test_stoi_fd_small_config_with_resample():
    rng = np.random.default_rng(10)
    inputs = {"x": rng.standard_normal(440), "y": rng.standard_normal(440)}
    graph = lambda t: stoi_loss(t["x"], t["y"], SMALL_STOI, sample_rate=4400)
    _, grads = E.evaluate_with_gradient(graph, inputs, ["x"])
    fd = E.finite_difference_gradient(graph, inputs, "x")
    assert E.max_relative_error(grads["x"], fd) <= 1e-5


def test_monotone_link_between_sdr_loss_and_metric():
    rng = np.random.default_rng(11)
    y = rng.standard_normal(64)
    z = rng.standard_normal(64)
    losses_, metrics_ = [], []
    for _ in range(1000):
        x = rng.standard_normal(64)
        x /= np.linalg.norm(x)
        losses_.append(sdr_loss(x, y).item())
        metrics_.append(bss_eval_metrics(x, y, z).sdr_db)
    order = np.argsort(metrics_)
    assert np.all(np.diff(np.asarray(losses_)[order]) < 0.0)


def test_parse_cost_spec():
    cost = parse_cost_spec("sdr:0.75+stoi:0.25")
    assert cost.kinds == ("sdr", "stoi")
    assert [c.weight for c in cost.components] == [0.75, 0.25]
    assert cost.scales == (1.0, 1.0)
    assert parse_cost_spec("mse").components == (CostComponent("mse", 1.0),)
    assert parse_cost_spec("sir:0.75+sar:0.25").needs_interference()
    for bad in ("sdr:+", "nope", "sdr:0", "sdr:-1", "", "sdr++mse", "sdr:nan", "sdr+sdr"):
        with pytest.raises(ValueError):
            parse_cost_spec(bad)


def test_normalize_cost_scales():
    cost = parse_cost_spec("sdr:0.75+stoi:0.25")
    normalized = normalize_cost_scales(cost, [4.0, 0.5])
    assert normalized.scales == (0.25, 2.0)
    assert normalize_cost_scales(cost, [1.0, 1.0]).scales == (1.0, 1.0)
    with pytest.raises(DegenerateScale):
        normalize_cost_scales(cost, [0.0, 1.0])
    with pytest.raises(DegenerateScale):
        normalize_cost_scales(cost, [-2.0, 1.0])


def test_scaled_composite_starts_at_total_weight():
    rng = np.random.default_rng(12)
    fs = 10000
    y = speechlike(rng, 10000, fs)
    z = speechlike(rng, 10000, fs)
    x = y + 0.7 * z
    cost = parse_cost_spec("sdr:0.75+stoi:0.25")
    raw = [
        sdr_loss(x, y).item(),
        stoi_loss(Waveform(x, fs), Waveform(y, fs)).item(),
    ]
    normalized = normalize_cost_scales(cost, raw)
    total = composite_loss(normalized, Waveform(x, fs), Waveform(y, fs), Waveform(z, fs))
    assert total.item() == pytest.approx(0.75 + 0.25, rel=1e-9)


def test_composite_single_component_equals_plain_loss():
    rng = np.random.default_rng(13)
    x, y = rng.standard_normal((2, 300))
    cost = parse_cost_spec("mse")
    assert composite_loss(cost, x, y).item() == mse_loss(x, y).item()


def test_composite_matches_manual_combination():
    rng = np.random.default_rng(14)
    fs = 10000
    y = speechlike(rng, 9000, fs)
    z = speechlike(rng, 9000, fs)
    x = y + 0.5 * z
    cost = parse_cost_spec("sdr:0.75+stoi:0.25")
    total = composite_loss(cost, Waveform(x, fs), Waveform(y, fs), Waveform(z, fs)).item()
    manual = 0.75 * sdr_loss(x, y).item() + 0.25 * stoi_loss(Waveform(x, fs), Waveform(y, fs)).item()
    assert total == manual


def test_composite_cost_validation():
    with pytest.raises(ValueError):
        CompositeCost((CostComponent("mse", 0.0),), (1.0,))
    with pytest.raises(ValueError):
        CompositeCost((CostComponent("mse", 1.0),), (1.0, 2.0))
