"""Model-family contracts: gate arithmetic, ablation structure,
information-flow discipline, loss decomposition, and the linear baseline."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

import acgate.autodiff as ad
from acgate.ardl import ardl_predict, assign_groups, fit_grouped_ardl
from acgate.autodiff import Tensor, backward
from acgate.checkpoint import load_checkpoint, save_checkpoint
from acgate.errors import DataError
from acgate.models import LagDistribution, GatedForecaster
from acgate.panel import Panel, SegmentView
from acgate.stats import forecast_metrics
from acgate.training import build_model, train_model

from conftest import make_bundle, small_model_params, small_train_params
from helpers import check_gradients


def fresh_model(variant, panel, mp=None, seed=0):
    mp = mp or small_model_params()
    return build_model(variant, panel, mp, seed)


def zero_params(model):
    for t in model.params.values():
        t.data = np.zeros_like(t.data)


# ----------------------------------------------------------------------
# conditioning encoder / reconstruction
# ----------------------------------------------------------------------

def test_encoder_zero_weights_gives_zero_scores(small_bundle):
    panel, _, _ = small_bundle
    model = fresh_model("acgate", panel)
    zero_params(model)
    z = model.encode(Tensor(panel.proxies))
    assert_allclose(z.data, 0.0)


def test_encoder_identical_proxies_identical_scores(small_bundle):
    panel, _, _ = small_bundle
    model = fresh_model("acgate", panel)
    proxies = np.tile(panel.proxies[0], (panel.n_entities, 1))
    z = model.encode(Tensor(proxies))
    # rows agree to BLAS reduction-order noise; repeated evaluation is
    # bit-identical (the determinism that actually matters)
    assert_allclose(z.data, z.data[0, 0], atol=1e-12)
    again = model.encode(Tensor(proxies))
    assert np.array_equal(z.data, again.data)


def test_no_recon_contributes_exactly_zero(small_bundle):
    panel, segments, _ = small_bundle
    model = fresh_model("no_recon", panel)
    fr = model.forward(panel, segments[0])
    assert fr.recon.item() == 0.0
    assert fr.total.item() == fr.task.item()


def test_loss_decomposition_exact(small_bundle):
    panel, segments, _ = small_bundle
    mp = small_model_params(recon_weight=2.0)
    model = fresh_model("acgate", panel, mp)
    fr = model.forward(panel, segments[0])
    assert fr.total.item() == fr.task.item() + 2.0 * fr.recon.item()


def test_detached_recon_blocks_encoder_gradient(small_bundle):
    panel, _, _ = small_bundle
    mp = small_model_params(detach_recon=True)
    model = fresh_model("acgate", panel, mp)

    def recon_only():
        z = model.encode(Tensor(panel.proxies))
        return (model.reconstruct(z) - Tensor(panel.proxies)).square().mean()

    enc_params = [model.params[n] for n in sorted(model.params)
                  if n.startswith("enc.")]
    dec_params = [model.params[n] for n in sorted(model.params)
                  if n.startswith("dec.")]
    for p in enc_params + dec_params:
        p.grad = None
    backward(recon_only())
    assert all(p.grad is None or np.all(p.grad == 0.0) for p in enc_params)
    assert any(p.grad is not None and np.any(p.grad != 0.0)
               for p in dec_params)
    # the zero is a blocked path, not a vanishing derivative: finite
    # differences of the recomputed loss do respond to encoder weights
    from helpers import finite_difference_grad
    fd = finite_difference_grad(recon_only, enc_params[:1])
    assert np.any(np.abs(fd[0]) > 1e-8)


def test_attached_recon_reaches_encoder(small_bundle):
    panel, _, _ = small_bundle
    mp = small_model_params(detach_recon=False)
    model = fresh_model("acgate", panel, mp)

    def recon_only():
        z = model.encode(Tensor(panel.proxies))
        return (model.reconstruct(z) - Tensor(panel.proxies)).square().mean()

    enc_params = [model.params[n] for n in sorted(model.params)
                  if n.startswith("enc.")]
    for p in enc_params:
        p.grad = None
    backward(recon_only())
    assert any(p.grad is not None and np.any(p.grad != 0.0)
               for p in enc_params)


def test_decoder_fits_linear_proxy_map():
    # fixed scores, proxies linear in them: recon trains to ~0
    from acgate.optim import Adam
    rng = np.random.default_rng(0)
    n, m = 16, 3
    z = np.linspace(-1.0, 1.0, n)[:, None]
    proxies = np.column_stack([2.0 * z[:, 0] + 0.3, -z[:, 0], 0.5 * z[:, 0]])
    panel_like_mp = small_model_params()
    model = GatedForecaster("acgate", n_entities=n, n_features=1,
                            n_proxies=m, n_statics=0, n_macro=0,
                            mp=panel_like_mp, rng=rng)
    dec = [model.params[k] for k in sorted(model.params)
           if k.startswith("dec.")]
    opt = Adam(dec, lr=1e-2)
    for _ in range(2000):
        opt.zero_grad()
        loss = (model.reconstruct(Tensor(z)) - Tensor(proxies)).square().mean()
        backward(loss)
        opt.step()
    assert loss.item() <= 1e-3


# ----------------------------------------------------------------------
# lag gate
# ----------------------------------------------------------------------

def test_gate_zero_logits_no_penalty_uniform(small_bundle):
    panel, _, _ = small_bundle
    mp = small_model_params(k_max=10, lag_penalty=0.0)
    model = fresh_model("acgate", panel, mp)
    for name in ("gate.w1", "gate.b1", "gate.w2", "gate.b2"):
        model.params[name].data = np.zeros_like(model.params[name].data)
    omega = model.lag_weights(model.encode(Tensor(panel.proxies)))
    assert_allclose(omega.data, 0.1, atol=1e-14)
    lag = LagDistribution.from_omega(omega.data)
    assert_allclose(lag.k_star, 5.5, atol=1e-12)


def test_gate_position_penalty_tilts_towards_near_lags(small_bundle):
    panel, _, _ = small_bundle
    mp = small_model_params(k_max=10, lag_penalty=0.1, temperature=1.0)
    model = fresh_model("acgate", panel, mp)
    for name in ("gate.w1", "gate.b1", "gate.w2", "gate.b2"):
        model.params[name].data = np.zeros_like(model.params[name].data)
    omega = model.lag_weights(model.encode(Tensor(panel.proxies))).data
    # direct evaluation: weights proportional to exp(-0.01 k)
    k = np.arange(1, 11)
    expected = np.exp(-0.01 * k)
    expected /= expected.sum()
    assert_allclose(omega[0], expected, atol=1e-12)
    assert np.all(np.diff(omega[0]) < 0.0)
    lag = LagDistribution.from_omega(omega)
    assert np.all(lag.k_star < 5.5)


def test_gate_penalty_scale_invariant_in_k():
    # penalty gap between lags at the same normalized position k/K is
    # unchanged when K doubles
    lam = 0.1
    for k_max in (6, 12):
        positions = lam * np.arange(1, k_max + 1) / k_max
        gap = positions[k_max // 2 - 1] - positions[k_max - 1]
        assert_allclose(gap, lam * (0.5 - 1.0), atol=1e-15)


def test_gate_rows_are_simplex(small_bundle):
    panel, _, _ = small_bundle
    model = fresh_model("acgate", panel)
    omega = model.lag_weights(model.encode(Tensor(panel.proxies))).data
    assert np.all(omega > 0.0)
    assert_allclose(omega.sum(axis=1), 1.0, atol=1e-10)
    lag = LagDistribution.from_omega(omega)
    assert np.all((lag.k_star >= 1.0) & (lag.k_star <= model.mp.k_max))


# ----------------------------------------------------------------------
# ablation structure (no training needed)
# ----------------------------------------------------------------------

def test_no_ac_encoder_collapses_lag_variation(small_bundle):
    panel, _, _ = small_bundle
    model = fresh_model("no_ac_encoder", panel)
    lag = model.lag_distribution(panel)
    assert lag.k_star_sd == 0.0
    assert np.all(lag.omega == lag.omega[0])
    assert model.gate_sensitivity(panel) == 0.0


def test_uniform_lag_structure(small_bundle):
    panel, _, _ = small_bundle
    mp = small_model_params(k_max=10)
    model = fresh_model("uniform_lag", panel, mp)
    lag = model.lag_distribution(panel)
    assert lag.k_star_sd == 0.0
    assert_allclose(lag.omega, 0.1, atol=1e-15)
    assert_allclose(lag.entropy, np.log(10.0), atol=1e-12)
    assert model.gate_sensitivity(panel) == 0.0


def test_acgate_sensitivity_positive_by_construction(small_bundle):
    panel, _, _ = small_bundle
    model = fresh_model("acgate", panel, seed=3)
    assert model.gate_sensitivity(panel) > 0.0


def test_lag_distribution_time_invariant(small_bundle):
    # omega depends on the proxies only, so k* is identical whichever
    # segment is evaluated and across repeated computation
    panel, segments, _ = small_bundle
    model = fresh_model("acgate", panel, seed=5)
    out_train = model.evaluate(panel, segments[0])
    out_test = model.evaluate(panel, segments[2])
    assert np.array_equal(out_train.lag.k_star, out_test.lag.k_star)
    assert np.array_equal(out_train.lag.omega, out_test.lag.omega)


# ----------------------------------------------------------------------
# information flow
# ----------------------------------------------------------------------

def test_backbone_input_ignores_contemporaneous_observation(small_bundle):
    panel, segments, _ = small_bundle
    train_seg = segments[0]
    for variant in ("acgate", "plain_lstm"):
        model = fresh_model(variant, panel, seed=1)
        base = model.forward(panel, train_seg, collect_inputs=True)
        t_probe = train_seg.first_valid + 2
        dyn = panel.dynamic.copy()
        dyn[:, t_probe, :] += 7.7
        perturbed = panel.replace(dynamic=dyn)
        probe = model.forward(perturbed, train_seg, collect_inputs=True)
        j = t_probe - train_seg.first_valid
        assert np.array_equal(base.inputs[:, j, :], probe.inputs[:, j, :])
        # prediction at the perturbed step is bit-identical too
        assert np.array_equal(base.predictions[:, j], probe.predictions[:, j])
        # later steps do see the value through their lag windows
        assert not np.array_equal(base.predictions[:, j + 1],
                                  probe.predictions[:, j + 1])


# ----------------------------------------------------------------------
# forward basics
# ----------------------------------------------------------------------

def test_zero_weights_loss_equals_target_variance(small_bundle):
    panel, segments, _ = small_bundle
    train_seg = segments[0]
    model = fresh_model("acgate", panel)
    zero_params(model)
    # zero-mean the segment target so variance == mean square
    tgt = panel.target.copy()
    seg_slice = slice(train_seg.first_valid, train_seg.end + 1)
    tgt[:, seg_slice] -= panel.target[:, seg_slice].mean()
    fr = model.forward(panel.replace(target=tgt), train_seg)
    seg_y = tgt[:, seg_slice]
    assert_allclose(fr.task.item(), np.var(seg_y), atol=1e-12)
    assert_allclose(fr.predictions, 0.0)


def test_full_model_gradients_match_finite_differences():
    panel, segments, _ = make_bundle(n=4, t=12, k=3)
    mp = small_model_params(k_max=3, hidden=3, layers=2, embed_dim=2,
                            encoder_width=3, gate_width=3, decoder_width=3,
                            recon_weight=0.7, detach_recon=False)
    model = fresh_model("acgate", panel, mp)
    params = model.trainable_params()

    def loss():
        return model.forward(panel, segments[0]).total

    check_gradients(loss, params, tol=1e-4)


def test_evaluate_returns_metrics_and_lag(small_bundle):
    panel, segments, _ = small_bundle
    model = fresh_model("acgate", panel)
    out = model.evaluate(panel, segments[2])
    assert out.predictions.shape == (panel.n_entities, segments[2].n_valid)
    assert out.lag is not None and out.lag.structural
    m = forecast_metrics(
        panel.target[:, segments[2].first_valid:].reshape(-1),
        out.predictions.reshape(-1))
    assert np.isfinite(m.mse)


def test_empty_segment_rejected(small_bundle):
    panel, _, _ = small_bundle
    model = fresh_model("acgate", panel)
    bad = SegmentView("bad", 10, 9, first_valid=10)
    with pytest.raises(DataError):
        model.forward(panel, bad)


# ----------------------------------------------------------------------
# plain LSTM baseline
# ----------------------------------------------------------------------

def test_plain_lstm_backbone_parameter_count_matches(small_bundle):
    panel, _, _ = small_bundle
    acg = fresh_model("acgate", panel)
    plain = fresh_model("plain_lstm", panel)
    assert plain.backbone_param_count() == acg.backbone_param_count()


def test_plain_lstm_zero_weights_constant_prediction(small_bundle):
    panel, segments, _ = small_bundle
    model = fresh_model("plain_lstm", panel)
    zero_params(model)
    fr = model.forward(panel, segments[0])
    assert np.all(fr.predictions == fr.predictions[0, 0])


def test_plain_lstm_structural_lag_is_none_but_diagnostic_exists(small_bundle):
    panel, segments, _ = small_bundle
    model = fresh_model("plain_lstm", panel, seed=2)
    assert model.lag_distribution(panel) is None
    diag = model.diagnostic_lag_profile(panel, segments[0], n_probe_steps=3)
    assert not diag.structural
    assert diag.omega.shape == (panel.n_entities, model.mp.k_max)
    assert_allclose(diag.omega.sum(axis=1), 1.0, atol=1e-10)
    assert diag.k_star_sd > 0.0  # varies across entities


# ----------------------------------------------------------------------
# grouped distributed-lag baseline
# ----------------------------------------------------------------------

def lagged_target_panel(n=6, t=40, lag=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, t, 1))
    y = np.zeros((n, t))
    y[:, lag:] = x[:, :-lag, 0]
    y[:, :lag] = x[:, :1, 0]  # filler before the lag kicks in
    return Panel(entities=[f"E{i}" for i in range(n)], times=np.arange(t),
                 dynamic=x, target=y, proxies=rng.normal(size=(n, 2)))


def test_ardl_recovers_pure_lag_relation():
    panel = lagged_target_panel()
    k = 5
    train = SegmentView("train", 0, 29, first_valid=k)
    model = fit_grouped_ardl(panel, train, k_max=k, n_groups=1)
    coef = model.coefs[0]
    expected = np.zeros(k + 1)
    expected[1] = 1.0  # lag-2 feature sits at index 1 (lags are 1-based)
    assert np.max(np.abs(coef - expected)) <= 1e-8
    test_seg = SegmentView("test", 30, 39, first_valid=30)
    preds = ardl_predict(model, panel, test_seg)
    assert_allclose(preds, panel.target[:, 30:], atol=1e-8)


def test_ardl_deterministic():
    panel = lagged_target_panel(seed=5)
    train = SegmentView("train", 0, 29, first_valid=5)
    a = fit_grouped_ardl(panel, train, k_max=5, n_groups=3)
    b = fit_grouped_ardl(panel, train, k_max=5, n_groups=3)
    assert np.array_equal(a.coefs, b.coefs)
    assert np.array_equal(a.group_of, b.group_of)


def test_ardl_groups_from_train_window_only():
    panel = lagged_target_panel(seed=7)
    train = SegmentView("train", 0, 29, first_valid=5)
    base = assign_groups(panel, train, 3)
    tgt = panel.target.copy()
    tgt[:, 30:] += 1000.0
    probed = assign_groups(panel.replace(target=tgt), train, 3)
    assert np.array_equal(base, probed)


def test_ardl_constant_target_degenerates_gracefully():
    rng = np.random.default_rng(1)
    n, t = 4, 30
    x = rng.normal(size=(n, t, 1))
    y = np.full((n, t), 2.5)
    panel = Panel(entities=[f"E{i}" for i in range(n)], times=np.arange(t),
                  dynamic=x, target=y, proxies=rng.normal(size=(n, 2)))
    train = SegmentView("train", 0, 19, first_valid=4)
    model = fit_grouped_ardl(panel, train, k_max=4, n_groups=3)
    test_seg = SegmentView("test", 20, 29, first_valid=20)
    preds = ardl_predict(model, panel, test_seg)
    assert_allclose(preds, 2.5, atol=1e-8)
    # against a varying test target centered on the constant, R^2 = 0
    y_test = 2.5 + np.array([-1.0, 1.0] * 20).reshape(4, 10)
    m = forecast_metrics(y_test.reshape(-1), preds.reshape(-1))
    assert_allclose(m.r2, 0.0, atol=1e-10)


def test_ardl_singular_design_uses_ridge_flag():
    rng = np.random.default_rng(2)
    n, t = 3, 20
    x = np.zeros((n, t, 2))
    x[:, :, 0] = rng.normal(size=(n, t))
    x[:, :, 1] = x[:, :, 0]  # duplicated feature: rank-deficient design
    y = rng.normal(size=(n, t))
    panel = Panel(entities=[f"E{i}" for i in range(n)], times=np.arange(t),
                  dynamic=x, target=y, proxies=rng.normal(size=(n, 2)))
    train = SegmentView("train", 0, 14, first_valid=3)
    model = fit_grouped_ardl(panel, train, k_max=3, n_groups=1)
    assert model.ridge_fallback


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, small_bundle):
    panel, segments, _ = small_bundle
    model = fresh_model("acgate", panel, seed=4)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.variant, {"k_max": model.mp.k_max},
                    model.state_dict())
    variant, hyper, state = load_checkpoint(path)
    assert variant == "acgate"
    assert hyper == {"k_max": 4}
    clone = fresh_model("acgate", panel, seed=9)
    clone.load_state_dict(state)
    a = model.evaluate(panel, segments[2])
    b = clone.evaluate(panel, segments[2])
    assert np.array_equal(a.predictions, b.predictions)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(DataError):
        load_checkpoint(path)


# ----------------------------------------------------------------------
# flop scaling
# ----------------------------------------------------------------------

def _epoch_flops(t_steps, k_max):
    panel, _, _ = make_bundle(n=6, t=t_steps, k=k_max)
    mp = small_model_params(k_max=k_max)
    model = build_model("acgate", panel, mp, seed=0)
    seg = SegmentView("probe", 0, t_steps - 1, first_valid=20)
    ad.reset_flop_counter()
    model.forward(panel, seg)
    return ad.flop_count()


def test_flops_affine_in_t():
    f1, f2, f3 = _epoch_flops(40, 4), _epoch_flops(60, 4), _epoch_flops(80, 4)
    inc1, inc2 = f2 - f1, f3 - f2
    assert inc1 > 0
    assert abs(inc1 - inc2) <= 0.05 * inc2


def test_flops_linear_increment_in_k():
    # fixed valid window (first_valid=20 covers every tested K)
    f1, f2, f3 = _epoch_flops(60, 4), _epoch_flops(60, 8), _epoch_flops(60, 12)
    inc1, inc2 = f2 - f1, f3 - f2
    assert inc1 > 0
    assert abs(inc1 - inc2) <= 0.05 * max(inc1, inc2)
