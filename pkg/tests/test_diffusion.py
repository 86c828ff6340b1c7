import math

import numpy as np
import pytest
import torch

from gust.diffusion import (FREEZE_PRESETS, Checkpoint, ConditionalDDPM, DenoiserConfig,
                            FreezeSpec, TrainConfig, ancestral_sample, build_model,
                            diffusion_loss, finetune, forward_sample, frozen_parameter_names,
                            init_model, make_schedule, mc_property_uq, predict_noise, pretrain,
                            sample, summarize, to_signal)
from gust.diffusion.checkpoint import dumps, loads
from gust.exceptions import FormatError, InvalidSchedule, ShapeMismatch, UnknownBlockIndex

from conftest import cross_cell, random_cell

# 2 levels, one channel per layer, attention in the coarse level: 495 parameters
TINY = DenoiserConfig(levels=2, base_channels=1, channel_mults=(1, 1), attention_levels=(2,),
                      time_embed_dim=2, spade_hidden=1, max_groups=1)
SMALL = DenoiserConfig(levels=2, base_channels=8, channel_mults=(1, 2), attention_levels=(2,),
                       time_embed_dim=16, spade_hidden=8)


def _pairs(n=6, size=8, seed=0):
    rng = np.random.default_rng(seed)
    nom = np.stack([random_cell(rng, (size, size)) for _ in range(n)])
    fab = np.stack([random_cell(rng, (size, size)) for _ in range(n)])
    return nom, fab


@pytest.fixture(scope="module")
def small_ckpt():
    nom, fab = _pairs()
    return pretrain((nom, fab), make_schedule(20, 1e-3, 0.2), SMALL,
                    TrainConfig(iterations=20, batch_size=4, seed=3))


# -- schedule ------------------------------------------------------------------

def test_single_step_schedule():
    s = make_schedule(1, 0.5, 0.5)
    assert s.alpha_bars[1] == 0.5
    assert s.alpha_bars[0] == 1.0


def test_standard_schedule_terminal_alpha_bar():
    s = make_schedule(1000)
    expected = math.prod(1 - (1e-4 + (0.02 - 1e-4) * i / 999) for i in range(1000))
    assert s.alpha_bars[-1] == pytest.approx(expected, rel=1e-10)
    assert s.alpha_bars[-1] == pytest.approx(4.0e-5, rel=0.05)
    assert np.all(np.diff(s.alpha_bars) < 0)


@pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 1e-4, 1.0),
                                  (2.5,)])
def test_invalid_schedules(args):
    with pytest.raises(InvalidSchedule):
        make_schedule(*args)


def test_forward_sample_special_cases(rng):
    s = make_schedule(50)
    x0 = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(forward_sample(x0, 0, rng.standard_normal((4, 4)), s), x0)
    out = forward_sample(x0, 10, np.zeros((4, 4)), s)
    np.testing.assert_allclose(out, math.sqrt(s.alpha_bars[10]) * x0, rtol=1e-15)
    cell = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    np.testing.assert_array_equal(forward_sample(cell, 0, np.zeros((2, 2)), s), to_signal(cell))
    with pytest.raises(ValueError):
        forward_sample(x0, 51, np.zeros((4, 4)), s)


def test_forward_sample_moments(rng):
    s = make_schedule(200)
    x0 = np.array([[1.0, -1.0], [0.5, 0.0]])
    eps = rng.standard_normal((20000, 2, 2))
    draws = np.stack([forward_sample(x0, 100, e, s) for e in eps])
    ab = s.alpha_bars[100]
    np.testing.assert_allclose(draws.mean(0), math.sqrt(ab) * x0, atol=0.03)
    np.testing.assert_allclose(draws.var(0), 1 - ab, rtol=0.05)


# -- denoiser ------------------------------------------------------------------

def test_tiny_config_parameter_count():
    assert sum(p.numel() for p in init_model(TINY, 0).parameters()) == 495


def test_gradient_matches_finite_differences():
    torch.manual_seed(0)
    model = init_model(TINY, 1).double()
    gen = torch.Generator().manual_seed(5)
    x_nom = torch.randn(2, 1, 4, 4, generator=gen, dtype=torch.float64)
    x_fab = torch.randn(2, 1, 4, 4, generator=gen, dtype=torch.float64)
    eps = torch.randn(2, 1, 4, 4, generator=gen, dtype=torch.float64)
    t = torch.tensor([3, 17])
    abar = torch.from_numpy(make_schedule(20, 1e-3, 0.2).alpha_bars)

    def loss():
        return diffusion_loss(model, x_nom, x_fab, t, eps, abar, kind="l2")

    model.zero_grad()
    loss().backward()
    params = list(model.parameters())
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).numpy()
    numeric = []
    h = 1e-6
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss().item()
                flat[i] = old - h
                down = loss().item()
                flat[i] = old
                numeric.append((up - down) / (2 * h))
    numeric = np.array(numeric)
    assert len(numeric) <= 500
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-3
    scale = np.abs(numeric).max()
    assert np.all(np.abs(analytic - numeric) <= 1e-3 * np.maximum(np.abs(numeric), 1e-2 * scale))


def test_resolution_must_divide():
    with pytest.raises(ValueError):
        SMALL.check_resolution((9, 8))


def test_predict_noise_shape_and_determinism(small_ckpt, rng):
    x_t = rng.standard_normal((8, 8))
    nom = random_cell(rng, (8, 8))
    a = predict_noise(small_ckpt, x_t, 5, nom)
    b = predict_noise(small_ckpt, x_t, 5, nom)
    assert a.shape == (8, 8)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ShapeMismatch):
        predict_noise(small_ckpt, rng.standard_normal((4, 4)), 5, random_cell(rng, (4, 4)))
    with pytest.raises(ValueError):
        predict_noise(small_ckpt, x_t, 0, nom)


def test_prediction_depends_on_condition(small_ckpt, rng):
    x_t = rng.standard_normal((8, 8))
    a = predict_noise(small_ckpt, x_t, 5, np.zeros((8, 8), np.uint8))
    b = predict_noise(small_ckpt, x_t, 5, np.ones((8, 8), np.uint8))
    assert np.abs(a - b).mean() > 1e-4


# -- sampling ------------------------------------------------------------------

def test_ancestral_sample_zero_noise_single_step():
    s = make_schedule(1, 0.3, 0.3)
    x = np.array([0.2, -1.5, 3.0])
    out = ancestral_sample(lambda x, t: np.zeros_like(x), s, x, lambda t: 1 / 0)
    np.testing.assert_allclose(out, x / math.sqrt(0.7), rtol=1e-15)


def test_ancestral_sample_uses_posterior_variance():
    # eps_fn = 0 and constant unit noise give a linear recursion with a closed form
    s = make_schedule(3, 0.1, 0.3)
    x = 1.0
    expect = x
    for t in (3, 2, 1):
        expect = expect / math.sqrt(s.alphas[t - 1])
        if t > 1:
            expect += math.sqrt(s.betas[t - 1])
    out = ancestral_sample(lambda x, t: 0.0, s, x, lambda t: 1.0)
    assert out == pytest.approx(expect, rel=1e-14)


def test_sample_shapes_and_determinism(small_ckpt):
    nom = cross_cell(8, 2)
    a = sample(small_ckpt, nom, 5, rng=11)
    assert a.shape == (5, 8, 8) and a.dtype == np.uint8
    assert set(np.unique(a)) <= {0, 1}
    np.testing.assert_array_equal(a, sample(small_ckpt, nom, 5, rng=11))
    # sample i does not depend on the batch layout or on the total count
    np.testing.assert_array_equal(a[:3], sample(small_ckpt, nom, 3, rng=11, batch_size=2))
    sig = sample(small_ckpt, nom, 2, rng=11, return_signal=True)
    assert sig.dtype.kind == "f"
    with pytest.raises(ShapeMismatch):
        sample(small_ckpt, cross_cell(16, 4), 1)
    with pytest.raises(ValueError):
        sample(small_ckpt, nom, 0)


# -- training ------------------------------------------------------------------

def test_pretrain_is_deterministic():
    nom, fab = _pairs()
    s = make_schedule(20, 1e-3, 0.2)
    tc = TrainConfig(iterations=15, batch_size=4, seed=9)
    a = pretrain((nom, fab), s, SMALL, tc)
    b = pretrain((nom, fab), s, SMALL, tc)
    assert a.trace == b.trace
    assert a == b
    assert a.to_bytes() == b.to_bytes()
    c = pretrain((nom, fab), s, SMALL, TrainConfig(iterations=15, batch_size=4, seed=10))
    assert c.trace != a.trace


def test_pretrain_rejects_mismatched_pairs():
    nom, fab = _pairs()
    with pytest.raises(ShapeMismatch):
        pretrain((nom, fab[:3]), make_schedule(10), SMALL, TrainConfig(iterations=1))


def test_learning_rate_decay():
    tc = TrainConfig(initial_lr=1e-3, decay_factor=0.5, decay_every=10, lr_floor=2e-4)
    assert tc.lr_at(9) == 1e-3
    assert tc.lr_at(10) == 5e-4
    assert tc.lr_at(25) == 2.5e-4
    assert tc.lr_at(1000) == 2e-4


@pytest.mark.slow
def test_pretrain_loss_decreases():
    rng = np.random.default_rng(0)
    nom = np.stack([cross_cell(16, int(w)) for w in rng.integers(2, 6, 200)])
    fab = nom.copy()
    cfg = DenoiserConfig(levels=3, base_channels=16, channel_mults=(1, 2, 2),
                         attention_levels=(3,), time_embed_dim=32, spade_hidden=16)
    ck = pretrain((nom, fab), make_schedule(100, 1e-3, 0.2), cfg,
                  TrainConfig(iterations=2000, batch_size=16, decay_every=500, seed=0))
    trace = np.array(ck.trace)
    assert len(trace) == 2000 and np.all(np.isfinite(trace))
    assert trace[-100:].mean() < 0.5 * trace[:100].mean()


def test_finetune_everything_frozen_is_identity(small_ckpt):
    nom, fab = _pairs(seed=4)
    out = finetune(small_ckpt, (nom, fab), FREEZE_PRESETS["everything"],
                   TrainConfig(iterations=5, batch_size=4))
    for k, v in small_ckpt.tensors.items():
        np.testing.assert_array_equal(out.tensors[k], v)
    assert out.trace == []
    assert out.meta["stages"][-1]["stage"] == "finetune"


def test_finetune_zero_iterations(small_ckpt):
    nom, fab = _pairs(seed=4)
    out = finetune(small_ckpt, (nom, fab), FreezeSpec(), TrainConfig(iterations=0))
    assert all(np.array_equal(out.tensors[k], v) for k, v in small_ckpt.tensors.items())
    assert out.meta["iterations"] == small_ckpt.meta["iterations"]


def test_finetune_freezes_selected_tensors(small_ckpt):
    nom, fab = _pairs(seed=4)
    spec = FreezeSpec(blocks={1})
    out = finetune(small_ckpt, (nom, fab), spec, TrainConfig(iterations=10, batch_size=4))
    frozen = frozen_parameter_names(build_model(small_ckpt), spec)
    assert frozen
    for name in frozen:
        np.testing.assert_array_equal(out.tensors[name], small_ckpt.tensors[name])
    assert any(not np.array_equal(out.tensors[k], v) for k, v in small_ckpt.tensors.items()
               if k not in frozen)


def test_unknown_block_index(small_ckpt):
    nom, fab = _pairs(seed=4)
    with pytest.raises(UnknownBlockIndex):
        finetune(small_ckpt, (nom, fab), FreezeSpec(blocks={3}), TrainConfig(iterations=1))


def test_finetune_resolution_mismatch(small_ckpt):
    nom, fab = _pairs(size=16)
    with pytest.raises(ShapeMismatch):
        finetune(small_ckpt, (nom, fab), FreezeSpec(), TrainConfig(iterations=1))


# -- checkpoint format ----------------------------------------------------------

def test_checkpoint_round_trip(small_ckpt, tmp_path):
    path = tmp_path / "m.gckp"
    small_ckpt.save(path)
    back = Checkpoint.load(path)
    assert back == small_ckpt
    assert path.read_bytes() == back.to_bytes()
    assert back.n_parameters() == sum(p.numel() for p in build_model(back).parameters())


def test_checkpoint_scalar_and_vector_tensors():
    ck = Checkpoint({"s": np.float32(2.5), "v": np.arange(3), "m": np.ones((2, 3))},
                    {"a": [1, 2], "b": {"c": "d"}})
    assert loads(dumps(ck)) == ck


@pytest.mark.parametrize("mutate", [
    lambda b: b[:-1],
    lambda b: b + b"\0",
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + (99).to_bytes(4, "little") + b[8:],
    lambda b: b[:20],
])
def test_checkpoint_corruption(small_ckpt, mutate):
    with pytest.raises(FormatError):
        loads(mutate(small_ckpt.to_bytes()))


# -- property statistics ---------------------------------------------------------

def test_summarize_against_hand_values():
    stats = summarize([[1.0], [3.0]], ["p"], kappa=2.0)["p"]
    assert stats["mean"] == 2.0
    assert stats["std"] == pytest.approx(math.sqrt(2.0))
    assert stats["lcb"] == pytest.approx(2.0 - 2 * math.sqrt(2.0))
    assert stats["q05"] == pytest.approx(1.1)
    assert stats["q95"] == pytest.approx(2.9)


def test_mc_property_uq(small_ckpt):
    nom = cross_cell(8, 2)
    res = mc_property_uq(small_ckpt, nom, 4, lambda c: [7.0, 1.0, 2.0, 3.0], rng=1)
    assert res.values.shape == (4, 4)
    assert res.stats["C11"]["mean"] == 7.0 and res.stats["C11"]["std"] == 0.0
    cells = sample(small_ckpt, nom, 6, rng=2)
    vf = mc_property_uq(small_ckpt, nom, 6, lambda c: c.mean(), rng=2)
    expect = cells.reshape(6, -1).mean(1)
    assert vf.stats["p0"]["mean"] == pytest.approx(expect.mean())
    assert vf.stats["p0"]["std"] == pytest.approx(expect.std(ddof=1))
    with pytest.raises(ValueError):
        mc_property_uq(small_ckpt, nom, 1, lambda c: 0.0)


def test_mc_property_uq_excludes_failures(small_ckpt):
    calls = iter(range(100))

    def flaky(c):
        if next(calls) == 1:
            raise RuntimeError("boom")
        return 1.0

    with pytest.warns(UserWarning):
        res = mc_property_uq(small_ckpt, cross_cell(8, 2), 4, flaky, rng=0)
    assert res.n_excluded == 1 and len(res.values) == 3


# -- estimator -------------------------------------------------------------------

def test_estimator_params_and_fit():
    est = ConditionalDDPM(T=10, levels=2, base_channels=4, channel_mults=(1, 1),
                          time_embed_dim=8, spade_hidden=4, iterations=3, batch_size=2)
    params = est.get_params()
    assert params["T"] == 10 and params["loss"] == "l1"
    nom, fab = _pairs()
    est.fit(nom, fab)
    assert len(est.loss_curve_) == 3
    assert est.predict(nom[:2]).shape == (2, 8, 8)
    assert est.sample(nom[0], 3).shape == (3, 8, 8)
    clone = ConditionalDDPM.from_checkpoint(est.checkpoint_)
    np.testing.assert_array_equal(clone.sample(nom[0], 2, random_state=4),
                                  est.sample(nom[0], 2, random_state=4))
    est.finetune(nom, fab, freeze="attention", iterations=2)
    assert len(est.loss_curve_) == 2
