import math

import numpy as np
import pytest

from crstc import stvae, synthgen, tensor as tn
from crstc.stvae import STVAEConfig

from conftest import central_diff, rel_error

TINY = dict(latent_dim=2, hidden=(8,), lstm_hidden=8, beta_kl=0.7, lambda_sparse=0.3,
            sigma_prior=0.8)


def _tiny(seed=0, d=3):
    cfg = STVAEConfig(**TINY, seed=seed)
    return cfg, stvae.init_params(d, cfg)


def _zero_params(d, cfg):
    p = stvae.init_params(d, cfg)
    for k in p.names():
        p.tensors[k] = tn.parameter(np.zeros_like(p[k].data))
    return p


def test_config_validation():
    with pytest.raises(ValueError):
        STVAEConfig(latent_dim=0)
    with pytest.raises(ValueError):
        STVAEConfig(sigma_prior=0)
    with pytest.raises(ValueError):
        STVAEConfig(beta_kl=-1)
    with pytest.raises(ValueError):
        STVAEConfig.from_dict({"latent": 3})
    assert STVAEConfig.from_dict(STVAEConfig().to_dict()) == STVAEConfig()


def test_encode_zero_network():
    cfg = STVAEConfig(**TINY)
    mu, lv = stvae.encode(np.ones((4, 3)), _zero_params(3, cfg))
    np.testing.assert_array_equal(mu.data, 0.0)
    np.testing.assert_array_equal(lv.data, 0.0)


def test_encode_deterministic_and_dim_checked(rng):
    _, p = _tiny()
    x = rng.standard_normal((5, 3))
    a, b = stvae.encode(x, p), stvae.encode(x, p)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    with pytest.raises(ValueError):
        stvae.encode(rng.standard_normal((5, 4)), p)


def test_log_var_is_clamped(rng):
    _, p = _tiny()
    p.tensors["enc.1.b"] = tn.parameter(np.array([0.0, 0.0, 50.0, -50.0]))
    _, lv = stvae.encode(rng.standard_normal((3, 3)) * 0.01, p)
    assert lv.data.max() <= 10 and lv.data.min() >= -10
    np.testing.assert_allclose(lv.data[:, 0], 10.0)
    np.testing.assert_allclose(lv.data[:, 1], -10.0)


def test_reparameterize_examples():
    mu, lv = tn.tensor([[0.5, -1.0]]), tn.tensor([[0.0, 0.0]])
    np.testing.assert_array_equal(stvae.reparameterize(mu, lv, np.zeros((1, 2))).data, mu.data)
    np.testing.assert_array_equal(stvae.reparameterize(mu, lv, np.ones((1, 2))).data, mu.data + 1)
    with pytest.raises(ValueError):
        stvae.reparameterize(mu, lv, np.zeros((2, 2)))


def test_reparameterize_variance_monte_carlo():
    rng = np.random.default_rng(7)
    n = 100_000
    lv = np.array([-1.0, 0.0, 1.5])
    z = stvae.reparameterize(tn.tensor(np.zeros((n, 3))), tn.tensor(np.tile(lv, (n, 1))),
                             rng.standard_normal((n, 3))).data
    np.testing.assert_allclose(z.var(axis=0), np.exp(lv), rtol=0.05)


def test_transition_zero_params():
    cfg = STVAEConfig(**TINY)
    p = _zero_params(3, cfg)
    zs = [tn.tensor(np.ones((2, 2)) * t) for t in range(4)]
    zhats, hs = stvae.transition_forward(zs, p)
    assert len(zhats) == 3 and len(hs) == 4
    for a in zhats + hs:
        np.testing.assert_array_equal(a.data, 0.0)


def test_transition_needs_two_steps():
    _, p = _tiny()
    with pytest.raises(ValueError):
        stvae.transition_forward([tn.tensor(np.zeros((1, 2)))], p)


def test_transition_is_causal(rng):
    _, p = _tiny(seed=3)
    base = rng.standard_normal((6, 1, 2))
    k = 3
    pert = base.copy()
    pert[k] += 5.0
    a, _ = stvae.transition_forward([tn.tensor(z) for z in base], p)
    b, _ = stvae.transition_forward([tn.tensor(z) for z in pert], p)
    # a[i] predicts frame i+2 (1-based); frames t <= k+1 (1-based) must be untouched
    for i in range(len(a)):
        t = i + 1  # zero-based frame index of the prediction
        if t <= k:
            np.testing.assert_array_equal(a[i].data, b[i].data)
        else:
            assert not np.allclose(a[i].data, b[i].data)


def test_transition_gradcheck(rng):
    _, p = _tiny(seed=1)
    zs = rng.standard_normal((5, 2, 2))
    params = [p[k] for k in ("trans.w_x", "trans.w_h", "trans.b", "trans.w_out", "trans.b_out")]

    def loss():
        zh, hs = stvae.transition_forward([tn.tensor(z) for z in zs], p)
        return tn.add(tn.sum(tn.square(tn.concat(zh))), tn.mean(tn.concat(hs)))

    analytic = tn.grad(loss(), params)
    numeric = central_diff(lambda: loss().item(), [q.data for q in params])
    for a, n in zip(analytic, numeric):
        assert rel_error(a, n) < 1e-4


def test_elbo_breakdown_sums_to_total(rng):
    cfg, p = _tiny()
    batch = [rng.standard_normal((6, 3)) for _ in range(2)]
    parts = stvae.elbo_loss(batch, p, cfg, rng)
    assert abs(parts.total.item() - (parts.recon + parts.kl + parts.sparse)) < 1e-9


def test_elbo_weight_zero_is_pure_recon(rng):
    cfg = STVAEConfig(**{**TINY, "beta_kl": 0.0, "lambda_sparse": 0.0})
    p = stvae.init_params(3, cfg)
    batch = [rng.standard_normal((6, 3)) for _ in range(2)]
    noise = rng.standard_normal((12, 2))
    parts = stvae.elbo_loss(batch, p, cfg, noise)
    mu, lv = stvae.encode(stvae.stack_batch(batch), p)
    xhat = stvae.decode(stvae.reparameterize(mu, lv, noise), p)
    expected = np.mean((xhat.data - stvae.stack_batch(batch)) ** 2)
    assert parts.total.item() == pytest.approx(expected, abs=1e-12)
    assert parts.kl == 0 and parts.sparse == 0


def test_perfect_reconstruction_has_zero_recon():
    # identity-like linear encoder/decoder (no hidden layers) reproduces its input exactly
    cfg = STVAEConfig(latent_dim=2, hidden=(), lstm_hidden=4)
    p = stvae.init_params(2, cfg)
    w = np.zeros((2, 4)); w[0, 0] = w[1, 1] = 1.0
    p.tensors["enc.0.w"] = tn.parameter(w)
    p.tensors["dec.0.w"] = tn.parameter(np.eye(2))
    x = [np.random.default_rng(0).standard_normal((5, 2))]
    assert stvae.elbo_loss(x, p, cfg, None).recon == pytest.approx(0.0, abs=1e-15)


def test_kl_zero_for_matched_gaussians():
    sigma = 0.7
    mu = tn.tensor([[0.3, -0.2]])
    kl = stvae._gauss_kl(mu, tn.tensor(np.full((1, 2), 2 * math.log(sigma))), mu,
                         2 * math.log(sigma))
    np.testing.assert_allclose(kl.data, 0.0, atol=1e-15)


def test_kl_matches_closed_form():
    mu, lv, m0, s0 = 0.4, -0.3, 1.1, 0.6
    kl = stvae._gauss_kl(tn.tensor([[mu]]), tn.tensor([[lv]]), tn.tensor([[m0]]),
                         2 * math.log(s0)).data[0, 0]
    s1 = math.exp(lv / 2)
    ref = math.log(s0 / s1) + (s1 ** 2 + (mu - m0) ** 2) / (2 * s0 ** 2) - 0.5
    assert kl == pytest.approx(ref, abs=1e-14)


def test_elbo_empty_batch():
    cfg, p = _tiny()
    with pytest.raises(ValueError):
        stvae.elbo_loss([], p, cfg, None)


def test_elbo_gradcheck_tiny():
    cfg, p = _tiny(seed=2)
    rng = np.random.default_rng(5)
    batch = [rng.standard_normal((6, 3)) for _ in range(2)]
    noise = rng.standard_normal((12, 2))
    params = p.values()
    analytic = tn.grad(stvae.elbo_loss(batch, p, cfg, noise).total, params)
    numeric = central_diff(lambda: stvae.elbo_loss(batch, p, cfg, noise).total.item(),
                           [q.data for q in params])
    worst = max(rel_error(a, n) for a, n in zip(analytic, numeric))
    assert worst < 1e-4


def _tiny_data(seed=0, n_seq=6, T=20):
    cfg = synthgen.SynthConfig(T=T, n=3, obs_dim=3, min_dwell=5, mean_dwell=8, n_sequences=n_seq,
                               seed=seed)
    return [s.x for s in synthgen.generate_dataset(cfg)]


def test_train_is_deterministic():
    data = _tiny_data()
    cfg = STVAEConfig(latent_dim=2, hidden=(8,), lstm_hidden=8, epochs=3, batch_size=4, seed=11)
    a, b = stvae.train(data, cfg), stvae.train(data, cfg)
    assert a.log == b.log
    for k in a.params.names():
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_train_log_and_best_epoch():
    data = _tiny_data()
    cfg = STVAEConfig(latent_dim=2, hidden=(16,), lstm_hidden=8, epochs=15, batch_size=3, lr=5e-3)
    res = stvae.train(data, cfg)
    totals = [r["total"] for r in res.log]
    assert all(math.isfinite(t) for t in totals)
    assert totals[-1] < totals[0]
    assert res.log[res.best_epoch - 1]["total"] == min(totals)
    assert res.log_csv().splitlines()[0] == "epoch,recon,kl,sparse,total"


def test_train_rejects_bad_input():
    cfg = STVAEConfig(epochs=1)
    with pytest.raises(ValueError):
        stvae.train([], cfg)
    with pytest.raises(ValueError):
        stvae.train([np.zeros((5, 3)), np.zeros((5, 4))], cfg)


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_train_names_nonfinite_term():
    cfg = STVAEConfig(latent_dim=2, hidden=(4,), lstm_hidden=4, epochs=1)
    with pytest.raises(FloatingPointError, match="epoch 1"):
        stvae.train([np.full((4, 3), 1e200)], cfg)


def test_strong_sparsity_shrinks_transition_weights():
    data = _tiny_data(n_seq=8)
    base = dict(latent_dim=2, hidden=(16,), lstm_hidden=8, epochs=50, batch_size=4, seed=4, lr=1e-2)
    free = stvae.train(data, STVAEConfig(**base, lambda_sparse=0.0)).params
    tight = stvae.train(data, STVAEConfig(**base, lambda_sparse=1e3)).params

    def mean_abs(p):
        ws = p.transition_weights()
        return sum(np.abs(w.data).sum() for w in ws) / sum(w.data.size for w in ws)

    assert mean_abs(tight) < 0.1 * mean_abs(free)


def test_embeddings_shape_and_first_residual(rng):
    _, p = _tiny()
    seq = rng.standard_normal((7, 3))
    e = stvae.extract_embeddings(seq, p)
    assert e.shape == (7, 8 + 2)
    np.testing.assert_array_equal(e[0, 8:], 0.0)
    np.testing.assert_array_equal(e, stvae.extract_embeddings(seq, p))
    assert stvae.extract_embeddings(seq, p, "hidden").shape == (7, 8)
    assert stvae.extract_embeddings(seq, p, "residual").shape == (7, 2)


def test_embeddings_are_causal(rng):
    _, p = _tiny(seed=9)
    seq = rng.standard_normal((8, 3))
    changed = seq.copy()
    changed[5:] += 3.0
    a, b = stvae.extract_embeddings(seq, p), stvae.extract_embeddings(changed, p)
    np.testing.assert_array_equal(a[:5], b[:5])
    assert not np.allclose(a[5:], b[5:])


def test_model_file_roundtrip(tmp_path, rng):
    _, p = _tiny()
    stvae.save_model(tmp_path / "m.bin", p, np.arange(3.0), np.ones(3))
    q, mean, std = stvae.load_model(tmp_path / "m.bin")
    assert q.input_dim == 3 and q.latent_dim == 2 and q.n_enc == 2
    for k in p.names():
        np.testing.assert_array_equal(p[k].data, q[k].data)
    np.testing.assert_array_equal(mean, np.arange(3.0))
