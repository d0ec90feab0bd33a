import numpy as np
import pytest

from conftest import two_party
from gradcheck import directional_probes, probe_error
from ppnas.backend import MirrorBackend, RealBackend, as_backend
from ppnas.errors import ConfigError, FormatError, ProtocolError
from ppnas.nas import (
    ArchParams,
    NetState,
    SuperNet,
    TrainConfig,
    UnitKind,
    argmax_units,
    col2im,
    derive_architecture,
    epoch_order,
    im2col,
    init_params,
    load_state,
    mixed_layer_forward,
    pp_nas_search,
    read_checkpoint,
    resume_state,
    reveal_losses,
    save_checkpoint,
    share_values,
    split_dataset,
    supernet_backward,
    supernet_forward,
    unit_forward,
    update_arch,
)
from ppnas.oracle import oracle_conv_same, oracle_fc, oracle_maxpool

TINY = SuperNet(N=2, side=4, hidden=6, classes=2)
ALL_UNITS = SuperNet(N=1, side=4, hidden=4, classes=3,
                     units=(UnitKind.CONV3X3, UnitKind.CONV5X5, UnitKind.FULLY_CONNECTED,
                            UnitKind.MAXPOOL2X2, UnitKind.IDENTITY))


def toy_values(net, n=64, seed=0, cfg=None):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, net.classes, n)
    x = rng.uniform(0, 0.5, (n, net.features))
    x[:, : net.features // 2] += 0.5 * (lab[:, None] % 2)   # class parity sets the top half bright
    y = np.eye(net.classes)[lab]
    cfg = cfg or TrainConfig(epochs=2, batch_size=8)
    v = init_params(net, cfg)
    v.update(split_dataset(x, y, cfg.seed))
    return v, cfg


def test_weight_shapes():
    s = ALL_UNITS.weight_shapes()
    assert s["l0.u0.w"] == (9, 1) and s["l0.u1.w"] == (25, 1)
    assert s["l0.u2.w"] == (16, 16)
    assert "l0.u3.w" not in s and "l0.u4.w" not in s
    with pytest.raises(ConfigError):
        SuperNet(side=5, units=(UnitKind.MAXPOOL2X2,))
    with pytest.raises(ConfigError):
        SuperNet(N=0)


@pytest.mark.parametrize("k", [3, 5])
def test_conv_unit_matches_oracle(k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(3, 36))
    w = rng.normal(size=(k * k, 1))
    kind = UnitKind.CONV3X3 if k == 3 else UnitKind.CONV5X5
    out, _ = unit_forward(RealBackend(), kind, {"u.w": w, "u.b": np.array([0.3])}, "u.", x, 6)
    ref = np.maximum(oracle_conv_same(x.reshape(3, 6, 6), w.reshape(k, k), 0.3), 0)
    assert np.allclose(out.reshape(3, 6, 6), ref)


def test_fc_and_pool_units_match_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 16))
    W, b = rng.normal(size=(16, 16)), rng.normal(size=16)
    out, _ = unit_forward(RealBackend(), UnitKind.FULLY_CONNECTED, {"u.w": W, "u.b": b}, "u.", x, 4)
    assert np.allclose(out, np.maximum(oracle_fc(x, W, b), 0))
    out, _ = unit_forward(RealBackend(), UnitKind.MAXPOOL2X2, {}, "u.", x, 4)
    pooled = oracle_maxpool(x.reshape(2, 4, 4))
    assert np.allclose(out.reshape(2, 4, 4), np.repeat(np.repeat(pooled, 2, 1), 2, 2))


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 25))
    c = rng.normal(size=(2 * 25, 9))
    lhs = np.sum(im2col(x, 5, 3) * c)
    rhs = np.sum(x * col2im(RealBackend(), c, 2, 5, 3))
    assert lhs == pytest.approx(rhs)


def test_mixed_layer_is_weighted_sum():
    net = SuperNet(N=1, side=4, units=(UnitKind.IDENTITY, UnitKind.MAXPOOL2X2))
    x = np.arange(32, dtype=float).reshape(2, 16)
    be = RealBackend()
    out, _ = mixed_layer_forward(be, net, {}, np.array([0.25, 0.75]), x, 0)
    pool, _ = unit_forward(be, UnitKind.MAXPOOL2X2, {}, "", x, 4)
    assert np.allclose(out, 0.25 * x + 0.75 * pool)


def test_argmax_and_ties():
    assert argmax_units(np.array([[5.0, 1.0, 1.0]])) == [0]
    assert argmax_units(np.array([[1.0, 2.0, 2.0], [3.0, 3.0, 3.0]])) == [1, 0]


def test_derive_architecture_requires_joint_call():
    arch = ArchParams(np.array([[5.0, 1.0, 1.0], [0.0, 0.0, 2.0]]))
    with pytest.raises(ProtocolError):
        derive_architecture(arch, SuperNet(), RealBackend())
    a = derive_architecture(arch, SuperNet(), RealBackend(), joint=True)
    assert a.indices == [0, 2]
    assert a.units == [UnitKind.CONV3X3, UnitKind.IDENTITY]


def test_derive_architecture_on_shares():
    s0, s1 = share_values({"alpha": np.array([[0.1, 0.9, 0.2], [2.0, 1.0, 0.0]])}, seed=3)

    def fn(sess, a):
        out = derive_architecture(ArchParams(a), SuperNet(), sess, joint=True)
        return out.indices, dict(sess.audit.counts)

    (i0, c0), (i1, _) = two_party(fn, (s0["alpha"], s1["alpha"]))
    assert i0 == i1 == [1, 0]
    assert c0 == {"derive_architecture": 1}


def test_epoch_order_is_public_and_seeded():
    assert np.array_equal(epoch_order(10, 1, 0), epoch_order(10, 1, 0))
    assert not np.array_equal(epoch_order(100, 1, 0), epoch_order(100, 1, 1))
    assert sorted(epoch_order(10, 1, 3)) == list(range(10))


def test_arch_steps_reduce_validation_loss():
    # train W first so the candidate units actually differ, then step alpha only
    v, cfg = toy_values(TINY, n=256, cfg=TrainConfig(epochs=6, batch_size=16, eta_A=0.0, eta_W=1.0))
    be = RealBackend()
    state, data = load_state(be, v)
    pp_nas_search(data, TINY, state, cfg, be)
    arch_cfg = TrainConfig(eta_A=2.0)
    losses = [update_arch(be, TINY, state, data.x_val, data.y_val, arch_cfg, with_loss=True) for _ in range(21)]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.8 * losses[0]


def test_weight_training_fits_linear_task():
    v, cfg = toy_values(TINY, n=256, cfg=TrainConfig(epochs=12, batch_size=16, eta_A=0.0, eta_W=1.0))
    be = RealBackend()
    state, data = load_state(be, v)
    res = pp_nas_search(data, TINY, state, cfg, be)
    lw = [l for l, _ in reveal_losses(be, res.history)]
    assert lw[-1] < 0.5 * lw[0]


def test_end_to_end_gradient_real():
    v, cfg = toy_values(ALL_UNITS, n=16)
    x, y = v["x_train"], v["y_train"]
    params = {k: a for k, a in v.items() if not k.startswith(("x_", "y_"))}

    def F(d):
        be = RealBackend(seed=2)
        st, _ = load_state(be, d)
        p, _ = supernet_forward(be, ALL_UNITS, st, x, cfg.softmax)
        return -np.log(p[y.astype(bool)]).sum()

    be = RealBackend(seed=2)
    st, _ = load_state(be, params)
    _, cache = supernet_forward(be, ALL_UNITS, st, x, cfg.softmax)
    gW, ga = supernet_backward(be, ALL_UNITS, st, cache, y)
    g = dict(gW, alpha=ga)
    an, fd = directional_probes(F, params, g, 20, 1e-4, np.random.default_rng(3))
    assert probe_error(an, fd) < 1e-2


def test_mirror_run_is_deterministic():
    v, cfg = toy_values(TINY)
    outs = []
    for _ in range(2):
        be = MirrorBackend(seed=cfg.seed)
        state, data = load_state(be, v)
        res = pp_nas_search(data, TINY, state, cfg, be)
        outs.append(be.decode(res.arch.alpha))
    assert np.array_equal(outs[0], outs[1])


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    v, cfg = toy_values(TINY)
    be = MirrorBackend(seed=cfg.seed)
    state, data = load_state(be, v)
    full = pp_nas_search(data, TINY, state, cfg, be)

    ck = tmp_path / "ck.ppna"
    be1 = MirrorBackend(seed=cfg.seed)
    state1, data1 = load_state(be1, v)
    pp_nas_search(data1, TINY, state1, TrainConfig(**{**cfg.__dict__, "epochs": 1}), be1, checkpoint=ck)
    # the checkpoint digest covers the training config, so resume under the full config
    header = read_checkpoint(ck)
    assert header.epoch == 1 and not header.aborted

    be2 = MirrorBackend(seed=cfg.seed)
    cfg1 = TrainConfig(**{**cfg.__dict__, "epochs": 1})
    st2, epoch = resume_state(ck, be2, TINY, cfg1)
    res = pp_nas_search(data1, TINY, st2, cfg, be2, start_epoch=epoch)
    assert np.array_equal(res.arch.alpha, full.arch.alpha)
    for k in full.state.W:
        assert np.array_equal(res.state.W[k], full.state.W[k])


def test_checkpoint_errors(tmp_path):
    v, cfg = toy_values(TINY)
    be = MirrorBackend()
    state, _ = load_state(be, v)
    p = tmp_path / "a.ppna"
    save_checkpoint(p, be, TINY, cfg, state, 1)
    raw = p.read_bytes()
    (tmp_path / "t.ppna").write_bytes(raw[:-9])
    with pytest.raises(FormatError, match="offset"):
        read_checkpoint(tmp_path / "t.ppna")
    (tmp_path / "m.ppna").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_checkpoint(tmp_path / "m.ppna")
    with pytest.raises(ConfigError):
        resume_state(p, MirrorBackend(), TINY, TrainConfig(epochs=9))
    with pytest.raises(ConfigError):
        resume_state(p, RealBackend(), TINY, cfg)


def test_secure_search_tracks_mirror():
    v, cfg = toy_values(TINY, n=32, cfg=TrainConfig(epochs=1, batch_size=8))
    shares = share_values(v, seed=5)

    def fn(sess):
        be = as_backend(sess)
        state, data = load_state(be, shares[sess.party])
        res = pp_nas_search(data, TINY, state, cfg, sess)
        return be.reveal(res.arch.alpha, "test"), reveal_losses(sess, res.history)

    (alpha, losses), _ = two_party(fn, seed=cfg.seed, test_reveal=True)
    be = MirrorBackend(seed=cfg.seed)
    state, data = load_state(be, v)
    res = pp_nas_search(data, TINY, state, cfg, be)
    assert np.abs(alpha - be.decode(res.arch.alpha)).max() < 64 * 2.0 ** -16
    assert abs(losses[0][0] - reveal_losses(be, res.history)[0][0]) < 1e-3


def test_search_state_containers():
    st = NetState({"w": np.zeros(2)}, ArchParams(np.ones((1, 3))))
    assert st.alpha.shape == (1, 3)
