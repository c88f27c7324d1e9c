import numpy as np
import pytest

from model_helpers import TINY, perturb_invalid, random_inputs, stack_gradcheck, tiny_model
from trajseg import tensor as tn
from trajseg.decoder import DecoderConfig, moe_features
from trajseg.encoder import EncoderConfig, encode, encode_plain, init_encoder
from trajseg.model import VARIANTS, ModelConfig, MotionSegModel
from trajseg.synth import SceneConfig, generate_scene, render_scene
from trajseg.tensor import Tensor


# ---------------------------------------------------------------- configs

def test_default_dimensions():
    cfg = ModelConfig()
    assert cfg.encoder.input_dim == 36
    assert (cfg.encoder.model_dim, cfg.encoder.num_blocks) == (64, 3)
    assert (cfg.decoder.heads, cfg.decoder.ff_dim) == (8, 512)


def test_build_variants_flags():
    assert not ModelConfig.build("moe").decoder.moe_mode
    assert ModelConfig.build("moe").encoder.extra_dim == ModelConfig().decoder.semantic_dim
    assert not ModelConfig.build("msde_off").decoder.msde_mode
    assert not ModelConfig.build("no_tracks").use_tracks
    assert not ModelConfig.build("no_dino").decoder.use_dino
    assert not ModelConfig.build("no_pe").encoder.use_pe
    assert not ModelConfig.build("no_depth").encoder.use_depth
    assert not ModelConfig.build("no_st_att").encoder.use_st_att


def test_build_rejects_unknown_variant_and_keys():
    with pytest.raises(ValueError):
        ModelConfig.build("turbo")
    with pytest.raises(KeyError, match="width"):
        ModelConfig.build("full", width=3)
    with pytest.raises(ValueError):
        EncoderConfig(model_dim=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(EncoderConfig(model_dim=16), DecoderConfig(model_dim=8))


@pytest.mark.parametrize("variant", VARIANTS)
def test_config_dict_round_trip(variant):
    cfg = ModelConfig.build(variant, **TINY)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("variant", ["full", "msde_off", "no_st_att"])
def test_full_stack_gradcheck(variant):
    m = tiny_model(variant, seed=1)
    x, valid, S = random_inputs(m, seed=1)
    r = stack_gradcheck(m, x, valid, S)
    assert r.passed, r.max_rel_err


def test_encode_plain_gradcheck_wrt_features():
    cfg = EncoderConfig(model_dim=8, heads=2, ff_dim=8, num_blocks=1, n_freqs=1, use_st_att=False)
    p = init_encoder(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    valid = rng.random((3, 4)) < 0.7
    valid[:, 0] = True
    x = rng.normal(size=(3, 4, cfg.input_dim))
    r = tn.gradcheck(lambda f: encode_plain(p, f, valid, cfg).P, [x])
    assert r.passed, r.max_rel_err


# ---------------------------------------------------------------- masking

@pytest.mark.parametrize("variant", ["full", "moe", "msde_off", "no_st_att"])
@pytest.mark.parametrize("seed", range(5))
def test_invalid_points_cannot_reach_outputs(variant, seed):
    m = tiny_model(variant, seed=seed)
    x, valid, S = random_inputs(m, n=5, t=6, seed=seed, p_valid=0.5)
    p1, f1 = m.forward(x, valid, S)
    p2, f2 = m.forward(perturb_invalid(x, valid, np.random.default_rng(seed)), valid, S)
    assert np.max(np.abs(f1.P.data - f2.P.data)) < 1e-12
    assert np.max(np.abs(p1.data - p2.data)) < 1e-12


def test_invalid_point_gets_zero_gradient():
    m = tiny_model()
    x, valid, S = random_inputs(m, p_valid=0.5)
    xt = Tensor(x, requires_grad=True)
    probs, _ = m.forward(xt, valid, S)
    tn.sum_(probs).backward()
    assert np.all(xt.grad[~valid] == 0.0)
    assert np.any(xt.grad[valid] != 0.0)


def test_track_with_no_valid_point_is_flagged():
    m = tiny_model()
    x, valid, S = random_inputs(m)
    valid[2] = False
    probs, f = m.forward(x, valid, S)
    assert f.has_valid.tolist() == [True, True, False, True]
    # other tracks are unaffected by what the empty one carries
    x2 = x.copy()
    x2[2] = 99.0
    probs2, _ = m.forward(x2, valid, S)
    keep = [0, 1, 3]
    assert np.max(np.abs(probs.data[keep] - probs2.data[keep])) < 1e-12


# ---------------------------------------------------------------- structure

@pytest.mark.parametrize("variant", ["full", "moe", "msde_off"])
def test_track_permutation_equivariance(variant):
    m = tiny_model(variant)
    x, valid, S = random_inputs(m, n=7, seed=3)
    perm = np.random.default_rng(4).permutation(7)
    p1, f1 = m.forward(x, valid, S)
    p2, f2 = m.forward(x[perm], valid[perm], S[perm])
    assert np.max(np.abs(f1.P.data[perm] - f2.P.data)) < 1e-12
    assert np.max(np.abs(p1.data[perm] - p2.data)) < 1e-12


def test_pool_is_max_over_valid_frames():
    m = tiny_model()
    x, valid, S = random_inputs(m, p_valid=0.5)
    hooks: dict = {}
    _, f = m.forward(x, valid, S, hooks)
    pre = hooks["prepool"].data
    for i in range(x.shape[0]):
        rows = pre[i, valid[i]]
        assert np.all(f.P.data[i] >= rows)
        assert np.array_equal(f.P.data[i], rows.max(axis=0))


def test_probabilities_in_unit_interval_and_deterministic():
    m = tiny_model()
    x, valid, S = random_inputs(m)
    a = m.forward(x, valid, S)[0].data
    b = tiny_model().forward(x, valid, S)[0].data
    assert np.array_equal(a, b) and np.all((a > 0) & (a < 1))


def test_no_dino_ignores_semantics():
    m = tiny_model("no_dino")
    x, valid, S = random_inputs(m)
    a = m.forward(x, valid, S)[0].data
    b = m.forward(x, valid, S * 10 + 3)[0].data
    assert np.array_equal(a, b)
    full = tiny_model()
    assert not np.array_equal(full.forward(x, valid, S)[0].data,
                              full.forward(x, valid, S * 10 + 3)[0].data)


def _grad_of_attention_wrt_S(variant, key):
    m = tiny_model(variant)
    x, valid, S = random_inputs(m)
    St = Tensor(S, requires_grad=True)
    hooks: dict = {}
    m.forward(x, valid, St, hooks)
    w = hooks[key][0]
    proj = np.random.default_rng(0).normal(size=w.shape)
    tn.sum_(tn.mul(w, proj)).backward()
    return St.grad


def test_motion_attention_is_decoupled_from_semantics():
    g = _grad_of_attention_wrt_S("full", "dec.enc0.attn.attn")
    assert g is None or np.all(g == 0.0)
    # without decoupling the same attention weights do depend on S
    g_off = _grad_of_attention_wrt_S("msde_off", "dec.joint0.attn.attn")
    assert g_off is not None and np.abs(g_off).max() > 0


def test_semantic_shape_checked():
    m = tiny_model()
    x, valid, S = random_inputs(m)
    with pytest.raises(ValueError):
        m.forward(x, valid, S[:, :2])


def test_encoder_rejects_misaligned_inputs():
    cfg = EncoderConfig(model_dim=8, heads=2, ff_dim=8, num_blocks=1, n_freqs=1)
    p = init_encoder(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        encode(p, np.zeros((2, 3, cfg.input_dim)), np.ones((2, 4), bool), cfg)
    with pytest.raises(ValueError):
        encode(p, np.zeros((2, 3, 5)), np.ones((2, 3), bool), cfg)


def test_moe_features_append_semantics_per_point():
    cfg = DecoderConfig(semantic_dim=3)
    x = np.zeros((2, 4, 5))
    S = np.arange(6.0).reshape(2, 3)
    out = moe_features(x, S, cfg)
    assert out.shape == (2, 4, 8)
    assert np.array_equal(out[1, 2, 5:], [3.0, 4.0, 5.0])


# ---------------------------------------------------------------- inputs from scenes

def test_inputs_on_rendered_scene():
    s = render_scene(generate_scene(SceneConfig(width=32, height=32, frames=8, num_objects=2,
                                                num_dynamic=1), 0), grid_size=6)
    m = MotionSegModel(ModelConfig.build("full", model_dim=8, heads=2, ff_dim=8, num_blocks=1))
    feats, valid, S = m.inputs(s.tracks, s.semantic)
    assert feats.shape == (s.tracks.track_count, 8, 36)
    assert np.array_equal(valid, s.tracks.validity)
    probs = m.predict(s.tracks, s.semantic)
    assert probs.shape == (s.tracks.track_count,)


def test_no_tracks_inputs_carry_no_motion():
    s = render_scene(generate_scene(SceneConfig(width=32, height=32, frames=8, num_objects=2,
                                                num_dynamic=1), 0), grid_size=6)
    m = MotionSegModel(ModelConfig.build("no_tracks", model_dim=8, heads=2, ff_dim=8, num_blocks=1))
    feats, valid, _ = m.inputs(s.tracks, s.semantic)
    assert valid.all()
    # only the depth channels survive, and synthetic depth is constant per track
    assert np.count_nonzero(feats.std(axis=1)[:, :-4]) == 0


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    m = tiny_model("moe", seed=5)
    x, valid, S = random_inputs(m)
    m.save(tmp_path / "m.ckpt", extra={"opt.step": np.array(3.0)})
    back, arrays = MotionSegModel.load(tmp_path / "m.ckpt")
    assert back.config == m.config
    assert float(arrays["opt.step"]) == 3.0
    assert np.array_equal(back.forward(x, valid, S)[0].data, m.forward(x, valid, S)[0].data)


def test_load_state_dict_mismatch():
    m = tiny_model()
    state = m.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(KeyError):
        m.load_state_dict(state)
    bad = m.state_dict()
    k = next(iter(bad))
    bad[k] = np.zeros((1, 1, 1))
    with pytest.raises(ValueError):
        m.load_state_dict(bad)


def test_with_config_copies_parameters():
    m = tiny_model()
    c = m.with_config(use_tracks=False)
    assert not c.config.use_tracks and m.config.use_tracks
    k = next(iter(m.params))
    c.params[k].data += 1
    assert not np.array_equal(c.params[k].data, m.params[k].data)
