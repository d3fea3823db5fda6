import numpy as np
import pytest

from causalgr.attention import AttentionMask, AttentionWeights, MaskVariant, multihead_attention
from causalgr.errors import ConfigError, ParameterError
from causalgr.models import (
    Architecture,
    ForwardContext,
    ModelConfig,
    SequenceBatch,
    action_pooling,
    attended_length,
    attention_param_count,
    count_params,
    deinterleave,
    forward,
    init_params,
    interleave,
    load_checkpoint,
    mmoe_gates,
    mmoe_head,
    model_attention_flops,
    project_actions,
    project_items,
    save_checkpoint,
    transformer_block,
)
from causalgr.models.layers import ParamInit, init_mmoe, linear, mlp, norm
from causalgr.numeric import Tensor, concat, grad_check
from causalgr.verify import leakage_violations, model_gradient_error, random_batch, small_config

ARCHS = list(Architecture)
STRICT = MaskVariant.STRICT_CAUSAL


def logits(config, params, batch, **kw):
    return forward(batch, config, params, **kw).logits.data


# -- leakage -----------------------------------------------------------------

@pytest.mark.parametrize("arch", ARCHS, ids=lambda a: a.value)
def test_no_action_leakage(arch):
    assert leakage_violations(arch, seq_len=10) == []


@pytest.mark.parametrize("layers", [1, 2, 12])
def test_mvp_leak_free_at_any_depth(layers):
    cfg = small_config(Architecture.ATTN_MVP, n_layers=layers)
    assert leakage_violations(Architecture.ATTN_MVP, seq_len=6, config=cfg) == []


@pytest.mark.parametrize("arch", ARCHS, ids=lambda a: a.value)
def test_future_items_do_not_reach_the_past(arch):
    cfg = small_config(arch)
    params = init_params(cfg, seed=1)
    batch = random_batch(cfg, 9, seed=1)
    base = logits(cfg, params, batch)
    for n in range(8):
        items = batch.item_features.copy()
        items[:, n + 1:] += 3.0
        moved = SequenceBatch(items, batch.action_features, batch.labels, batch.context_len,
                              batch.valid_len, batch.late_fusion)
        np.testing.assert_array_equal(logits(cfg, params, moved)[:, n], base[:, n])


def test_leak_probe_catches_a_leaky_kernel():
    from causalgr.attention import attend

    def leaky(q, k, v, mask):
        if mask.variant is STRICT:
            mask = AttentionMask(MaskVariant.CAUSAL, mask.seq_len)
        return attend(q, k, v, mask)

    assert leakage_violations(Architecture.ATTN_MVP, seq_len=6, kernel=leaky)


def test_baseline_first_step_sees_only_its_item_and_counts():
    cfg = small_config(Architecture.INTERLEAVED_BASELINE)
    params = init_params(cfg, seed=2)
    batch = random_batch(cfg, 5, seed=2)
    base = logits(cfg, params, batch)
    rng = np.random.default_rng(0)
    other = SequenceBatch(batch.item_features.copy(), rng.random(batch.action_features.shape),
                          batch.labels, batch.context_len, batch.valid_len, batch.late_fusion.copy())
    other.item_features[:, 1:] = rng.normal(size=other.item_features[:, 1:].shape)
    other.late_fusion[:, 1:] += 1
    np.testing.assert_array_equal(logits(cfg, params, other)[:, 0], base[:, 0])
    other.late_fusion[:, 0] += 1
    assert not np.array_equal(logits(cfg, params, other)[:, 0], base[:, 0])


# -- gradients ----------------------------------------------------------------

@pytest.mark.parametrize("arch", ARCHS, ids=lambda a: a.value)
def test_full_model_gradient_check(arch):
    errors = model_gradient_error(arch, per_tensor=2)
    worst = max(errors, key=errors.get)
    assert errors[worst] <= 1e-5, worst


def test_projection_gradients():
    init = ParamInit(0, np.float64)
    init.mlp("item_proj", 3, 8, 8)
    init.mlp("action_proj", 2, 8, 8)
    rng = np.random.default_rng(0)
    assert grad_check(lambda x: project_items(x, init.params, 3), rng.normal(size=(2, 4, 3))) <= 1e-5
    assert grad_check(lambda x: project_actions(x, init.params, 2), rng.random((2, 4, 2))) <= 1e-5


# -- projections and interleaving --------------------------------------------

def test_zero_projection_weights_give_bias():
    init = ParamInit(0, np.float64)
    init.mlp("item_proj", 3, 8, 6)
    for name in ("item_proj.l1.w", "item_proj.l2.w"):
        init.params[name].data[:] = 0
    init.params["item_proj.l2.b"].data[:] = np.arange(6)
    out = project_items(Tensor(np.ones((1, 2, 3))), init.params, 3).data
    np.testing.assert_array_equal(out, np.broadcast_to(np.arange(6.0), (1, 2, 6)))


def test_projection_extent_error():
    params = init_params(small_config(Architecture.ATTN_LFA))
    with pytest.raises(ParameterError, match="item"):
        project_items(Tensor(np.ones((1, 2, 5))), params, 2)
    with pytest.raises(ParameterError, match="action"):
        project_actions(Tensor(np.ones((1, 2, 2))), params, 3)


def test_item_weights_do_not_touch_action_embeddings():
    params = init_params(small_config(Architecture.ATTN_LFA))
    raw = Tensor(np.random.default_rng(0).random((1, 3, 3)))
    before = project_actions(raw, params, 3).data
    params["item_proj.l1.w"].data += 1.0
    np.testing.assert_array_equal(project_actions(raw, params, 3).data, before)
    assert project_actions(raw, params, 3).shape[-1] == 16


def test_interleave_order_and_round_trip():
    items = Tensor(np.arange(8.0).reshape(1, 2, 4))
    actions = Tensor(-np.arange(8.0).reshape(1, 2, 4))
    tokens = interleave(items, actions).data
    np.testing.assert_array_equal(tokens[0], [items.data[0, 0], actions.data[0, 0],
                                              items.data[0, 1], actions.data[0, 1]])
    i, a = deinterleave(Tensor(tokens))
    np.testing.assert_array_equal(i.data, items.data)
    np.testing.assert_array_equal(a.data, actions.data)
    assert interleave(Tensor(np.zeros((1, 0, 4))), Tensor(np.zeros((1, 0, 4)))).shape == (1, 0, 4)
    with pytest.raises(ParameterError):
        interleave(items, Tensor(np.zeros((1, 3, 4))))


# -- degeneracies --------------------------------------------------------------

def _stack(cfg, params, batch, ctx):
    items = project_items(Tensor(batch.item_features), params, cfg.d_item)
    h = items
    for layer in range(cfg.n_layers):
        h = transformer_block(h, params, f"blocks.{layer}", ctx, STRICT)
    return norm(h, params, "ln_f")


def _head(cfg, params, batch, rep):
    lf = Tensor(np.log1p(batch.late_fusion))
    return mmoe_head(concat([rep, lf], axis=-1), cfg.n_tasks, cfg.mmoe_experts, params).data


def test_mvp_without_actions_is_an_item_transformer():
    cfg = small_config(Architecture.ATTN_MVP_NO_LFA, lam=0.0)
    params = init_params(cfg, seed=3)
    batch = random_batch(cfg, 7, seed=3)
    ctx = ForwardContext(cfg, 7, batch.context_len, isolate=False)
    expected = _head(cfg, params, batch, _stack(cfg, params, batch, ctx))
    np.testing.assert_allclose(logits(cfg, params, batch), expected, rtol=0, atol=1e-12)


def test_dhn_one_block_without_mixing_separates_streams():
    cfg = small_config(Architecture.ATTN_DHN, lam=0.0, n_layers=1)
    params = init_params(cfg, seed=4)
    batch = random_batch(cfg, 7, seed=4)
    ctx = ForwardContext(cfg, 7, batch.context_len, isolate=False)
    hi = project_items(Tensor(batch.item_features), params, cfg.d_item)
    ha = project_actions(Tensor(batch.action_features), params, cfg.d_action)
    hi = transformer_block(hi, params, "blocks.0", ctx, STRICT)   # item-only attention
    xa = norm(ha, params, "blocks.0.act.ln1")
    mixed = multihead_attention(xa, xa, norm(hi, params, "blocks.0.act.lni"),
                                AttentionWeights.from_params(params, "blocks.0.act.attn"),
                                AttentionMask(STRICT, 7), rope=cfg.rope, n_heads=cfg.n_heads,
                                positions=np.arange(7))
    ha = ha + mixed
    ha = ha + mlp(norm(ha, params, "blocks.0.act.ln2"), params, "blocks.0.act.ffn")
    hi, ha = norm(hi, params, "ln_f"), norm(ha, params, "ln_fa")
    rep = linear(concat([hi, action_pooling(hi, ha, params, ctx)], axis=-1), params, "fuse")
    np.testing.assert_allclose(logits(cfg, params, batch), _head(cfg, params, batch, rep),
                               rtol=0, atol=1e-12)


def test_no_lfa_ablation_has_no_pooling_parameters():
    mvp = init_params(small_config(Architecture.ATTN_MVP))
    ablated = init_params(small_config(Architecture.ATTN_MVP_NO_LFA))
    assert {n for n in mvp if n.startswith(("pool.", "fuse."))}
    assert not {n for n in ablated if n.startswith(("pool.", "fuse."))}


# -- action pooling -----------------------------------------------------------

def test_pooling_first_position_is_zero():
    cfg = small_config(Architecture.ATTN_LFA)
    params = init_params(cfg)
    ctx = ForwardContext(cfg, 4, np.array([4]), isolate=False)
    rng = np.random.default_rng(0)
    out = action_pooling(Tensor(rng.normal(size=(1, 4, 16))), Tensor(rng.normal(size=(1, 4, 16))),
                         params, ctx).data
    np.testing.assert_array_equal(out[0, 0], 0)


def test_pooling_identical_items_average_their_actions():
    cfg = small_config(Architecture.ATTN_LFA)
    params = init_params(cfg)
    ctx = ForwardContext(cfg, 3, np.array([3]), isolate=False)
    rng = np.random.default_rng(1)
    item = rng.normal(size=16)
    h = Tensor(np.stack([item, item, item])[None])
    like, dislike = rng.normal(size=16), rng.normal(size=16)
    values = np.stack([like, dislike, rng.normal(size=16)])[None]
    pooled = action_pooling(h, Tensor(values), params, ctx).data[0, 2]
    w = params["pool.wv"].data @ params["pool.wo"].data
    np.testing.assert_allclose(pooled, 0.5 * (like @ w + dislike @ w), atol=1e-12)


# -- MMoE ----------------------------------------------------------------------

def _head_params(n_experts, d_in=6, n_tasks=3):
    init = ParamInit(7, np.float64)
    init_mmoe(init, d_in, n_tasks, n_experts, expert_dim=5, tower_hidden=4)
    return init.params


def test_single_expert_head_is_shared_mlp_per_task():
    params = _head_params(1)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 6)))
    out = mmoe_head(x, 3, 1, params).data
    shared = mlp(x, params, "head.expert0")
    for t in range(3):
        np.testing.assert_allclose(out[..., t], mlp(shared, params, f"head.tower{t}").data[..., 0],
                                   atol=1e-14)


def test_gate_weights_sum_to_one():
    params = _head_params(4)
    x = Tensor(np.random.default_rng(1).normal(size=(5, 6)) * 10)
    for gate in mmoe_gates(x, params, 3):
        np.testing.assert_allclose(gate.data.sum(-1), 1.0, atol=1e-6)


def test_head_gradient_check():
    params = _head_params(3)
    x = np.random.default_rng(2).normal(size=(2, 4, 6))
    assert grad_check(lambda f: mmoe_head(f, 3, 3, params), x) <= 1e-5


# -- config, accounting, checkpoints ------------------------------------------

def test_invalid_architecture_lists_names():
    with pytest.raises(ConfigError, match="AttnLFA.*AttnDHN"):
        ModelConfig(architecture="Transformer")


@pytest.mark.parametrize("kw,field", [({"d_model": 30, "n_heads": 4}, "n_heads"),
                                      ({"lam": -1.0}, "lambda"), ({"n_layers": 0}, "n_layers")])
def test_invalid_model_config_names_field(kw, field):
    with pytest.raises(ConfigError, match=field):
        ModelConfig(**kw)


def test_config_dict_round_trip_uses_lambda_key():
    cfg = ModelConfig(architecture="AttnDHN", lam=0.5, dhn_action_first=True)
    raw = cfg.to_dict()
    assert raw["lambda"] == 0.5 and raw["architecture"] == "AttnDHN"
    assert ModelConfig.from_dict(raw) == cfg


def test_attended_length_doubles_for_baseline():
    for arch in ARCHS:
        cfg = small_config(arch)
        assert attended_length(cfg, 10) == (20 if arch is Architecture.INTERLEAVED_BASELINE else 10)
    base = small_config(Architecture.INTERLEAVED_BASELINE)
    mvp = small_config(Architecture.ATTN_MVP_NO_LFA)
    assert model_attention_flops(base, 32) == 4 * model_attention_flops(mvp, 32)


def test_dhn_doubles_attention_parameters():
    lfa = init_params(small_config(Architecture.ATTN_MVP_NO_LFA))
    dhn = init_params(small_config(Architecture.ATTN_DHN))
    assert attention_param_count(dhn) == 2 * attention_param_count(lfa) + 4 * 16 * 16
    assert count_params(dhn) > count_params(lfa)


@pytest.mark.parametrize("arch", ARCHS, ids=lambda a: a.value)
def test_forward_is_deterministic(arch):
    cfg = small_config(arch)
    batch = random_batch(cfg, 6, seed=5)
    a = logits(cfg, init_params(cfg, seed=5), batch)
    b = logits(cfg, init_params(cfg, seed=5), batch)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("dtype", ["f32", "f64"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, dtype):
    cfg = small_config(Architecture.ATTN_DHN, dhn_action_first=True)
    params = init_params(cfg, seed=6, dtype=dtype)
    save_checkpoint(tmp_path / "ck", params, cfg, extra={"note": 1})
    loaded, cfg2 = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg
    assert list(loaded) == list(params)
    for name in params:
        assert loaded[name].dtype == params[name].dtype
        np.testing.assert_array_equal(loaded[name].data, params[name].data)
