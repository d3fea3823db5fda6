import json
import math
from dataclasses import replace

import numpy as np
import pytest

from causalgr.data import Event, GeneratorConfig, UserSequence, generate_dataset, split_users
from causalgr.errors import ConfigError, ContractError, TrainingError
from causalgr.models import Architecture, ModelConfig, init_params
from causalgr.numeric import Tensor, grad_check
from causalgr.training import (
    TABLE_COLUMNS,
    Adam,
    TrainConfig,
    benchmark,
    candidate_logits,
    evaluate,
    format_table,
    multitask_bce,
    normalized_entropy,
    relative_delta,
    sequence_blind_accuracy,
    train,
    write_bench_reports,
)
from causalgr.verify import small_config

CLAMP = 1e-7


def hand_bce(z, y):
    p = min(max(1 / (1 + math.exp(-z)), CLAMP), 1 - CLAMP)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def hand_ne(p, y):
    rate = sum(y) / len(y)
    h = -(rate * math.log(rate) + (1 - rate) * math.log(1 - rate))
    loss = [-(yi * math.log(pi) + (1 - yi) * math.log(1 - pi)) for pi, yi in zip(p, y)]
    return sum(loss) / len(loss) / h


def tiny_data(n_users=40, seq_len=12, seed=0, **kw):
    return generate_dataset(GeneratorConfig(n_users=n_users, seq_len=seq_len, seed=seed, **kw))


def tiny_model(arch=Architecture.ATTN_LFA, **kw):
    return small_config(arch, **kw)


# -- loss ---------------------------------------------------------------------

def test_zero_logits_cost_ln2_per_cell():
    loss = multitask_bce(Tensor(np.zeros((2, 4, 3))), np.ones((2, 4, 3), dtype=int),
                         np.ones((2, 4), dtype=bool))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)


def test_saturated_logits_hit_clamp_floor():
    y = np.array([[[1, 0, 1]]])
    z = np.where(y == 1, 1e3, -1e3).astype(float)
    loss = multitask_bce(Tensor(z), y, np.ones((1, 1), dtype=bool)).item()
    assert loss == pytest.approx(-math.log(1 - CLAMP), rel=1e-9)


def test_bce_matches_hand_formula():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(1, 2, 3)) * 3
    y = rng.integers(0, 2, size=(1, 2, 3))
    expected = np.mean([hand_bce(z[0, i, t], y[0, i, t]) for i in range(2) for t in range(3)])
    got = multitask_bce(Tensor(z), y, np.ones((1, 2), dtype=bool)).item()
    assert abs(got - expected) <= 1e-12


def test_masked_cells_are_ignored():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(2, 5, 3))
    y = rng.integers(0, 2, size=(2, 5, 3))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    y2 = y.copy()
    y2[0, 3:] = 1 - y2[0, 3:]
    a = multitask_bce(Tensor(z), y, mask).item()
    assert a == multitask_bce(Tensor(z), y2, mask).item()
    expected = np.mean([hand_bce(z[b, i, t], y[b, i, t])
                        for b in range(2) for i in range(5) for t in range(3) if mask[b, i]])
    assert abs(a - expected) <= 1e-12


def test_bce_errors():
    with pytest.raises(ContractError, match="no valid cells"):
        multitask_bce(Tensor(np.zeros((1, 2, 3))), np.zeros((1, 2, 3)), np.zeros((1, 2), dtype=bool))
    with pytest.raises(ContractError):
        multitask_bce(Tensor(np.zeros((1, 2, 3))), np.zeros((1, 2, 2)), np.ones((1, 2), dtype=bool))


def test_bce_gradient():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, size=(2, 3, 3))
    mask = rng.random((2, 3)) < 0.7
    mask[0, 0] = True
    assert grad_check(lambda z: multitask_bce(z, y, mask), rng.normal(size=(2, 3, 3))) <= 1e-6


# -- normalized entropy --------------------------------------------------------

def test_ne_constant_predictor_is_one():
    y = (np.random.default_rng(3).random(500) < 0.2).astype(int)
    assert abs(normalized_entropy(np.full(500, y.mean()), y) - 1.0) <= 1e-12


def test_ne_perfect_predictor():
    y = np.array([0, 1, 1, 0, 0, 0])
    ne = normalized_entropy(y.astype(float), y)
    rate = y.mean()
    h = -(rate * math.log(rate) + (1 - rate) * math.log(1 - rate))
    assert ne == pytest.approx(-math.log(1 - CLAMP) / h, rel=1e-9)
    assert ne < 1


def test_ne_matches_hand_computation():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, 50)
    p = rng.uniform(0.05, 0.95, 50)
    assert abs(normalized_entropy(p, y) - hand_ne(p.tolist(), y.tolist())) <= 1e-12


def test_ne_degenerate_labels():
    with pytest.raises(ContractError):
        normalized_entropy(np.full(4, 0.5), np.ones(4))
    with pytest.raises(ContractError):
        normalized_entropy(np.zeros(0), np.zeros(0))


def test_ne_decreases_toward_truth():
    y = (np.random.default_rng(5).random(300) < 0.35).astype(int)
    path = [normalized_entropy((1 - t) * y.mean() + t * y, y) for t in np.linspace(0, 1, 11)]
    assert all(b < a for a, b in zip(path, path[1:]))


# -- optimizer -----------------------------------------------------------------

def test_adam_step_moves_toward_bowl_minimum():
    target = np.array([1.0, -2.0, 3.0])
    w = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    before = np.sum((w.data - target) ** 2)
    opt.step({w: 2 * (w.data - target)})
    assert np.sum((w.data - target) ** 2) < before
    np.testing.assert_allclose(w.data, 0.1 * np.sign(target), rtol=1e-6)


def test_decoupled_weight_decay_skips_vectors():
    m = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    Adam({"m": m, "b": b}, lr=0.1, weight_decay=0.5).step({m: np.zeros((2, 2)), b: np.zeros(2)})
    np.testing.assert_allclose(m.data, 0.95)
    np.testing.assert_array_equal(b.data, 1.0)


# -- training ------------------------------------------------------------------

def test_train_config_errors_name_field():
    with pytest.raises(ConfigError, match="learning_rate"):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ConfigError, match="label_clamp"):
        TrainConfig(label_clamp=0.5)
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"lr": 1})


def test_dhn_learning_rate_is_halved():
    cfg = TrainConfig(learning_rate=4e-3)
    assert cfg.lr_for(Architecture.ATTN_DHN) == 2e-3
    assert cfg.lr_for(Architecture.ATTN_MVP) == 4e-3


def test_zero_learning_rate_freezes_everything():
    data = tiny_data(n_users=1)
    model = tiny_model()
    start = {k: v.data.copy() for k, v in init_params(model, seed=0, dtype="f64").items()}
    result = train(model, TrainConfig(learning_rate=0.0, batch_size=1, epochs=4, dtype="f64"), data)
    for name, value in result.params.items():
        np.testing.assert_array_equal(value.data, start[name])
    assert len(set(result.losses)) == 1


def test_single_user_overfit():
    data = generate_dataset(GeneratorConfig(n_users=1, seq_len=16, seed=0))
    cfg = ModelConfig(architecture="AttnLFA", d_model=32, n_layers=2, n_heads=4)
    losses = np.array(train(cfg, TrainConfig(learning_rate=1e-3, batch_size=1, epochs=200,
                                             dtype="f64"), data).losses)
    assert losses[-1] < 0.05
    # rolling 5-step maximum never rises after a 20-step warm-up
    rolling = np.array([losses[i:i + 5].max() for i in range(len(losses) - 4)])
    assert np.all(np.diff(rolling[20:]) <= 0)


def test_seeded_training_is_repeatable():
    data = tiny_data()
    model = tiny_model(Architecture.ATTN_MVP)
    a = train(model, TrainConfig(batch_size=8, seed=3), data)
    b = train(model, TrainConfig(batch_size=8, seed=3), data)
    assert a.losses == b.losses


def test_divergence_names_the_step():
    data = tiny_data(n_users=4)
    bad = data[3]
    bad.events[0] = replace(bad.events[0], features=[float("nan")] * 2)
    with pytest.raises(TrainingError, match="step 1") as info:
        train(tiny_model(), TrainConfig(batch_size=2, seed=0), data)
    assert info.value.step == 1


def test_empty_dataset_is_rejected():
    with pytest.raises(ContractError):
        train(tiny_model(), TrainConfig(), [])


# -- evaluation ---------------------------------------------------------------

def _one_candidate(seqs):
    return [UserSequence(s.user_id, s.preference, s.events, len(s) - 1) for s in seqs]


def test_one_candidate_per_user():
    data = _one_candidate(tiny_data(n_users=30))
    model = tiny_model()
    report = evaluate(init_params(model), model, data)
    assert report.n_eval_labels == 30
    assert set(report.per_task_ne) == {"long_dwell", "contribution", "like"}
    assert all(v >= 0 for v in report.per_task_ne.values())


def test_evaluate_needs_candidates():
    data = tiny_data(n_users=3)
    data[1] = UserSequence(1, data[1].preference, data[1].events, len(data[1]))
    model = tiny_model()
    with pytest.raises(ContractError):
        evaluate(init_params(model), model, data)


@pytest.mark.parametrize("arch", list(Architecture), ids=lambda a: a.value)
def test_candidate_permutation_and_one_at_a_time(arch):
    model = tiny_model(arch)
    params = init_params(model, seed=1)
    seq = tiny_data(n_users=1, seq_len=14, candidate_fraction=0.4)[0]
    c = seq.context_len
    joint = candidate_logits(params, model, seq)
    single = candidate_logits(params, model, seq, one_at_a_time=True)
    np.testing.assert_allclose(joint, single, rtol=0, atol=1e-12)
    order = np.random.default_rng(0).permutation(len(seq) - c)
    shuffled = UserSequence(seq.user_id, seq.preference,
                            seq.events[:c] + [seq.events[c + j] for j in order], c)
    np.testing.assert_allclose(candidate_logits(params, model, shuffled), joint[order],
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("arch", list(Architecture), ids=lambda a: a.value)
def test_candidates_ignore_other_candidates_and_own_label(arch):
    model = tiny_model(arch)
    params = init_params(model, seed=2)
    seq = tiny_data(n_users=1, seq_len=12, candidate_fraction=0.5)[0]
    c = seq.context_len
    base = candidate_logits(params, model, seq)
    rng = np.random.default_rng(0)
    for p in range(c, len(seq)):
        events = list(seq.events)
        for j in range(c, len(seq)):
            e = events[j]
            flipped = [1 - y for y in e.labels]
            if j == p:
                events[j] = Event(e.item_id, e.category_id, e.features, e.timestamp, flipped,
                                  e.action_features)
            else:
                events[j] = Event(e.item_id, e.category_id, rng.normal(size=2).tolist(),
                                  e.timestamp, flipped, rng.random(3).tolist())
        moved = candidate_logits(params, model, UserSequence(0, seq.preference, events, c))
        np.testing.assert_array_equal(moved[p - c], base[p - c])


def test_sequence_blind_predictor_is_at_chance():
    data = tiny_data(n_users=400, seq_len=32)
    train_set, eval_set = split_users(data, 0.25)
    assert abs(sequence_blind_accuracy(train_set, eval_set) - 0.5) < 0.05


# -- benchmark and reports -----------------------------------------------------

def test_benchmark_against_itself_is_all_zero():
    data = tiny_data(n_users=20)
    model = tiny_model()
    bench = benchmark([model, model], TrainConfig(batch_size=8), data)
    for row in bench.deltas():
        for key, value in row.items():
            if key != "time":
                assert value == 0.0


def test_benchmark_flops_ratio_and_validation():
    data = tiny_data(n_users=20)
    base, lfa = tiny_model(Architecture.INTERLEAVED_BASELINE), tiny_model(Architecture.ATTN_LFA)
    bench = benchmark([base, lfa], TrainConfig(batch_size=8), data)
    assert bench.reports[0].attention_flops == 4 * bench.reports[1].attention_flops
    with pytest.raises(ConfigError):
        benchmark([base], TrainConfig(), data)
    with pytest.raises(ConfigError, match="only in architecture"):
        benchmark([base, replace(lfa, lam=0.5)], TrainConfig(), data)


def test_relative_delta_sign():
    assert relative_delta(0.9, 1.0) == pytest.approx(-10.0)
    assert relative_delta(1.1, 1.0) == pytest.approx(10.0)


def test_report_files(tmp_path):
    data = tiny_data(n_users=20)
    archs = [Architecture.INTERLEAVED_BASELINE, Architecture.ATTN_LFA, Architecture.ATTN_MVP,
             Architecture.ATTN_MVP_NO_LFA]
    bench = benchmark([tiny_model(a) for a in archs], TrainConfig(batch_size=8), data)
    table = format_table(bench).splitlines()
    assert table[0].split() == ["architecture", *TABLE_COLUMNS]
    assert len(table) == 5
    assert all(cell == "+0.00%" for cell in table[1].split()[1:])
    paths = write_bench_reports(bench, tmp_path)
    write_bench_reports(bench, tmp_path)
    assert paths["history"].read_text().count("## ") == 2
    doc = json.loads(paths["metrics"].read_text())
    assert [r["architecture"] for r in doc["reports"]] == [a.value for a in archs]
    assert "per_step_ms" not in doc["reports"][0]
    assert set(json.loads(paths["timing"].read_text())) == {a.value for a in archs}

