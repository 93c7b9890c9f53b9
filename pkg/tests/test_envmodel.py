import numpy as np
import pytest

from oef import dataset as D
from oef.envmodel import (
    DecodeFaultError,
    EnvModel,
    GameCoreModel,
    ModelGame,
    build_training_arrays,
    dataset_root,
    fidelity,
    model_chance,
    model_step,
    split_records,
    threshold_mask,
    train_env,
)
from oef.exact import solve_to_nash_conv
from oef.games import CHANCE, make_game
from oef.nn import TrainConfig, TrainingError
from oef.tree import compile_tree

FAST = TrainConfig(batch_size=32, epochs=50, learning_rate=0.05, seed=0)


@pytest.fixture(scope="module")
def kuhn():
    return make_game("kuhn_2")


@pytest.fixture(scope="module")
def hybrid(kuhn):
    expert, _, _ = solve_to_nash_conv(kuhn, 0.005)
    rnd = D.generate_random(kuhn, 5000, 10)
    exp = D.generate_expert(kuhn, 5000, 11, expert)
    return D.mix_hybrid(rnd, exp, 0.5, 5000, seed=12)


@pytest.fixture(scope="module")
def trained(kuhn, hybrid):
    train_recs, test_recs = split_records(hybrid, 0.1, seed=0)
    ds = D.Dataset(D.DatasetMeta(kuhn.game_id, "hybrid", len(train_recs), 0, D.GENERATOR_VERSION, 0.5),
                   train_recs)
    return train_env(ds, kuhn, FAST), train_recs, test_recs


def constant_model(game, *, state_logits=None, terminal=-20.0, rewards=None, legal=None, chance=None):
    """EnvModel whose net ignores its input and emits fixed outputs."""
    from oef.envmodel import Head, Net

    heads = [Head("next_state", game.joint_dim, "linear"), Head("rewards", game.num_players, "linear"),
             Head("terminal", 1, "sigmoid"), Head("legal", game.max_actions, "sigmoid"),
             Head("chance", game.max_actions, "softmax")]
    net = Net(game.joint_dim + game.max_actions, [4], heads)
    net.weights[-1][:] = 0.0
    b = net.biases[-1]
    b[:] = 0.0
    b[net.slices["next_state"]] = np.zeros(game.joint_dim) if state_logits is None else state_logits
    b[net.slices["terminal"]] = terminal
    b[net.slices["rewards"]] = np.zeros(game.num_players) if rewards is None else rewards
    b[net.slices["legal"]] = -20.0 if legal is None else legal
    b[net.slices["chance"]] = 0.0 if chance is None else chance
    h = game.new_initial_state()
    root = game.encode_state(h).joint_tensor
    return EnvModel(game, net, game.reachable_states(), root, game.legal_mask(h))


def test_heldout_fidelity(trained):
    model, _, test_recs = trained
    f = fidelity(model, test_recs)
    assert f.count == 500
    assert f.transitions >= 0.99
    assert f.terminal >= 0.99 and f.rewards >= 0.99


def test_training_set_replay(trained):
    model, train_recs, _ = trained
    assert fidelity(model, train_recs).transitions >= 0.99


def test_chance_head_near_uniform_at_root(trained, kuhn):
    model, _, _ = trained
    s, mask = model.initial_state()
    probs = model_chance(model, s, mask)
    truth = np.zeros(kuhn.max_actions)
    for a, p in kuhn.chance_distribution(kuhn.new_initial_state()):
        truth[a] = p
    assert 0.5 * np.abs(probs - truth).sum() < 0.1
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_chance_single_legal_action(trained):
    model, _, _ = trained
    s, _ = model.initial_state()
    mask = np.zeros(model.max_actions, dtype=np.uint8)
    mask[3] = 1
    probs = model_chance(model, s, mask)
    assert probs[3] == 1.0 and probs.sum() == 1.0


def test_nonterminal_rewards_are_exactly_zero(trained, kuhn):
    model, train_recs, _ = trained
    for r in train_recs[:300]:
        res = model_step(model, r.state, r.action)
        if not res.terminal:
            assert np.all(res.rewards == 0.0)
            assert res.legal_mask.sum() >= 1
        else:
            assert res.legal_mask.sum() == 0


def test_threshold_mask_fallback():
    assert threshold_mask(np.array([0.1, 0.3, 0.2])).tolist() == [0, 1, 0]
    assert threshold_mask(np.array([0.6, 0.3, 0.9])).tolist() == [1, 0, 1]


def test_empty_mask_prediction_keeps_one_action(kuhn):
    legal = np.full(kuhn.max_actions, -20.0)
    legal[4] = -3.0
    model = constant_model(kuhn, legal=legal)
    s, _ = model.initial_state()
    deal = kuhn.apply_action(kuhn.new_initial_state(), 0)
    s = kuhn.encode_state(deal).joint_tensor
    state_logits = kuhn.encode_state(kuhn.apply_action(deal, 0)).joint_tensor.astype(float)
    model = constant_model(kuhn, legal=legal, state_logits=state_logits)
    res = model.step(s, 0)
    assert not res.terminal
    assert res.legal_mask.tolist() == [0, 0, 0, 0, 1, 0]


def test_decode_rounds_valid_tensors(kuhn):
    model = constant_model(kuhn)
    h = kuhn.apply_action(kuhn.new_initial_state(), 2)
    t = kuhn.encode_state(h).joint_tensor
    noisy = t + np.where(t == 1, -0.3, 0.3)
    out, repaired = model.decode(noisy)
    assert np.array_equal(out, t) and not repaired


def test_decode_repairs_to_nearest_candidate(kuhn):
    model = constant_model(kuhn)
    h = kuhn.apply_action(kuhn.new_initial_state(), 2)
    t = kuhn.encode_state(h).joint_tensor.astype(float)
    bad = t.copy()
    bad[-3:] = 0.6  # three player/chance bits set: not a valid encoding
    out, repaired = model.decode(bad)
    assert repaired
    kuhn.decode_history(out)
    d = ((model.candidates.astype(float) - bad) ** 2).sum(axis=1)
    assert ((out.astype(float) - bad) ** 2).sum() == d.min()


def test_decode_without_candidates_is_fault(kuhn):
    model = constant_model(kuhn)
    model.candidates = model.candidates[:0]
    model._valid.clear()
    with pytest.raises(DecodeFaultError, match="decode-fault"):
        model.decode(np.full(kuhn.joint_dim, 0.7))
    res = model.step(np.zeros(kuhn.joint_dim, np.uint8), 0)
    assert res.fault and res.terminal and model.stats.faults == 1


def test_nonterminal_state_without_actor_is_fault(kuhn):
    # a terminal encoding predicted with the terminal head off
    term = next(t for t in kuhn.reachable_states() if not t[-3:].any())
    model = constant_model(kuhn, state_logits=term.astype(float))
    res = model.step(model.initial_state()[0], 0)
    assert res.fault and res.terminal
    assert model.stats.faults == 1 and model.stats.fault_rate == 1.0


def test_depth_cap_truncation_counts_as_fault(kuhn):
    # the model keeps returning the same decision state
    deal = kuhn.apply_action(kuhn.apply_action(kuhn.new_initial_state(), 0), 1)
    loop = kuhn.encode_state(deal).joint_tensor
    legal = np.full(kuhn.max_actions, -20.0)
    legal[:2] = 20.0
    model = constant_model(kuhn, state_logits=loop.astype(float), legal=legal)
    mg = ModelGame(model, kuhn)
    assert mg.depth_cap == kuhn.max_episode_length + 2
    h = mg.new_initial_state()
    h = mg.apply_action(h, 0)
    while not mg.is_terminal(h):
        h = mg.apply_action(h, 0)
    assert h.truncated and len(h) == mg.depth_cap
    assert model.stats.truncations == 1
    assert mg.fault_rate() > 0


def test_perfect_model_game_matches_game_core(kuhn):
    mg = ModelGame(GameCoreModel(kuhn), kuhn)
    a, b = compile_tree(mg), compile_tree(kuhn)
    assert a.num_nodes == b.num_nodes == 55
    assert sorted(a.infoset_keys) == sorted(b.infoset_keys)
    assert mg.stats.fault_rate == 0.0


def test_training_arrays_chance_rows(kuhn, hybrid):
    X, T, head_mask, legal = build_training_arrays(hybrid, kuhn)
    n_chance = sum(r.actor == CHANCE for r in hybrid)
    assert len(X) == len(hybrid) + n_chance
    rows = head_mask["chance"] == 1
    assert rows.sum() == n_chance
    assert np.all(X[rows, kuhn.joint_dim:] == 0)  # empty action block
    assert np.all(head_mask["next_state"][rows] == 0)
    assert np.all(T["chance"][rows].sum(axis=1) == 1)
    # rewards are only trained on terminal records
    assert head_mask["rewards"].sum() == sum(r.terminal for r in hybrid)


def test_dataset_root_is_game_root(kuhn, hybrid):
    root, mask = dataset_root(hybrid, kuhn)
    h = kuhn.new_initial_state()
    assert np.array_equal(root, kuhn.encode_state(h).joint_tensor)
    assert np.array_equal(mask, kuhn.legal_mask(h))


def test_save_load_roundtrip(tmp_path, trained, kuhn):
    model, _, test_recs = trained
    path = tmp_path / "env.json"
    model.save(path)
    back = EnvModel.load(path)
    assert back.candidates_checksum() == model.candidates_checksum()
    assert back.sidecar() == model.sidecar()
    for r in test_recs[:50]:
        a, b = model.step(r.state, r.action), back.step(r.state, r.action)
        assert np.array_equal(a.next_state, b.next_state) and a.terminal == b.terminal
        assert np.array_equal(a.rewards, b.rewards)


def test_load_detects_checksum_tamper(tmp_path, trained):
    import json

    model, _, _ = trained
    path = tmp_path / "env.json"
    model.save(path)
    side = tmp_path / "env.json.meta.json"
    meta = json.loads(side.read_text())
    meta["candidates"] = meta["candidates"][1:]
    side.write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="checksum"):
        EnvModel.load(path)


def test_training_is_deterministic(kuhn, hybrid):
    small = D.Dataset(D.DatasetMeta(kuhn.game_id, "hybrid", 300, 0, D.GENERATOR_VERSION, 0.5),
                      hybrid.records[:300])
    cfg = TrainConfig(epochs=5, seed=3)
    assert train_env(small, kuhn, cfg).net.param_hash() == train_env(small, kuhn, cfg).net.param_hash()


def test_divergent_training_aborts(kuhn, hybrid):
    small = D.Dataset(D.DatasetMeta(kuhn.game_id, "hybrid", 300, 0, D.GENERATOR_VERSION, 0.5),
                      hybrid.records[:300])
    with pytest.raises(TrainingError, match="non-finite"):
        train_env(small, kuhn, TrainConfig(epochs=50, learning_rate=1e8))


def test_empty_dataset_rejected(kuhn):
    empty = D.Dataset(D.DatasetMeta(kuhn.game_id, "random", 0, 0, D.GENERATOR_VERSION), [])
    with pytest.raises(ValueError):
        train_env(empty, kuhn, FAST)
