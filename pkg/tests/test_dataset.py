import json
from collections import Counter, defaultdict
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chisquare

from oef import dataset as D
from oef.exact import solve_cfr
from oef.games import make_game
from oef.policy import Policy


@pytest.fixture(scope="module")
def kuhn():
    return make_game("kuhn_2")


@pytest.fixture(scope="module")
def kuhn_expert_profile(kuhn):
    return solve_cfr(kuhn, 3000)


@pytest.fixture(scope="module")
def kuhn_sets(kuhn, kuhn_expert_profile):
    return {
        "random": D.generate_random(kuhn, 2000, 0),
        "expert": D.generate_expert(kuhn, 2000, 1, kuhn_expert_profile),
        "learning": D.generate_learning(kuhn, 2000, 2),
    }


def player_counts(ds, game):
    """{infoset key: Counter(action)} over decision records."""
    out = defaultdict(Counter)
    for r in ds:
        if r.actor >= 0:
            h = game.decode_history(r.state)
            out[game.key_string(h, r.actor)][r.action] += 1
    return out


@pytest.mark.parametrize("kind", ["random", "expert", "learning"])
def test_generation_is_byte_deterministic(kuhn, kuhn_expert_profile, kind):
    def make():
        if kind == "random":
            return D.generate_random(kuhn, 500, 42)
        if kind == "expert":
            return D.generate_expert(kuhn, 500, 42, kuhn_expert_profile)
        return D.generate_learning(kuhn, 500, 42)
    assert make().to_text() == make().to_text()
    assert make().to_text() != D.generate_random(kuhn, 500, 43).to_text() or kind != "random"


@pytest.mark.parametrize("kind", ["random", "expert", "learning"])
def test_records_pass_invariants_and_replay(kuhn, kuhn_sets, kind):
    ds = kuhn_sets[kind]
    assert len(ds) == ds.meta.size == 2000
    ds.validate()
    D.check_replay(ds, kuhn)


@pytest.mark.parametrize("gid", ["kuhn_3", "leduc_2", "leduc_3", "liars_dice_3", "phantom_ttt"])
def test_random_datasets_replay_in_other_games(gid):
    g = make_game(gid)
    ds = D.generate_random(g, 600, 5)
    ds.validate()
    D.check_replay(ds, g)
    assert any(r.actor == -1 for r in ds) or gid == "phantom_ttt"
    assert any(r.terminal for r in ds)


def test_chance_records_use_actor_minus_one(kuhn, kuhn_sets):
    first = [r for r in kuhn_sets["random"] if r.step == 0]
    assert first and all(r.actor == -1 for r in first)
    assert all(r.legal_mask.sum() == 6 for r in first)


def test_random_play_is_uniform(kuhn):
    ds = D.generate_random(kuhn, 20_000, 9)
    tested = 0
    for key, counts in player_counts(ds, kuhn).items():
        n = sum(counts.values())
        if n >= 100:
            obs = [counts[a] for a in (0, 1)]
            assert chisquare(obs).pvalue > 0.01, key
            tested += 1
    assert tested == 12


def test_expert_accepts_converged_profile(kuhn, kuhn_expert_profile):
    from oef.exact import nash_conv
    assert nash_conv(kuhn, kuhn_expert_profile).nash_conv < 0.01
    D.generate_expert(kuhn, 10, 0, kuhn_expert_profile)


def test_expert_rejects_uniform(kuhn):
    with pytest.raises(D.NotExpertError, match="not-expert"):
        D.generate_expert(kuhn, 10, 0, Policy(6))


def test_learning_data_drifts_away_from_uniform(kuhn, kuhn_expert_profile):
    ds = D.generate_learning(kuhn, 5000, 3)
    n = len(ds) // 10
    first = D.Dataset(replace(ds.meta, size=n), ds.records[:n])
    last = D.Dataset(replace(ds.meta, size=n), ds.records[-n:])

    def distance(part):
        counts = player_counts(part, kuhn)
        total = 0.0
        for c in counts.values():
            freq = np.array([c[0], c[1]], dtype=float) / sum(c.values())
            total += np.abs(freq - 0.5).sum()
        return total / len(counts)

    assert distance(first) < distance(last)


def test_budget_is_exact(kuhn):
    for size in (1, 7, 333):
        assert len(D.generate_random(kuhn, size, 0)) == size
        assert len(D.generate_learning(kuhn, size, 0)) == size


def test_budget_must_be_positive(kuhn):
    with pytest.raises(D.DatasetError):
        D.generate_random(kuhn, 0, 0)


def marked(ds):
    """Copy of ``ds`` whose step ids are shifted to tag the source."""
    recs = [replace(r, step=r.step + 10_000) for r in ds]
    return D.Dataset(replace(ds.meta), recs)


@pytest.mark.parametrize("rho,target,n_random", [(0.0, 1000, 0), (1.0, 1000, 1000),
                                                 (0.5, 1000, 500), (0.25, 999, 250)])
def test_hybrid_split(kuhn_sets, rho, target, n_random):
    rnd = marked(kuhn_sets["random"])
    mix = D.mix_hybrid(rnd, kuhn_sets["expert"], rho, target, seed=4)
    assert len(mix) == target
    assert sum(r.step >= 10_000 for r in mix) == n_random
    assert mix.meta.kind == "hybrid" and mix.meta.rho == rho
    mix.validate()


def test_hybrid_endpoint_is_permutation_of_source(kuhn_sets):
    exp = kuhn_sets["expert"]
    mix = D.mix_hybrid(kuhn_sets["random"], exp, 0.0, len(exp), seed=0)
    strip = lambda r: replace(r, episode=0).to_json()  # noqa: E731
    assert Counter(map(strip, mix)) == Counter(map(strip, exp))
    assert [strip(r) for r in mix] != [strip(r) for r in exp]


def test_hybrid_insufficient_records(kuhn_sets):
    with pytest.raises(D.DatasetError, match="insufficient"):
        D.mix_hybrid(kuhn_sets["random"], kuhn_sets["expert"], 0.5, 5000, seed=0)


def test_save_load_roundtrip(tmp_path, kuhn_sets):
    for kind, ds in kuhn_sets.items():
        path = tmp_path / f"{kind}.jsonl"
        D.save(ds, path)
        back = D.load(path)
        assert back.to_text() == ds.to_text()
        assert path.read_bytes() == ds.to_text().encode()


def test_file_layout(tmp_path, kuhn_sets):
    path = tmp_path / "r.jsonl"
    D.save(kuhn_sets["random"], path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#META {")
    assert all(list(json.loads(line)) == list(D.FIELDS) for line in lines[1:])


def test_truncated_file_is_size_mismatch(tmp_path, kuhn_sets):
    text = kuhn_sets["random"].to_text()
    path = tmp_path / "t.jsonl"
    path.write_text("\n".join(text.splitlines()[:-3]) + "\n")
    with pytest.raises(D.DatasetError, match="size mismatch"):
        D.load(path)


def test_unknown_field_is_named(tmp_path, kuhn_sets):
    lines = kuhn_sets["random"].to_text().splitlines()
    lines[2] = lines[2][:-1] + ',"bogus":1}'
    with pytest.raises(D.DatasetError, match="bogus"):
        D.loads("\n".join(lines))


def test_malformed_line_reports_line_number(kuhn_sets):
    lines = kuhn_sets["random"].to_text().splitlines()
    lines[4] = lines[4][:20]
    with pytest.raises(D.DatasetError, match="line 5"):
        D.loads("\n".join(lines))


def test_missing_header():
    with pytest.raises(D.DatasetError, match="META"):
        D.loads('{"episode":0}\n')


def test_replay_check_catches_tampering(kuhn, kuhn_sets):
    ds = kuhn_sets["random"]
    bad = next(i for i, r in enumerate(ds.records) if r.terminal)
    recs = list(ds.records)
    recs[bad] = replace(recs[bad], rewards=-recs[bad].rewards + 1)
    with pytest.raises(D.DatasetError, match="replay"):
        D.check_replay(D.Dataset(ds.meta, recs), kuhn)
