import json

import numpy as np
import pytest

from trajmeta.annotate import annotate, detect_errors, load_rules
from trajmeta.effects import rank_biserial
from trajmeta.features import trajectory_features
from trajmeta.ingest import canonical
from trajmeta.model import ActionCategory, ConfigurationId, Observation, Outcome
from trajmeta.synth import (ERROR_TEMPLATES, OutcomeModel, RegimeSpec, generate, generate_ecosystem,
                            outcome_probabilities, parse_spec)

from helpers import trajectory

CR, ER, _ = load_rules()
CONFIG = ConfigurationId("fw", "m", "fam")
MIX = {"Exploration": 0.3, "Modification": 0.25, "Test": 0.2, "Navigation": 0.1, "Utility": 0.1, "Unknown": 0.05}


def spec(**kw):
    base = dict(name="r", length_dist=(5, 30, 12), action_mix=MIX, error_prob=0.2, cascade_stickiness=0.5,
                repeat_prob=0.1)
    base.update(kw)
    return RegimeSpec(**base)


def test_error_templates_match_their_type():
    assert set(ERROR_TEMPLATES) == set(ER.names)
    for name, template in ERROR_TEMPLATES.items():
        text = template.format(a=7, b=3, c=2)
        t = trajectory(["x"], observations=[Observation(text, 1)])
        assert detect_errors(t, ER) == [name], name


def test_commands_classify_as_planted():
    for t in generate(spec(repeat_prob=0.0), 50, CONFIG, seed=1):
        a = annotate(t, CR, ER)
        assert [c.value for c in a.categories] == [turn.thought for turn in t.turns]


def test_generation_is_deterministic():
    a = generate(spec(), 30, CONFIG, seed=5)
    b = generate(spec(), 30, CONFIG, seed=5)
    c = generate(spec(), 30, CONFIG, seed=6)
    dump = lambda ts: [canonical.trajectory_lines(t) for t in ts]  # noqa: E731
    assert dump(a) == dump(b)
    assert dump(a) != dump(c)


def test_zero_error_probability():
    for t in generate(spec(error_prob=0.0, cascade_stickiness=0.9), 40, CONFIG, seed=2):
        assert trajectory_features(annotate(t, CR, ER)).error_rate == 0.0


def test_pure_exploration():
    mix = {"Exploration": 1.0}
    for t in generate(spec(action_mix=mix), 20, CONFIG, seed=3):
        assert trajectory_features(annotate(t, CR, ER)).exploration_ratio == 1.0


def test_action_mix_is_recovered():
    trajs = generate(spec(error_prob=0.0, repeat_prob=0.0), 1000, CONFIG, seed=4)
    cats = [c for t in trajs for c in annotate(t, CR, ER).categories]
    assert len(cats) >= 10_000
    for cat in ActionCategory:
        assert np.mean([c is cat for c in cats]) == pytest.approx(MIX[cat.value], abs=0.03)


def test_planted_length_effect():
    om = OutcomeModel("length", direction=1, strength=2.0)
    trajs = generate(spec(outcome_model=om), 500, CONFIG, seed=8)
    res = [len(t.turns) for t in trajs if t.outcome is Outcome.RESOLVED]
    unres = [len(t.turns) for t in trajs if t.outcome is Outcome.FAILED]
    r, _ = rank_biserial(res, unres)
    assert r >= 0.4


def test_outcome_probabilities_direction():
    p = outcome_probabilities([1, 2, 3], OutcomeModel("length", 1, 1.0))
    assert p[0] > p[1] > p[2]
    q = outcome_probabilities([1, 2, 3], OutcomeModel("length", -1, 1.0))
    assert q[0] < q[2]
    assert np.all(outcome_probabilities([4, 4], OutcomeModel("length", 1, 3.0)) == 0.5)


@pytest.mark.parametrize("kw", [
    {"action_mix": {"Exploration": 0.5}},
    {"action_mix": {"Browsing": 1.0}},
    {"length_dist": (10, 5, 7)},
    {"error_prob": 1.5},
    {"error_types": ("no_such_type",)},
])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        spec(**kw)


def test_invalid_outcome_model():
    with pytest.raises(ValueError):
        OutcomeModel("wall_clock")
    with pytest.raises(ValueError):
        OutcomeModel("length", direction=2)


def test_n_must_be_positive():
    with pytest.raises(ValueError):
        generate(spec(), 0, CONFIG, seed=0)


def test_ecosystem_streams_and_checks():
    c2 = ConfigurationId("fw", "m2", "fam")
    eco = generate_ecosystem([(spec(), CONFIG, 5), (spec(), c2, 5)], seed=3)
    assert len(eco) == 10
    assert eco[0].turns != eco[5].turns
    with pytest.raises(ValueError):
        generate_ecosystem([(spec(), CONFIG, 5)], seed=0)
    with pytest.raises(ValueError):
        generate_ecosystem([(spec(), CONFIG, 5), (spec(), CONFIG, 5)], seed=0)


def test_ecosystem_parallel_matches_serial():
    specs = [(spec(), ConfigurationId("fw", f"m{i}", "fam"), 6) for i in range(3)]
    assert generate_ecosystem(specs, seed=2) == generate_ecosystem(specs, seed=2, jobs=2)


def test_parse_spec_file():
    data = json.loads(json.dumps({
        "regimes": {"a": {"length_dist": [3, 9, 5], "action_mix": MIX,
                          "outcome_model": {"feature": "length", "direction": "lower", "strength": 1.0}}},
        "configs": [{"framework": "f", "llm": "m", "llm_family": "x", "regime": "a", "n": 7}],
    }))
    ((regime, config, n),) = parse_spec(data)
    assert n == 7 and config.llm_family == "x"
    assert regime.outcome_model.direction == 1
    with pytest.raises(ValueError, match="unknown regime"):
        parse_spec({**data, "configs": [{"framework": "f", "llm": "m", "regime": "b"}]})
    with pytest.raises(ValueError, match="missing key"):
        parse_spec({"configs": []})
