import pytest
from hypothesis import given, settings, strategies as st

from errorcalc import config
from errorcalc.config import Expression, parse
from errorcalc.exceptions import ConfigError

FULL = """
# a comment
model.family = normal-location
model.lower = -1
model.upper = 1
model.excluded = 0
prior.kind = density
prior.density = 1 + theta/2
psi.map = branches
psi.branch.1.lower = -1
psi.branch.1.upper = 0
psi.branch.1.forward = theta^2
psi.branch.1.inverse = -sqrt(a)
psi.branch.1.derivative = 2*theta
psi.branch.2.lower = 0
psi.branch.2.upper = 1
psi.branch.2.forward = theta^2
psi.branch.2.inverse = sqrt(a)
run.a = 0.25, 0.5
run.n = 10000
run.seed = 3
run.lemma = yes
output.format = csv
"""


def test_parse_types():
    cfg = parse(FULL)
    assert cfg.get("model.lower") == -1.0
    assert cfg.get("model.excluded") == (0.0,)
    assert cfg.get("run.a") == (0.25, 0.5)
    assert cfg.get("run.n") == 10000
    assert cfg.get("run.lemma") is True
    assert cfg.get("prior.density")(0.5) == pytest.approx(1.25)
    branches = cfg.branches()
    assert len(branches) == 2 and branches[0]["inverse"](0.25) == pytest.approx(-0.5)


def test_round_trip():
    cfg = parse(FULL)
    again = parse(cfg.serialize())
    assert again == cfg
    assert again.serialize() == cfg.serialize()


@pytest.mark.parametrize("text, key", [
    ("model.family = normal-location\nmodel.colour = red\n", "model.colour"),
    ("model.family = normal-wobble\n", "model.family"),
    ("prior.kind = uniform\n", "model.family"),
    ("model.family = normal-location\nrun.n = 1.5\n", "run.n"),
    ("model.family = normal-location\nrun.n = 10\nrun.n = 20\n", "run.n"),
    ("model.family = normal-location\nmystery.key = 1\n", "mystery.key"),
    ("model.family = normal-location\npsi.map = sine\n", "psi.map"),
    ("model.family = normal-location\npsi.branch.1.slope = 2\n", "psi.branch.1.slope"),
    ("model.family = normal-location\nprior.density = __import__('os')\n", "prior.density"),
    ("model.family = normal-location\nprior.density = a + 1\n", "prior.density"),
])
def test_rejects_with_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse(text)
    assert info.value.key == key


def test_unknown_family_lists_choices():
    with pytest.raises(ConfigError, match="normal-scale"):
        parse("model.family = gamma\n")


def test_line_without_equals():
    with pytest.raises(ConfigError, match="line 2"):
        parse("model.family = normal-location\njunk\n")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(str(tmp_path / "nope.cfg"))


def test_affine_parameters():
    assert config.affine_parameters("affine(2, -1.5)") == (2.0, -1.5)


def test_expression_grammar():
    e = Expression("2*theta^2 + exp(-theta) - log(1 + theta)/sqrt(4)")
    assert e(1.0) == pytest.approx(2 + 0.36787944117144233 - 0.34657359027997264)
    assert e.derivative(1.0) == pytest.approx(4 - 0.36787944117144233 - 0.25, rel=1e-8)
    with pytest.raises(ConfigError):
        Expression("theta.real")
    with pytest.raises(ConfigError):
        Expression("theta if 1 else 0")


values = st.fixed_dictionaries({
    "model.family": st.sampled_from(config.FAMILIES),
    "run.n": st.integers(1, 10**7),
    "run.seed": st.integers(0, 2**31),
    "run.window": st.floats(1e-6, 1.0, allow_nan=False),
    "run.a": st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=5).map(tuple),
    "run.lemma": st.booleans(),
})


@settings(max_examples=60, deadline=None)
@given(values)
def test_round_trip_property(vals):
    cfg = config.ExperimentConfig(vals)
    assert parse(cfg.serialize()) == cfg
