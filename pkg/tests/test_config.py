import numpy as np
import pytest

from nsaclab.config import KINDS, default_config, load_config, parse_config, rng
from nsaclab.errors import ConfigError

CONVERGE = """
[run]
kind = converge
seed = 7

[geometry]
shape = circle
radius = 1.0
delta = 0.32

[sweep]
eps = 0.08, 0.04, 0.02
"""


def test_parse_typed_values():
    cfg = parse_config(CONVERGE)
    assert cfg.kind == "converge"
    assert cfg.seed == 7
    assert cfg["geometry"]["radius"] == 1.0
    assert cfg.eps_values() == (0.08, 0.04, 0.02)
    assert cfg.delta() == 0.32
    assert cfg["model"]["nu_plus"] == 1.0


@pytest.mark.parametrize("kind", KINDS)
def test_defaults_validate(kind):
    cfg = default_config(kind)
    assert cfg.kind == kind
    for e in cfg.eps_values():
        assert e <= cfg.delta() / 4 or kind in ("profile", "mcf")


@pytest.mark.parametrize("text,field", [
    ("[run]\nkind = profile\n[bogus]\nx = 1\n", "bogus"),
    ("[run]\nkind = profile\n[model]\nepsilon = 0.1\n", "model.epsilon"),
    ("[run]\nkind = profile\n[model]\neps = abc\n", "model.eps"),
    ("[run]\nkind = profile\n[model]\neps = -0.1\n", "model.eps"),
    ("[run]\nkind = nope\n", "run.kind"),
    ("[run]\nkind = profile\n[geometry]\nshape = square\n", "geometry.shape"),
    ("[run]\nkind = simulate\n[geometry]\nradius = 0.4\n[model]\neps = 0.05\n", "model.eps"),
    ("[run]\nkind = converge\n[geometry]\ndelta = 0.32\n[sweep]\neps = 0.08, 0.04\n", "sweep.eps"),
    ("[run]\nkind = converge\n[geometry]\ndelta = 0.32\n[sweep]\neps = 0.2, 0.04, 0.02\n", "sweep.eps"),
    ("[run]\nkind = profile\n[geometry]\nradius = 1.0\ndelta = 0.4\n", "geometry.delta"),
    ("[run]\nkind = profile\n[grid]\nstencil = fd4\n", "grid.stencil"),
    ("[run]\nkind = profile\n[output]\nplots = maybe\n", "output.plots"),
])
def test_field_level_errors(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert field in str(info.value)


def test_kind_required_and_consistent():
    with pytest.raises(ConfigError):
        parse_config("[geometry]\nradius = 1.0\n")
    with pytest.raises(ConfigError):
        parse_config(CONVERGE, kind="spectrum")
    assert parse_config("", kind="profile").kind == "profile"


def test_malformed_text():
    with pytest.raises(ConfigError):
        parse_config("not an ini file")


def test_hash_is_deterministic_and_sensitive(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(CONVERGE)
    a, b = load_config(path), parse_config(CONVERGE)
    assert a.hash() == b.hash()
    assert a == b
    c = parse_config(CONVERGE.replace("seed = 7", "seed = 8"))
    assert c.hash() != a.hash()


def test_rng_is_keyed():
    x = rng(3).standard_normal(5)
    assert np.array_equal(x, rng(3).standard_normal(5))
    assert not np.array_equal(x, rng(4).standard_normal(5))
