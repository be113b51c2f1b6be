"""Sectioned key-value config parser."""

import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from jetdyn.config import ConfigSection, RunConfig, parse_config
from jetdyn.errors import MalformedFile, UnknownKey

SAMPLE = """\
# run settings
rng_seed = 7

[simulation]
dt = 0.0025
substeps = 4
noise_variance = 0.1

[segment]
kind = hold
duration = 5
offset = 40

[segment]
kind = chirp
duration = 60.5
offset = 55
"""


def test_sections_in_file_order():
    cfg = parse_config(SAMPLE)
    assert [s.name for s in cfg.sections] == \
        ["global", "simulation", "segment", "segment"]


def test_keys_before_first_header_land_in_global():
    cfg = parse_config(SAMPLE)
    assert cfg.first("global").get_int("rng_seed") == 7


def test_typed_getters():
    sim = parse_config(SAMPLE).first("simulation")
    assert sim.get_float("dt") == 0.0025
    assert sim.get_int("substeps") == 4
    assert sim.get_str("kind", "fallback") == "fallback"


def test_duplicate_sections_kept_in_order():
    segs = parse_config(SAMPLE).all("segment")
    assert len(segs) == 2
    assert segs[0].get_str("kind") == "hold"
    assert segs[1].get_float("duration") == 60.5


def test_first_of_missing_section_is_empty_stand_in():
    sec = parse_config(SAMPLE).first("nope")
    assert isinstance(sec, ConfigSection)
    assert sec.get_float("anything", 3.5) == 3.5


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# top\n\n[a]\nx = 1  # trailing\n")
    assert cfg.first("a").get_int("x") == 1


def test_bool_values():
    sec = parse_config("[a]\np = yes\nq = 0\n").first("a")
    assert sec.get_bool("p") is True
    assert sec.get_bool("q") is False


def test_bad_bool_reports_line():
    sec = parse_config("[a]\np = maybe\n").first("a")
    with pytest.raises(MalformedFile) as exc:
        sec.get_bool("p")
    assert exc.value.line == 2


def test_float_list():
    sec = parse_config("[a]\nws = 10, 20,30\n").first("a")
    assert sec.get_floats("ws") == (10.0, 20.0, 30.0)


def test_duplicate_key_in_section_rejected():
    with pytest.raises(MalformedFile) as exc:
        parse_config("[a]\nx = 1\nx = 2\n")
    assert exc.value.line == 3


def test_same_key_in_different_sections_allowed():
    cfg = parse_config("[a]\nx = 1\n[b]\nx = 2\n")
    assert cfg.first("b").get_int("x") == 2


def test_malformed_header_rejected():
    with pytest.raises(MalformedFile):
        parse_config("[no closing\nx = 1\n")


def test_line_without_equals_rejected():
    with pytest.raises(MalformedFile) as exc:
        parse_config("[a]\njust words\n")
    assert exc.value.line == 2


def test_non_numeric_float_reports_line():
    with pytest.raises(MalformedFile) as exc:
        parse_config("[a]\nx = fast\n").first("a").get_float("x")
    assert exc.value.line == 2


def test_reject_unknown_names_key_and_line():
    sec = parse_config("[sim]\ndt = 0.01\ntypo = 1\n").first("sim")
    with pytest.raises(UnknownKey) as exc:
        sec.reject_unknown({"dt"})
    assert "typo" in str(exc.value)
    assert exc.value.line == 3


def test_reject_unknown_passes_clean_section():
    sec = parse_config("[sim]\ndt = 0.01\n").first("sim")
    sec.reject_unknown({"dt", "substeps"})


def test_empty_text_gives_empty_config():
    cfg = parse_config("")
    assert cfg.sections == []
    assert RunConfig().first("x").entries == {}


_ident = st.text(alphabet=string.ascii_lowercase + "_", min_size=1,
                 max_size=8).filter(lambda s: not s[0].isdigit())


@given(st.dictionaries(_ident, st.floats(allow_nan=False,
                                         allow_infinity=False,
                                         width=32),
                       min_size=1, max_size=6))
def test_render_parse_round_trip(entries):
    text = "[sec]\n" + "".join(f"{k} = {v!r}\n" for k, v in entries.items())
    sec = parse_config(text).first("sec")
    for k, v in entries.items():
        assert sec.get_float(k) == v
