import collections

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphreason import dsl
from graphreason.dsl import E, Family
from graphreason.world import CATEGORIES, RELATIONS, Scene, SceneObject, WorldConfig, sample_scene


def obj(i, x, y, color="red", shape="cube", size="large", material="metal"):
    return SceneObject(i, color, shape, size, material, float(x), float(y))


CFG = WorldConfig()


# ---- parsing ---------------------------------------------------------------------------

def test_parse_nested():
    e = dsl.parse("count(filter[red](scene()))")
    assert e == E("count", E("filter", E("scene"), token="red"))


def test_parse_is_whitespace_insensitive():
    assert dsl.parse(" count ( filter [ red ] ( scene ( ) ) ) ") == dsl.parse("count(filter[red](scene()))")


def test_truncated_input():
    with pytest.raises(dsl.SyntaxProgramError, match="expected expression") as info:
        dsl.parse("count(")
    assert info.value.offset == 6


@pytest.mark.parametrize("text, err", [
    ("count(scene()) x", dsl.SyntaxProgramError),
    ("count(scene()$)", dsl.LexError),
    ("frobnicate(scene())", dsl.UnknownModuleError),
    ("count(scene(),scene())", dsl.ArityError),
    ("count[red](scene())", dsl.ArityError),
    ("filter(scene())", dsl.ArityError),
    ("count(count(scene()))", dsl.KindError),
    ("filter[red](scene())", dsl.KindError),
    ("describe[flavour](scene())", dsl.TokenError),
    ("count(relate[above](scene()))", dsl.TokenError),
    ("compare[bigger](count(scene()),count(scene()))", dsl.TokenError),
    ("compare[eq_attr:color](describe[shape](scene()),describe[shape](scene()))", dsl.KindError),
    ("compare[eq_int](describe[shape](scene()),count(scene()))", dsl.KindError),
])
def test_parse_errors_are_distinct(text, err):
    with pytest.raises(err):
        dsl.parse(text)


def test_error_carries_span():
    with pytest.raises(dsl.UnknownModuleError) as info:
        dsl.parse("count(blah(scene()))")
    assert info.value.span == (6, 10)


def test_filter_token_checked_against_world():
    dsl.parse("exist(filter[magenta](scene()))")      # syntax-only without a world
    with pytest.raises(dsl.TokenError):
        dsl.parse("exist(filter[magenta](scene()))", CFG)


def test_unique_is_accepted():
    e = dsl.parse("describe[color](unique(filter[red](scene())))")
    scene = Scene((obj(0, 0, 0), obj(1, 1, 1, color="blue")))
    assert dsl.oracle(e, scene) == "red"


# ---- printing -----------------------------------------------------------------------------

def test_print_scene():
    assert dsl.to_text(E("scene")) == "scene()"


def test_print_chain_parens():
    text = dsl.to_text(E("count", E("filter", E("scene"), token="red")))
    assert text.count("(") == 3 and " " not in text


def _expr_strategy():
    sets = st.recursive(
        st.just(E("scene")),
        lambda inner: st.one_of(
            st.builds(lambda c, t: E("filter", c, token=t), inner, st.sampled_from(CFG.attribute_labels())),
            st.builds(lambda c, t: E("relate", c, token=t), inner, st.sampled_from(RELATIONS)),
            st.builds(lambda c, t: E("same", c, token=t), inner, st.sampled_from(CATEGORIES)),
            st.builds(lambda c: E("unique", c), inner),
            st.builds(lambda a, b, m: E(m, a, b), inner, inner, st.sampled_from(["intersect", "union"])),
        ),
        max_leaves=6,
    )
    number = st.builds(lambda s: E("count", s), sets)
    attr = lambda cat: st.builds(lambda s: E("describe", s, token=cat), sets)
    eq_attr = st.sampled_from(CATEGORIES).flatmap(
        lambda c: st.builds(lambda a, b: E("compare", a, b, token=f"eq_attr:{c}"), attr(c), attr(c)))
    return st.one_of(
        number,
        st.builds(lambda s: E("exist", s), sets),
        st.sampled_from(CATEGORIES).flatmap(attr),
        st.builds(lambda a, b, k: E("compare", a, b, token=k), number, number,
                  st.sampled_from(["eq_int", "greater", "less"])),
        eq_attr,
    )


@settings(max_examples=500)
@given(_expr_strategy())
def test_print_parse_round_trip(e):
    text = dsl.to_text(e)
    assert dsl.parse(text, CFG) == e
    assert dsl.to_text(dsl.parse(text)) == text


def test_round_trip_over_generated_programs():
    rng = np.random.default_rng(0)
    seen = 0
    while seen < 10_000:
        scene = sample_scene(CFG, rng)
        for fam in dsl.FAMILIES:
            try:
                e, _ = dsl.generate(scene, fam, rng, CFG)
            except dsl.GenerationError:
                continue
            text = dsl.to_text(e)
            assert dsl.parse(text, CFG) == e
            seen += 1


# ---- oracle ---------------------------------------------------------------------------------

def test_oracle_examples():
    s = Scene((obj(0, 0, 0), obj(1, 1, 1), obj(2, 2, 2, color="blue", shape="sphere")))
    assert dsl.oracle(dsl.parse("count(filter[red](scene()))"), s) == "2"
    assert dsl.oracle(dsl.parse("exist(filter[green](scene()))"), s) == "no"
    assert dsl.oracle(dsl.parse("compare[eq_int](count(scene()),count(scene()))"), s) == "yes"
    assert dsl.oracle(dsl.parse("describe[shape](filter[blue](scene()))"), s) == "sphere"
    assert dsl.oracle(dsl.parse("count(same[color](filter[blue](scene())))"), s) == "0"
    assert dsl.oracle(dsl.parse("count(same[shape](filter[large](filter[blue](scene()))))"), s) == "0"
    assert dsl.oracle(dsl.parse("count(relate[left](filter[blue](scene())))"), s) == "2"
    assert dsl.oracle(dsl.parse("compare[eq_attr:size](describe[size](filter[blue](scene())),"
                                "describe[size](filter[sphere](scene())))"), s) == "yes"


def test_relate_takes_union_over_selection():
    s = Scene((obj(0, 0, 0), obj(1, 5, 0), obj(2, 9, 0)))
    assert dsl.oracle(dsl.parse("count(relate[left](scene()))"), s) == "2"


def test_oracle_ill_posed():
    s = Scene((obj(0, 0, 0), obj(1, 1, 1)))
    with pytest.raises(dsl.IllPosedError):
        dsl.oracle(dsl.parse("describe[color](filter[red](scene()))"), s)
    with pytest.raises(dsl.IllPosedError):
        dsl.oracle(dsl.parse("count(same[color](filter[blue](scene())))"), s)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_oracle_matches_brute_force_count(seed):
    rng = np.random.default_rng(seed)
    s = sample_scene(CFG, rng)
    color = s.objects[0].color
    shape = s.objects[-1].shape
    brute = sum(1 for o in s.objects if o.color == color and o.shape == shape)
    e = dsl.parse(f"count(filter[{shape}](filter[{color}](scene())))")
    assert dsl.oracle(e, s) == str(brute)
    inter = dsl.parse(f"count(intersect(filter[{shape}](scene()),filter[{color}](scene())))")
    assert dsl.oracle(inter, s) == str(brute)


def test_family_of():
    assert dsl.family_of(dsl.parse("exist(scene())")) == Family.EXIST
    assert dsl.family_of(dsl.parse("compare[less](count(scene()),count(scene()))")) == Family.COMPARE_NUMBERS
    with pytest.raises(ValueError):
        dsl.family_of(E("scene"))


# ---- generator ------------------------------------------------------------------------------------

@pytest.mark.parametrize("family", list(Family))
def test_generate_family_structure(family):
    rng = np.random.default_rng(1)
    for _ in range(30):
        scene = sample_scene(CFG, rng)
        try:
            e, answer = dsl.generate(scene, family, rng, CFG)
        except dsl.GenerationError:
            continue
        assert dsl.family_of(e) == family
        assert dsl.oracle(e, scene) == answer        # independent re-check
        assert dsl.well_posed(e, scene)
        assert dsl.count_set_ops(e) <= dsl.MAX_SET_OPS
        for node in e.nodes():
            if node.module in ("exist", "count", "describe"):
                assert dsl.set_depth(node.children[0]) <= dsl.MAX_DEPTH
            if node.module in ("same", "describe", "relate"):
                assert len(dsl.oracle_value(node.children[0], scene)) == 1


def test_exist_answers_balanced():
    rng = np.random.default_rng(2)
    answers = collections.Counter()
    scene = None
    for k in range(10_000):
        if k % 10 == 0:
            scene = sample_scene(CFG, rng)
        _, a = dsl.generate(scene, Family.EXIST, rng, CFG)
        answers[a] += 1
    assert 0.45 <= answers["yes"] / 10_000 <= 0.55


def test_count_answers_are_spread():
    rng = np.random.default_rng(3)
    answers = collections.Counter()
    for _ in range(500):
        _, a = dsl.generate(sample_scene(CFG, rng), Family.COUNT, rng, CFG)
        answers[a] += 1
    assert answers["0"] / 500 < 0.2
    assert len(answers) >= 8


def test_generation_error_on_degenerate_scene():
    # one object: no two distinct unique selections, so compare_attribute is impossible
    with pytest.raises(dsl.GenerationError):
        dsl.generate(Scene((obj(0, 0, 0),)), Family.COMPARE_ATTRIBUTE, np.random.default_rng(0), CFG)


def test_generation_is_deterministic():
    s = sample_scene(CFG, np.random.default_rng(4))
    a = dsl.generate(s, Family.COUNT, np.random.default_rng(9), CFG)
    b = dsl.generate(s, Family.COUNT, np.random.default_rng(9), CFG)
    assert a == b
