import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdptree import families
from mdptree.sketch import (
    SketchError,
    StateCapExceeded,
    action_sets,
    assignment_index,
    assignment_values,
    enumerate_assignments,
    format_assignment,
    instantiate,
    parse_property,
    parse_sketch,
)
from mdptree.sketch.compile import ExpressionCompiler
from mdptree.sketch.syntax import _Parser

ONE_STEP = "mdp\nmodule m\n  s : [0..1] init 0;\n  [] s=0 -> 1: (s'=1);\nendmodule\n"


def quiet(fn, *a, **k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*a, **k)


def test_grid_template_structure():
    p = parse_sketch(families.GRID_SKETCH)
    assert [h.name for h in p.holes] == ["OX", "OY"]
    assert [len(h.domain) for h in p.holes] == [4, 3]
    assert [m.name for m in p.modules] == ["clock", "agent"]
    assert p.family_size == 12


def test_empty_input_needs_model_type():
    with pytest.raises(SketchError, match="expected model type") as e:
        parse_sketch("")
    assert e.value.line == 1


@pytest.mark.parametrize(
    "text, message, line",
    [
        ("dtmc\n", "only 'mdp'", 1),
        ("mdp\nhole int H in {1..2};\nhole int H in {1..2};\n", "declared twice", 3),
        ("mdp\nmodule m\n s:[0..1] init 0;\n [] s=q -> (s'=1);\nendmodule\n", "undeclared identifier 'q'", 4),
        ("mdp\nhole int H in {3..1};\n", "empty domain", 2),
        ("mdp\nhole int H in {1,1};\n", "duplicate values", 2),
        ("mdp\nmodule m\n s:[0..1] init 0;\n [] s=0 -> (s'=1)\nendmodule\n", "expected ';'", 5),
        ("mdp\nmodule m\n s:[0..1] init 0;\n [] s=0 @ (s'=1);\nendmodule\n", "unexpected character", 4),
    ],
)
def test_diagnostics_carry_positions(text, message, line):
    with pytest.raises(SketchError, match=message) as e:
        parse_sketch(text)
    assert e.value.line == line


def test_position_format_without_column():
    assert str(SketchError("boom", 4)) == "line 4: boom"
    assert str(SketchError("boom", 4, 2)) == "line 4, column 2: boom"


def test_singleton_domain_keeps_family_size():
    p = parse_sketch("mdp\nhole int A in {1..1};\nhole int B in {0,5,7};\nmodule m\n s:[0..1] init 0;\n [] true -> (s'=B>1?1:0);\nendmodule\n")
    assert p.family_size == 3
    assert [h.domain for h in p.holes] == [(1,), (0, 5, 7)]


def test_enumeration_order_and_bounds():
    p = parse_sketch(families.GRID_SKETCH)
    a = enumerate_assignments(p)
    assert len(a) == 12
    assert a[0] == {"OX": 2, "OY": 2} and a[-1] == {"OX": 5, "OY": 4}
    assert a[1] == {"OX": 2, "OY": 3}
    assert enumerate_assignments(parse_sketch(ONE_STEP)) == [{}]


def test_enumeration_size_product_and_cap():
    p = parse_sketch("mdp\nhole int A in {0..1};\nhole int B in {0..2};\nhole int C in {0..4};\nmodule m\n s:[0..1] init 0;\n [] true -> true;\nendmodule\n")
    assert len(enumerate_assignments(p)) == 30
    with pytest.raises(SketchError):
        enumerate_assignments(p, cap=29)


def test_assignment_index_round_trip():
    p = parse_sketch(families.GRID_SKETCH)
    for i, a in enumerate(enumerate_assignments(p)):
        assert assignment_index(p, a) == i
        assert assignment_values(p, i) == (a["OX"], a["OY"])
    assert format_assignment(p, 4) == "OX=3,OY=3"


def test_instantiate_grid_member():
    p = parse_sketch(families.GRID_SKETCH)
    m = quiet(instantiate, p, {"OX": 3, "OY": 3})
    names = m.variable_names
    init = dict(zip(names, m.valuations[m.initial].tolist()))
    assert init == {"clk": 0, "x": 1, "y": 1, "crash": 0}
    assert m.n_states == 71
    # every state is a distinct valuation
    assert len({tuple(r) for r in m.valuations.tolist()}) == m.n_states
    for s in range(m.n_states):
        for a in m.actions(s):
            assert sum(m.distribution(s, a).values()) == 1


def test_single_command_chain_with_deadlock_self_loop():
    with pytest.warns(UserWarning, match="deadlock"):
        m = instantiate(parse_sketch(ONE_STEP), 0)
    assert m.n_states == 2
    assert m.distribution(m.initial, m.actions(m.initial)[0]) == {1: Fraction(1)}
    assert m.actions(1) == ["_selfloop"]


def test_grid_members_share_action_sets():
    p = parse_sketch(families.GRID_SKETCH)
    sets = [action_sets(quiet(instantiate, p, i)) for i in range(12)]
    for a in sets[1:]:
        common = set(a) & set(sets[0])
        assert all(a[s] == sets[0][s] for s in common)


def test_synchronised_modules_multiply():
    text = (
        "mdp\nmodule a\n x:[0..1] init 0;\n [go] x=0 -> 0.5:(x'=1) + 0.5:(x'=0);\nendmodule\n"
        "module b\n y:[0..1] init 0;\n [go] y=0 -> 0.2:(y'=1) + 0.8:(y'=0);\nendmodule\n"
    )
    m = quiet(instantiate, parse_sketch(text), 0)
    dist = {tuple(m.valuations[t].tolist()): p for t, p in m.distribution(m.initial, "go").items()}
    assert dist == {(1, 1): Fraction(1, 10), (1, 0): Fraction(2, 5), (0, 1): Fraction(1, 10), (0, 0): Fraction(2, 5)}


@pytest.mark.parametrize(
    "body, message",
    [
        ("[] s=0 -> 0.5: (s'=1) + 0.4: (s'=0);", "sum to 9/10"),
        ("[] s=0 -> (s'=2);", "outside"),
        ("[] s=0 -> H/2: (s'=1) + 1-H/2: (s'=0);", "probability"),
    ],
)
def test_semantic_errors(body, message):
    text = f"mdp\nhole int H in {{1..2}};\nmodule m\n s:[0..1] init 0;\n {body}\nendmodule\n"
    with pytest.raises(SketchError, match=message):
        quiet(instantiate, parse_sketch(text), 0)


def test_state_cap():
    with pytest.raises(StateCapExceeded):
        quiet(instantiate, parse_sketch(families.GRID_SKETCH), 0, state_cap=5)


def test_property_forms():
    p = parse_sketch(families.TWO_MEMBER_SKETCH)
    spec = parse_property('P>=0.5 [ F "goal" ]', p)
    assert spec.threshold == 0.5
    inline = parse_property("P >= 0.25 [F (s=2)]", p)
    assert inline.threshold == 0.25
    grid = parse_sketch(families.GRID_SKETCH)
    assert parse_property('P>=1 [ F "goal" ]', grid).threshold == 1.0  # formula fallback
    with pytest.raises(SketchError, match="unknown label"):
        parse_property('P>=0.5 [ F "nope" ]', p)
    with pytest.raises(SketchError):
        parse_property("P<=0.5 [ F (s=2) ]", p)
    with pytest.raises(SketchError):
        parse_property("P>=1.5 [ F (s=2) ]", p)


def test_target_predicate_marks_states():
    p = parse_sketch(families.TWO_MEMBER_SKETCH)
    m = quiet(instantiate, p, 0, target=parse_property('P>=0.5 [ F "goal" ]', p).target)
    assert [int(v[0]) for v in m.valuations[m.targets]] == [2]


ints = st.integers(-4, 4)


@given(ints, ints, st.lists(ints, min_size=5, max_size=5))
def test_compiled_expressions_vectorise(b, h, xs):
    p = parse_sketch("mdp\nhole int H in {-4..4};\nmodule m\n x:[-4..4] init 0;\n y:[-4..4] init 0;\n [] true -> true;\nendmodule\n")
    texts = ["x+y*H", "min(x,y)-max(H,1)", "x<=y & !(H=2) | y>x", "(x>0 ? y : H) + 3", "x=y => H>0"]
    comp = ExpressionCompiler(p)
    xs = np.array(xs)
    for text in texts:
        f = comp.compile(_Parser(text).expr())
        scalar = [f((int(x), b), (h,)) for x in xs]
        vector = f((xs, np.full(5, b)), (np.full(5, h),))
        assert np.array_equal(np.asarray(vector).astype(int), np.asarray(scalar).astype(int)), text
