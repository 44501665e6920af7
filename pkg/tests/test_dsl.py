import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conceptkit.concepts import builtin_registry
from conceptkit.dsl import (ParseError, TypeMismatch, UnboundSymbol, library_files, parse_concept,
                            serialize_concept, validate_concept)
from conceptkit.expr import BinOp, Call, DomainError, MissingBinding, Num, Sym, Vec, eval_expr

SPHERE = """\
concept Ball
group cap
synopsis "A ball."

param r in [0.01, 0.1] default 0.05

primitive Sphere size r at translate([0, 0, r])

grasp grasp_top "From above."
  theta phi in [0, pi] default 0
  pose frame([0, 0, r], [0, 0, -1], [cos(phi), sin(phi), 0])
  width 2 * r + 0.02
end

force lift_up "Up." linear
  dir zaxis(attach_frame)
end
"""


def _v(*xs):
    return Vec(tuple(Num(float(x)) for x in xs))


# -- parsing ------------------------------------------------------------------

def test_minimal_sphere_concept():
    c = parse_concept(SPHERE)
    assert c.id == "Ball" and c.group == "cap"
    assert [p.kind for p in c.structure.primitives] == ["Sphere"]
    assert validate_concept(c, 200).ok
    assert parse_concept(serialize_concept(c)) == c


def test_l_handle_structure():
    c = builtin_registry()["L_Handle"]
    assert [p.kind for p in c.structure.primitives] == ["Cuboid", "Cuboid"]
    names = {p.name for p in c.structure.params}
    assert {"bar_len", "stem_len", "thick"} <= names


def test_unbound_symbol():
    src = SPHERE.replace("size r at", "size rr at")
    with pytest.raises(UnboundSymbol) as ei:
        parse_concept(src)
    assert ei.value.line == 7


def test_type_mismatch():
    with pytest.raises(TypeMismatch):
        parse_concept(SPHERE.replace("width 2 * r + 0.02", "width [r, r, r]"))
    with pytest.raises(TypeMismatch):
        parse_concept(SPHERE.replace("size r at", "size r, r at"))


@pytest.mark.parametrize("mutate", [
    lambda s: s.replace("concept Ball\n", ""),
    lambda s: s.replace("end\n\nforce", "\nforce"),
    lambda s: s.replace("[0.01, 0.1]", "[0.1, 0.01]"),
    lambda s: s.replace("default 0.05", "default 0.5"),
    lambda s: s.replace("Sphere", "Cone"),
    lambda s: s.replace('"A ball."', '""'),
    lambda s: s + "group other\n",
    lambda s: s.split("force")[0],
])
def test_structured_errors(mutate):
    with pytest.raises(ParseError) as ei:
        parse_concept(mutate(SPHERE))
    e = ei.value
    assert e.line >= 1 and e.column >= 1 and e.message
    assert str(e).startswith(f"{e.line}:{e.column}:")


def test_missing_grasp_families_rejected():
    src = SPHERE.split("grasp grasp_top")[0] + SPHERE.split("end\n", 1)[1]
    with pytest.raises(ParseError):
        parse_concept(src)


def test_error_lists_expected_tokens():
    with pytest.raises(ParseError) as ei:
        parse_concept("concept X\nbogus 1\n")
    assert "param" in ei.value.expected


def test_invalid_utf8_position():
    with pytest.raises(ParseError) as ei:
        parse_concept(b"concept X\ngroup \xff\n")
    assert (ei.value.line, ei.value.column) == (2, 7)


def test_deep_nesting_is_an_error_not_a_crash():
    src = SPHERE.replace("width 2 * r + 0.02", "width " + "(" * 5000 + "r" + ")" * 5000)
    with pytest.raises(ParseError):
        parse_concept(src)


@given(st.binary(max_size=300))
@settings(max_examples=400)
def test_random_bytes_never_crash(data):
    try:
        parse_concept(data)
    except ParseError:
        pass


@given(st.text(alphabet="concept group param [](),+-*/ 0123456789.\n\"rxyz#", max_size=200))
@settings(max_examples=400)
def test_random_token_soup_never_crash(text):
    try:
        parse_concept(text)
    except ParseError:
        pass


# -- serialization --------------------------------------------------------------

@pytest.mark.parametrize("path", library_files(), ids=lambda p: p.name)
def test_library_round_trip(path):
    c = parse_concept(path.read_bytes())
    text = serialize_concept(c)
    assert parse_concept(text) == c
    assert serialize_concept(parse_concept(text)) == text


def test_serialize_deterministic():
    c = builtin_registry()["U_Handle"]
    assert serialize_concept(c).encode() == serialize_concept(c).encode()


@given(st.lists(st.sampled_from([" ", "\t", "  "]), min_size=1, max_size=30), st.integers(0, 2**16))
@settings(max_examples=60)
def test_whitespace_variants_same_ast(pads, seed):
    # widen inter-token whitespace and add comments and blank lines
    rng = np.random.default_rng(seed)
    out = []
    for line in SPHERE.splitlines():
        parts = line.split(" ") if '"' not in line else [line]
        pad = pads[int(rng.integers(len(pads)))]
        out.append(pad.join(parts) + ("  # note" if rng.random() < 0.3 else ""))
        if rng.random() < 0.2:
            out.append("")
    assert parse_concept("\n".join(out) + "\n") == parse_concept(SPHERE)


# -- evaluation --------------------------------------------------------------------

def test_eval_examples():
    assert np.array_equal(eval_expr(Call("normalize", (_v(0, 0, 2),)), {}), [0, 0, 1])
    R = eval_expr(Call("rot_z", (BinOp("/", Sym("pi"), Num(2.0)),)), {})
    assert np.abs(R.apply_points(np.array([1.0, 0, 0])) - [0, 1, 0]).max() < 1e-12
    assert np.array_equal(eval_expr(Call("cross", (_v(1, 0, 0), _v(0, 1, 0))), {}), [0, 0, 1])
    assert eval_expr(Call("deg", (Num(180.0),)), {}) == math.pi


def test_eval_errors():
    with pytest.raises(MissingBinding):
        eval_expr(BinOp("+", Sym("a"), Num(1.0)), {})
    with pytest.raises(DomainError):
        eval_expr(Call("normalize", (_v(0, 0, 0),)), {})
    with pytest.raises(DomainError):
        eval_expr(Call("sqrt", (Num(-1.0),)), {})


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_eval_referentially_transparent(a, b):
    e = Call("frame", (Vec((Sym("a"), Sym("b"), Num(1.0))), _v(0, 0, 1),
                       Vec((Call("cos", (Sym("a"),)), Call("sin", (Sym("a"),)), Num(0.0)))))
    T1, T2 = eval_expr(e, {"a": a, "b": b}), eval_expr(e, {"a": a, "b": b})
    assert T1 == T2
    assert T1.is_valid()


# -- validation ---------------------------------------------------------------------

def test_shipped_concepts_validate():
    reg = builtin_registry()
    for cid in reg:
        report = validate_concept(reg[cid], n_samples=1000 if cid == "L_Handle" else 200)
        assert report.ok, report.lines()


def test_positivity_violation():
    c = parse_concept(SPHERE.replace("size r at", "size r - 0.2 at"))
    report = validate_concept(c, 50)
    checks = {v.check for v in report.violations}
    assert checks == {"positivity"}
    assert len(report.violations) == 50
    assert "r=" in report.lines()[0]


def test_zero_norm_violation():
    c = parse_concept(SPHERE.replace("dir zaxis(attach_frame)",
                                     "dir cross(zaxis(attach_frame), zaxis(attach_frame))"))
    report = validate_concept(c, 20)
    assert report.violations and all(v.check == "zero-norm" for v in report.violations)


def test_validate_needs_samples():
    with pytest.raises(ValueError):
        validate_concept(parse_concept(SPHERE), 0)
