import pytest

from numprog.ir import (
    Cache,
    Const,
    DuplicateOperatorError,
    NONE,
    Num,
    OperatorSpec,
    Program,
    SubProgram,
    canonicalize,
    default_constants,
    default_registry,
    fixed,
    register_operator,
    resolve_nums,
    validate,
    variadic,
)


def prog(*subs):
    return Program(tuple(SubProgram(op, tuple(args)) for op, args in subs))


def test_validate_accepts_wellformed_program():
    p = prog(
        ("divide", [Num("80"), Num("4")]),
        ("power", [Num("12"), Const("const_2")]),
        ("power", [Cache(0), Const("const_2")]),
        ("subtract", [Cache(2), Cache(1)]),
        ("sqrt", [Cache(3)]),
    )
    report = validate(p, default_registry(), num_count=3, constants=default_constants())
    assert report.ok


def test_validate_empty_program_is_ok():
    assert validate(Program(()), default_registry()).ok


def test_validate_flags_unknown_operator():
    p = prog(("frobnicate", [Num("1"), Num("2")]))
    bad = validate(p, default_registry()).violations
    assert [v.kind for v in bad] == ["unknown-operator"]


def test_validate_flags_arity_mismatch():
    p = prog(("sqrt", [Num("4"), Num("9")]))
    bad = validate(p, default_registry()).violations
    assert [v.kind for v in bad] == ["arity-mismatch"]
    assert bad[0].sub_program == 0


def test_validate_flags_forward_and_self_cache_reference():
    p = prog(("add", [Cache(0), Num("3")]), ("add", [Cache(5), Num("1")]))
    kinds = [v.kind for v in validate(p, default_registry()).violations]
    assert kinds == ["forward-cache-reference", "forward-cache-reference"]


def test_validate_flags_out_of_range_num_index():
    p = prog(("add", [Num("3", index=7), Num("4", index=0)]))
    bad = validate(p, default_registry(), num_count=2).violations
    assert [v.kind for v in bad] == ["num-index-out-of-range"]


def test_validate_flags_unknown_constant():
    p = prog(("add", [Const("const_42"), Num("1")]))
    bad = validate(p, default_registry(), constants=default_constants()).violations
    assert [v.kind for v in bad] == ["unknown-constant"]


def test_arity_checked_after_stripping_trailing_none():
    p = prog(("sqrt", [Cache(0)]))
    padded = prog(("add", [Num("1"), Num("2")]), ("sqrt", [Cache(0), NONE]))
    assert validate(padded, default_registry()).ok


def test_canonicalize_strips_trailing_none_and_is_idempotent():
    p = prog(("sqrt", [Cache(0), NONE]), ("floor", [Cache(1), NONE]))
    c = canonicalize(p)
    assert c[0].operands == (Cache(0),)
    assert c[1].operands == (Cache(1),)
    assert canonicalize(c) == c


def test_canonicalize_keeps_interior_operands():
    # only the trailing run of none is padding
    p = prog(("biggest", [Num("1"), NONE, Num("2"), NONE]))
    c = canonicalize(p)
    assert c[0].operands == (Num("1"), NONE, Num("2"))


def test_register_operator_extends_without_mutation():
    base = default_registry()
    ext = register_operator(base, OperatorSpec("median", variadic(2)))
    assert "median" in ext and "median" not in base
    p = prog(("median", [Num("1"), Num("2"), Num("3"), Num("4")]))
    assert validate(p, ext).ok
    assert not validate(p, base).ok


def test_register_operator_rejects_duplicates():
    with pytest.raises(DuplicateOperatorError):
        register_operator(default_registry(), OperatorSpec("add", fixed(2)))


def test_registry_has_exactly_one_terminator():
    reg = default_registry()
    assert reg.terminator.name == "EOF"
    with pytest.raises(ValueError):
        register_operator(reg, OperatorSpec("STOP", fixed(0), "terminator"))


def test_variadic_arity():
    a = variadic(2)
    assert not a.admits(1) and a.admits(2) and a.admits(6)
    f = fixed(2)
    assert f.admits(2) and not f.admits(3)


def test_resolve_nums_binds_first_occurrence_by_value():
    p = prog(("add", [Num("5"), Num("3")]), ("subtract", [Cache(0), Num("5")]))
    bound = resolve_nums(p, [7.0, 5.0, 3.0, 5.0])
    assert bound[0].operands[0] == Num("5", index=1)
    assert bound[0].operands[1] == Num("3", index=2)
    assert bound[1].operands[1] == Num("5", index=1)


def test_resolve_nums_leaves_missing_values_unbound():
    p = prog(("add", [Num("99"), Num("3")]))
    bound = resolve_nums(p, [3.0])
    assert bound[0].operands[0].index is None
    assert bound[0].operands[1].index == 0


def test_programs_compare_by_value():
    a = prog(("add", [Num("1"), Num("2")]))
    b = prog(("add", [Num("1"), Num("2")]))
    assert a == b and hash(a) == hash(b)


def test_canonicalize_preserves_validity_on_random_programs():
    import random

    rng = random.Random(7)
    reg = default_registry()
    ops = ["add", "subtract", "multiply", "divide"]
    for _ in range(200):
        n = rng.randint(1, 6)
        subs = []
        for i in range(n):
            args = []
            for _ in range(2):
                if i > 0 and rng.random() < 0.4:
                    args.append(Cache(rng.randrange(i)))
                else:
                    args.append(Num(str(rng.randint(1, 99))))
            if rng.random() < 0.3:
                args.append(NONE)
            subs.append(("add" if not args else rng.choice(ops), args))
        p = prog(*subs)
        assert validate(canonicalize(p), reg).ok == validate(p, reg).ok
