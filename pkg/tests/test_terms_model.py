import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distme.basis import SplineBasis, difference_penalty
from distme.model import (
    FormulaError,
    MESpec,
    ModelSpec,
    TermSpec,
    build_model,
    format_formula,
    parse_formula,
)
from distme.terms import LinearTerm, PSplineTerm, TensorTerm, default_omega_grid, sum_to_zero_map


def test_constraint_centres_the_smooth(rng):
    x = rng.uniform(-2, 2, 300)
    term = PSplineTerm("x", x, SplineBasis.from_data(x, 12))
    gamma = rng.normal(size=term.n_coef)
    f = term.evaluate(gamma)
    assert abs(f.sum()) < 1e-10
    assert term.n_coef == term.basis.n_basis - 1


@pytest.mark.parametrize("order", [1, 2, 3])
def test_constraint_keeps_penalty_rank(order, rng):
    x = rng.uniform(0, 1, 100)
    term = PSplineTerm("x", x, SplineBasis.from_data(x, 10), order=order)
    L = term.basis.n_basis
    assert term.rank == L - order == np.linalg.matrix_rank(term.penalty.matrix, tol=1e-10)


def test_sum_to_zero_map_is_orthonormal(rng):
    B = rng.uniform(size=(40, 7))
    Z = sum_to_zero_map(B)
    np.testing.assert_allclose(Z.T @ Z, np.eye(6), atol=1e-12)
    np.testing.assert_allclose(np.ones(40) @ B @ Z, 0, atol=1e-12)


def test_linear_term_treatment_coding():
    t = LinearTerm.from_column("period", np.array(["b", "a", "c", "a"], dtype=object))
    assert t.labels == ["period[b]", "period[c]"]
    np.testing.assert_array_equal(t.B, [[1, 0], [0, 0], [0, 1], [0, 0]])
    assert not t.penalized
    ridge = LinearTerm.from_column("v", np.array([0.0, 1.0]), prior="ridge")
    assert ridge.penalized and ridge.rank == 1


def test_tensor_term_penalty_and_pseudodeterminant(rng):
    sx, sy = rng.uniform(0, 1, 150), rng.uniform(0, 2, 150)
    bx, by = SplineBasis(0, 1, 5), SplineBasis(0, 2, 5)
    term = TensorTerm("sx", "sy", sx, sy, bx, by)
    Kx, Ky = difference_penalty(bx.n_basis, 2), difference_penalty(by.n_basis, 2)
    Z = term.Z
    for g, omega in enumerate(default_omega_grid()):
        dense = Z.T @ (omega * np.kron(Kx.matrix, np.eye(by.n_basis)) + (1 - omega) * np.kron(np.eye(bx.n_basis), Ky.matrix)) @ Z
        np.testing.assert_allclose(term.penalty_matrix(omega), dense, atol=1e-10)
        ev = np.linalg.eigvalsh(dense)
        want = np.sum(np.log(ev[ev > 1e-9]))
        assert term.log_pdet(g) == pytest.approx(want, rel=1e-9)
    assert term.rank == bx.n_basis * by.n_basis - 4


def test_curve_matches_evaluate_on_data(rng):
    x = rng.uniform(-1, 1, 80)
    term = PSplineTerm("x", x, SplineBasis.from_data(x, 8))
    gamma = rng.normal(size=term.n_coef)
    np.testing.assert_allclose(term.curve(x, gamma), term.evaluate(gamma), atol=1e-12)


def test_parse_formula_fills_defaults_and_round_trips():
    terms = parse_formula("linear(period) + me_pspline(er, knots=20) + tensor(cx, cy, knots_x=8, knots_y=8)")
    assert [t.kind for t in terms] == ["linear", "me_pspline", "tensor"]
    assert terms[1].options == ()  # 20 is the default
    assert terms[2].option("knots_x") == 8 and terms[2].option("degree") == 3
    assert parse_formula(format_formula(terms)) == terms
    assert parse_formula("1") == [] and format_formula([]) == "1"


@pytest.mark.parametrize("text,msg", [
    ("spline(x)", "unknown term type"),
    ("pspline(x, nots=3)", "no option 'nots'"),
    ("pspline(x, knots=a)", "must be int"),
    ("tensor(x)", "takes 2 variable"),
    ("pspline x", "cannot parse"),
])
def test_parse_formula_errors(text, msg):
    with pytest.raises(FormulaError, match=msg):
        parse_formula(text)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(
    st.sampled_from(["linear", "pspline", "me_pspline", "tensor"]),
    st.sampled_from(["a", "b_1", "zz"]),
    st.integers(4, 25)), max_size=4))
def test_formula_round_trip_property(items):
    parts = []
    for kind, var, knots in items:
        if kind == "linear":
            parts.append(f"linear({var})")
        elif kind == "tensor":
            parts.append(f"tensor({var}, w, knots_x={knots})")
        else:
            parts.append(f"{kind}({var}, knots={knots})")
    terms = parse_formula(" + ".join(parts))
    assert parse_formula(format_formula(terms)) == terms


def _me_data(rng, n=30, M=3):
    x = rng.normal(size=n)
    cols = {"y": rng.normal(size=n), "v": rng.integers(0, 2, n).astype(float)}
    for m in range(M):
        cols[f"x_{m + 1}"] = x + rng.normal(size=n)
    return cols


def test_build_model_with_global_pattern(rng):
    data = _me_data(rng)
    spec = ModelSpec("gaussian", [TermSpec("me_pspline", ("x",))], [TermSpec("linear", ("v",))],
                     MESpec(sigma2=1.0, c_u=0.8))
    model = build_model(spec, data)
    S = model.block.Sigma[0]
    np.testing.assert_allclose(S, [[1, 0.8, 0.8], [0.8, 1, 0.8], [0.8, 0.8, 1]])
    assert model.me_position == (0, 1)
    assert [t.name for t in model.predictors[1].terms] == ["(Intercept)", "linear(v)"]


def test_build_model_conflicting_me_covariance_inputs(rng):
    data = _me_data(rng)
    for j, k in [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]:
        data[f"x_cov_{j}{k}"] = np.full(30, 1.0 if j == k else 0.1)
    spec = ModelSpec("gaussian", [TermSpec("me_pspline", ("x",))], [], MESpec(sigma2=1.0, c_u=0.0))
    with pytest.raises(FormulaError, match="conflicting"):
        build_model(spec, data)
    spec.me = MESpec()
    model = build_model(spec, data)
    assert model.block.Sigma[0, 0, 1] == 0.1


def test_build_model_missing_variable(rng):
    spec = ModelSpec("gaussian", [TermSpec("pspline", ("w",))], [])
    with pytest.raises(FormulaError, match="not found"):
        build_model(spec, _me_data(rng))


def test_build_model_rejects_two_me_terms(rng):
    data = _me_data(rng)
    spec = ModelSpec("gaussian", [TermSpec("me_pspline", ("x",))], [TermSpec("me_pspline", ("x",))],
                     MESpec(sigma2=1.0))
    with pytest.raises(FormulaError, match="at most one"):
        build_model(spec, data)
