import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from psys.analytic import (
    check_brown_resnick,
    check_exp_system,
    check_mixture_system,
    check_polyexp_system,
    check_subspace_system,
    check_two_lambda_projection,
    lt_invariants,
    stationarize_drift,
)
from psys.errors import ModelError, UnsupportedModelError
from psys.gaussian import (
    BrownianMotion,
    CustomModel,
    Deterministic,
    Drift,
    FractionalBM,
    Mix,
    OrnsteinUhlenbeck,
    Stack,
    TimeGrid,
)
from psys.measures import FiniteMixture, PolyExponential

HALF_ABS = [[0, 0, -0.5, 0]]
real = st.floats(-2, 2, allow_nan=False)


def drifted_bm():
    return Drift(BrownianMotion(), HALF_ABS)


def final_example():
    base = Mix([[1, 1], [1, -1]], Stack((BrownianMotion(), OrnsteinUhlenbeck())))
    return Drift(base, HALF_ABS * 2)


def nonzero_b(slope=1.0):
    return Drift(Deterministic([[0, 1, 0, 0], [1, 0, 0, 0]]), [[0, 0, 0, -0.5], [0, -slope, 0, 0]])


def two_lambda_model():
    return Drift(Mix([[1], [1]], BrownianMotion()), HALF_ABS * 2)


def max_residual(report):
    return max(c.max_residual for c in report.conditions)


def test_class3_drifted_bm_passes():
    rep = check_exp_system(drifted_bm(), [1.0])
    assert rep.overall
    assert max_residual(rep) < 1e-12


@pytest.mark.parametrize("s", [0.5, 1.0])
def test_undrifted_bm_c3_residual_is_half_shift(s):
    grid = TimeGrid(shifts=(s,))
    rep = check_exp_system(BrownianMotion(), [1.0], grid)
    assert not rep.overall
    c3 = rep.condition("C3-exponential-level")
    assert_allclose(c3.by_shift[s], s / 2, atol=1e-10)
    assert rep.condition("C1-variogram").passed


@pytest.mark.parametrize("u", [0.0, 0.3, 1.0])
def test_two_lambda_single_atom_passes(u):
    assert check_exp_system(two_lambda_model(), [1 + u, -u]).overall


def test_class1_ou_lebesgue_passes():
    assert check_exp_system(OrnsteinUhlenbeck(), [0.0]).overall


def test_class2_additive_mean_lebesgue_passes():
    model = Drift(BrownianMotion(), [[0, 0.7, 0, 0]])
    assert check_exp_system(model, [0.0]).overall


def test_report_serializes():
    data = json.loads(check_exp_system(BrownianMotion(), [1.0]).to_json())
    assert data["overall"] is False
    names = [c["name"] for c in data["conditions"]]
    assert names == ["C1-variogram", "C2-mean-increment", "C3-exponential-level"]
    assert {"t1", "t2", "s"} <= set(data["conditions"][2]["witness"])


def test_nonzero_b_passes_and_modified_fails_iv_only():
    basis, lam = [[1.0, 0.0]], [1.0, 0.0]
    assert check_subspace_system(nonzero_b(), basis, lam).overall
    rep = check_subspace_system(nonzero_b(2.0), basis, lam)
    failed = [c.name for c in rep.conditions if not c.passed]
    assert failed == ["iv-perp-mean"]


def test_subspace_basis_must_be_orthonormal():
    with pytest.raises(ValueError, match="orthonormal"):
        check_subspace_system(nonzero_b(), [[1.0, 1.0]], [1.0, 0.0])


@given(angle=st.floats(0, 6.28), lam=st.lists(real, min_size=2, max_size=2))
def test_full_space_subspace_equals_exp(angle, lam):
    c, s = np.cos(angle), np.sin(angle)
    rot = [[c, -s], [s, c]]
    model = final_example()
    full = check_subspace_system(model, rot, lam)
    exp = check_exp_system(model, lam)
    assert [x.name for x in full.conditions] == [x.name for x in exp.conditions]
    assert_allclose([x.max_residual for x in full.conditions], [x.max_residual for x in exp.conditions], atol=1e-12)


@pytest.mark.parametrize("model", [final_example(), drifted_bm(), Drift(FractionalBM(0.4), hook=[1.0])], ids=["final", "classic", "fbm"])
def test_brown_resnick_positive(model):
    rep = check_brown_resnick(model)
    assert rep.overall
    assert max_residual(rep) < 1e-9


def test_brown_resnick_undrifted_fails_with_half_shift():
    rep = check_brown_resnick(BrownianMotion(), TimeGrid(shifts=(1.0,)))
    assert not rep.overall
    assert_allclose(rep.condition("C3-exponential-level").max_residual, 0.5, atol=1e-10)


def test_mixture_two_lambda_passes():
    atoms = tuple((np.array([1 + u, -u]), 1.0) for u in (0.0, 0.5, 1.0))
    rep = check_mixture_system(two_lambda_model(), FiniteMixture(atoms))
    assert rep.overall
    assert len(rep.subreports) == 3


def test_mixture_single_atom_equals_exp():
    rep = check_mixture_system(drifted_bm(), FiniteMixture(((np.array([1.0]), 2.0),)))
    ref = check_exp_system(drifted_bm(), [1.0])
    assert_allclose([c.max_residual for c in rep.conditions], [c.max_residual for c in ref.conditions])
    assert rep.conditions[0].name == "atom0:C1-variogram"


def test_mixture_bad_atom_fails_on_mean():
    rep = check_mixture_system(drifted_bm(), FiniteMixture(((np.array([0.0]), 1.0), (np.array([1.0]), 1.0))))
    assert not rep.overall
    assert not rep.condition("atom0:C2-mean-increment").passed
    assert rep.subreports[1].overall


def test_two_lambda_projection_examples():
    assert check_two_lambda_projection(two_lambda_model(), [1.0, 0.0], [1.5, -0.5]).overall
    model = Stack((BrownianMotion(), OrnsteinUhlenbeck()))
    assert not check_two_lambda_projection(model, [0.0, 0.0], [1.0, 0.0]).overall
    assert check_two_lambda_projection(model, [0.0, 0.0], [0.0, 1.0]).overall


def test_lt_invariants_examples():
    S = np.array([[1.0, 1.0], [1.0, 2.0]])
    m = np.array([-0.5, -1.0])
    inv = lt_invariants(m, S, np.eye(2), np.zeros(2))
    assert_allclose(inv.quad, S)
    assert_allclose(inv.lin, m)
    assert inv.scal == 0
    inv = lt_invariants(m, S, np.zeros((2, 2)), np.zeros(2))
    assert_allclose(inv.quad, 0)
    inv = lt_invariants(m, S, [[1, -1], [-1, 1]], [1, 0])
    assert_allclose(inv.quad, [[1, -1], [-1, 1]])
    assert_allclose(inv.lin, [0.5, -0.5])
    assert_allclose(inv.scal, 0.0, atol=1e-15)


def test_lt_invariants_rejects_non_projection():
    with pytest.raises(ValueError, match="idempotent"):
        lt_invariants([0, 0], np.eye(2), [[1, 2], [0, 1]], [0, 0])


def test_stationarize_drift_examples():
    model = stationarize_drift(BrownianMotion(), [1.0])
    for t in (-2.0, 0.5, 3.0):
        assert_allclose(model.mean(t), [-abs(t) / 2])
    assert stationarize_drift(BrownianMotion(), [0.0]) == BrownianMotion()
    fbm = stationarize_drift(FractionalBM(0.6), [1.0])
    assert_allclose(fbm.mean(2.0), [-(2.0**1.2) / 2])
    assert check_exp_system(fbm, [1.0]).overall


def test_stationarize_drift_rejects_non_centred():
    with pytest.raises(ModelError, match="centred"):
        stationarize_drift(drifted_bm(), [1.0])


@given(lam=st.lists(real, min_size=2, max_size=2), mix=st.lists(real, min_size=4, max_size=4))
def test_stationarized_increment_models_pass(lam, mix):
    base = Mix(np.reshape(mix, (2, 2)), Stack((BrownianMotion(), FractionalBM(0.7))))
    assert check_exp_system(stationarize_drift(base, lam), lam).overall


@given(lam=st.floats(-3, 3), c=real)
def test_constant_drift_does_not_change_verdict(lam, c):
    plain = check_exp_system(BrownianMotion(), [lam])
    moved = check_exp_system(Drift(BrownianMotion(), [[c, 0, 0, 0]]), [lam])
    assert plain.overall == moved.overall
    assert_allclose([x.max_residual for x in moved.conditions], [x.max_residual for x in plain.conditions], atol=1e-9)


@given(lam=st.floats(-3, 3).filter(lambda x: abs(x) > 0.1))
def test_undrifted_bm_level_residual_scales_with_lambda_squared(lam):
    rep = check_exp_system(BrownianMotion(), [lam], TimeGrid(shifts=(1.0,)))
    assert_allclose(rep.condition("C3-exponential-level").max_residual, lam**2 / 2, rtol=1e-10)


def test_non_gaussian_model_unsupported():
    model = CustomModel(1, lambda t: [0.0], lambda s, t: [[1.0]], is_gaussian=False)
    with pytest.raises(UnsupportedModelError, match="grid convolution"):
        check_exp_system(model, [1.0])


def test_polyexp_constant_reduces_to_exp():
    rep = check_polyexp_system(drifted_bm(), PolyExponential([1.0], {(0,): 1.0}))
    assert rep.overall
    assert [c.name for c in rep.conditions] == ["q[beta=(0,)] (p itself)"]


@pytest.mark.parametrize("s", [0.5, 1.0])
def test_polyexp_negpoly_second_derivative_residual(s):
    grid = TimeGrid(shifts=(s,))
    rep = check_polyexp_system(BrownianMotion(), PolyExponential([0.0], {(3,): 1.0}, signed=True), grid, max_n=1)
    assert not rep.overall
    diag = {c.name: c for c in rep.diagnostics}
    assert_allclose(diag["D^(2,) n=1"].max_residual, s, atol=1e-12)
    assert_allclose(rep.condition("q[beta=(1,)]").max_residual, 3 * s, atol=1e-12)


def test_polyexp_linear_ou_passes():
    assert check_polyexp_system(OrnsteinUhlenbeck(), PolyExponential([0.0], {(1,): 1.0}, signed=True), max_n=2).overall


@given(scale=st.floats(0.01, 100))
def test_polyexp_verdict_scale_invariant(scale):
    grid = TimeGrid((0.0, 1.0), (0.5,))
    a = check_polyexp_system(BrownianMotion(), PolyExponential([0.0], {(3,): 1.0}, signed=True), grid, max_n=1)
    b = check_polyexp_system(BrownianMotion(), PolyExponential([0.0], {(3,): scale}, signed=True), grid, max_n=1)
    assert_allclose([c.max_residual for c in a.conditions], [c.max_residual for c in b.conditions], rtol=1e-9)


def test_polyexp_gaussian_derivative_recursion_matches_finite_difference():
    # D^2 of exp(x^2 |t| / 2) at x = 0 is |t|; check D^4 = 3 t^2 via the residual at shift s
    grid = TimeGrid((1.0,), (1.0,))
    rep = check_polyexp_system(BrownianMotion(), PolyExponential([0.0], {(4,): 1.0}), grid, max_n=1)
    diag = {c.name: c.max_residual for c in rep.diagnostics}
    assert_allclose(diag["D^(4,) n=1"], 3 * 4 - 3 * 1, atol=1e-12)
