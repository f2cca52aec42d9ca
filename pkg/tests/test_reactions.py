import numpy as np
import pytest

from anomalykit.geometry import Inclusion, build_grid
from anomalykit.reactions import (PiecewiseReaction, ReactionError,
                                  TaylorReaction, check_admissibility,
                                  jump_magnitude, parse_multi_index,
                                  taylor_coefficient)


@pytest.fixture
def grid():
    return build_grid(32, 32, (0.0, 1.0, 0.0, 1.0))


@pytest.fixture
def circle():
    return Inclusion.circle((0.5, 0.5), 0.2)


def quadratic_pair(grid, circle, ext=0.5, inn=1.2):
    r0 = TaylorReaction(1, 1, [1.0], order=2)
    r0.set_coefficient(1, "u1u1", ext)
    r1 = TaylorReaction(1, 1, [1.0], order=2)
    r1.set_coefficient(1, "u1u1", inn)
    return PiecewiseReaction(r0, r1, circle, grid)


def test_multi_index_parsing_orders_and_aliases():
    assert parse_multi_index("u1u1", 2, 1) == (2, 0, 0)
    assert parse_multi_index("u1u2", 2, 1) == (1, 1, 0)
    assert parse_multi_index("u2u1", 2, 1) == (1, 1, 0)
    assert parse_multi_index("u1v1", 2, 1) == (1, 0, 1)
    assert parse_multi_index((0, 2, 0), 2, 1) == (0, 2, 0)


def test_multi_index_rejects_unknown_component():
    with pytest.raises(ReactionError):
        parse_multi_index("u3u1", 2, 1)


def test_taylor_evaluation_is_derivative_normalized():
    """Stored values are derivatives: the polynomial carries 1/beta!."""
    r = TaylorReaction(1, 1, [1.0], order=3)
    r.set_coefficient(1, "u1u1", 0.5)
    r.set_coefficient(1, "u1v1", 0.3)
    r.set_coefficient(1, "u1u1u1", 0.25)
    z = 0.4
    w = 0.2
    val = r.evaluate(0.5, 0.5, 0.0, np.array([1.0 + z]), np.array([w]))
    assert val[0] == pytest.approx(0.5 * z**2 / 2 + 0.3 * z * w
                                   + 0.25 * z**3 / 6)


def test_taylor_base_state_is_a_zero():
    """With no constant or linear terms the base (u0, 0) annihilates G."""
    r = TaylorReaction(2, 1, [0.3, 0.1], order=2)
    r.set_coefficient(1, "u1u2", 0.7)
    val = r.evaluate(0.0, 0.0, 0.0, np.array([0.3, 0.1]), np.array([0.0]))
    assert np.all(val == 0.0)


def test_symmetric_spellings_share_storage():
    r = TaylorReaction(2, 1, [0.0, 0.0], order=2)
    r.set_coefficient(1, "u1u2", 0.9)
    assert taylor_coefficient(r, 1, "u2u1").space == pytest.approx(0.9)


def test_order_cap_enforced():
    r = TaylorReaction(1, 1, [0.0], order=2)
    with pytest.raises(ReactionError):
        r.set_coefficient(1, "u1u1u1", 1.0)
    with pytest.raises(ReactionError):
        TaylorReaction(1, 1, [0.0], order=7)


def test_piecewise_branch_selection(grid, circle):
    re = quadratic_pair(grid, circle)
    field = re.coefficient_field(0, (2, 0))
    X, Y = grid.nodes()
    inside = circle.signed_distance(X, Y) <= 0
    assert np.all(field[inside] == 1.2)
    assert np.all(field[~inside] == 0.5)


def test_evaluate_fields_piecewise_values(grid, circle):
    re = quadratic_pair(grid, circle)
    u = np.full((1, 32, 32), 1.5)
    v = np.zeros((1, 32, 32))
    G = re.evaluate_fields(0.0, u, v)
    X, Y = grid.nodes()
    inside = circle.signed_distance(X, Y) <= 0
    assert G[0][inside] == pytest.approx(1.2 * 0.25 / 2)
    assert G[0][~inside] == pytest.approx(0.5 * 0.25 / 2)


def test_variation_source_is_the_hessian_form(grid, circle):
    re = quadratic_pair(grid, circle)
    z = np.concatenate([np.full((1, 32, 32), 0.3), np.full((1, 32, 32), 0.7)])
    q = re.variation_source(0.0, z, order=2)
    X, Y = grid.nodes()
    inside = circle.signed_distance(X, Y) <= 0
    assert q[0][inside] == pytest.approx(1.2 * 0.09)
    assert q[0][~inside] == pytest.approx(0.5 * 0.09)


def test_variation_source_mixed_term_doubles(grid, circle):
    r0 = TaylorReaction(2, 1, [0.0, 0.0], order=2)
    r0.set_coefficient(1, "u1u2", 0.8)
    re = PiecewiseReaction(r0, r0, circle, grid)
    z = np.stack([np.full((32, 32), 0.3), np.full((32, 32), 0.5),
                  np.zeros((32, 32))])
    q = re.variation_source(0.0, z, order=2)
    assert q[0] == pytest.approx(2 * 0.8 * 0.3 * 0.5)


def test_variation_source_third_order(grid, circle):
    r0 = TaylorReaction(1, 1, [1.0], order=3)
    r0.set_coefficient(1, "u1u1u1", 0.6)
    re = PiecewiseReaction(r0, r0, circle, grid)
    z1 = np.concatenate([np.full((1, 32, 32), 0.5), np.zeros((1, 32, 32))])
    q3 = re.variation_source(0.0, z1, np.zeros_like(z1), order=3)
    # the cubic coefficient is a third derivative, so the form gives c z^3
    assert q3[0] == pytest.approx(0.6 * 0.125)
    with pytest.raises(ReactionError):
        re.variation_source(0.0, z1, None, order=3)


def test_jump_magnitude_on_interface(grid, circle):
    re = quadratic_pair(grid, circle)
    assert jump_magnitude(re, (0.7, 0.5), 1, "u1u1") == pytest.approx(0.7)
    with pytest.raises(ReactionError):
        jump_magnitude(re, (0.95, 0.95), 1, "u1u1")


def test_admissibility_clauses(grid, circle):
    rep = check_admissibility(quadratic_pair(grid, circle))
    assert rep.admissible
    assert rep.vanishes_at_base and rep.interface_jump_present
    # identical branches break only the jump clause
    rep2 = check_admissibility(quadratic_pair(grid, circle, ext=0.5, inn=0.5))
    assert not rep2.admissible
    assert not rep2.interface_jump_present


def test_spatial_coefficient_expression(grid, circle):
    r0 = TaylorReaction(1, 1, [1.0], order=2)
    r0.set_coefficient(1, "u1u1", "1 + x1")
    re = PiecewiseReaction(r0, r0, circle, grid)
    field = re.coefficient_field(0, (2, 0))
    X, _ = grid.nodes()
    assert field == pytest.approx(1.0 + X)


def test_time_profile_interpolates_between_knots():
    r = TaylorReaction(1, 1, [0.0], order=2)
    r.set_coefficient(1, "u1u1", 2.0, profile=[[0.0, 1.0], [1.0, 3.0]])
    c = r.coefficient(1, "u1u1")
    assert c.at(0.0, 0.0, 0.5) == pytest.approx(2.0 * 2.0)


def test_mismatched_base_states_rejected(grid, circle):
    r0 = TaylorReaction(1, 1, [1.0], order=2)
    r1 = TaylorReaction(1, 1, [2.0], order=2)
    with pytest.raises(ReactionError):
        PiecewiseReaction(r0, r1, circle, grid)
