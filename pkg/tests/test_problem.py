import json

import numpy as np
import pytest

from slq.errors import (
    DimensionError,
    NonSymmetricWeight,
    ParseError,
    UnsupportedStochasticData,
)
from slq.problem import (
    DEFAULT_STEPS_PER_UNIT_TIME,
    MatrixPath,
    TimeGrid,
    from_dict,
    loads,
    standard_conditions,
)

from conftest import scalar_tanh, twin_control


def minimal_doc(**extra):
    doc = {
        "horizon": {"t0": 0.0, "T": 1.0, "n_steps": 10},
        "dims": {"n": 1, "m": 1},
        "coefficients": {
            "A": [[0.0]], "B": [[1.0]], "C": [[0.0]], "D": [[0.0]],
        },
        "weights": {"G": [[0.0]], "Q": [[1.0]], "R": [[1.0]]},
    }
    doc.update(extra)
    return doc


class TestTimeGrid:
    def test_basic_layout(self):
        grid = TimeGrid(0.0, 2.0, 4)
        assert grid.h == 0.5
        assert np.allclose(grid.times(), [0.0, 0.5, 1.0, 1.5, 2.0])
        assert len(grid.half_times()) == 9
        assert grid.half_times()[1] == 0.25

    def test_refined(self):
        grid = TimeGrid(0.0, 1.0, 5).refined(3)
        assert grid.n_steps == 15
        with pytest.raises(ValueError):
            TimeGrid(0.0, 1.0, 5).refined(0)

    def test_nearest_node(self):
        grid = TimeGrid(0.0, 1.0, 10)
        assert grid.nearest_node(0.0) == 0
        assert grid.nearest_node(0.34) == 3
        assert grid.nearest_node(1.0) == 10
        with pytest.raises(ValueError):
            grid.nearest_node(1.5)

    @pytest.mark.parametrize("t0,T,steps", [(1.0, 1.0, 5), (2.0, 1.0, 5), (0.0, 1.0, 1)])
    def test_rejects_degenerate(self, t0, T, steps):
        with pytest.raises(ParseError):
            TimeGrid(t0, T, steps)


class TestMatrixPath:
    def test_const_eval(self):
        path = MatrixPath.const([[1.0, 2.0]])
        t = np.array([0.0, 0.5])
        assert path.sample(t).shape == (2, 1, 2)
        assert np.all(path.sample(t)[1] == [[1.0, 2.0]])

    def test_poly_eval(self):
        # entry polynomials in ascending order: 1 + 2s and s^2
        path = MatrixPath.poly([[[1.0, 2.0], [0.0, 0.0, 1.0]]])
        got = path.sample(np.array([0.0, 2.0]))
        assert np.allclose(got[0], [[1.0, 0.0]])
        assert np.allclose(got[1], [[5.0, 4.0]])

    def test_sampled_interpolates_and_clamps(self):
        path = MatrixPath.sampled([0.0, 1.0], [[[0.0]], [[2.0]]])
        got = path.sample(np.array([-1.0, 0.25, 2.0]))
        assert np.allclose(got.ravel(), [0.0, 0.5, 2.0])

    def test_sampled_rejects_unsorted_times(self):
        with pytest.raises(ParseError):
            MatrixPath.sampled([0.0, 0.0], [[[1.0]], [[2.0]]])

    def test_symmetric_enforcement(self):
        with pytest.raises(NonSymmetricWeight):
            MatrixPath.const([[0.0, 1.0], [0.0, 0.0]], symmetric=True)
        with pytest.raises(DimensionError):
            MatrixPath.const([[1.0, 0.0]], symmetric=True)

    def test_symmetric_eval_symmetrizes_roundoff(self):
        m = np.array([[1.0, 2.0], [2.0 + 1e-12, 1.0]])
        path = MatrixPath.const(m, symmetric=True)
        got = path.sample(np.array([0.0]))[0]
        assert np.array_equal(got, got.T)

    def test_zeros_is_zero(self):
        assert MatrixPath.zeros(2, 3).is_zero()
        assert not MatrixPath.const([[0.0, 1e-30]]).is_zero()


class TestFromDict:
    def test_minimal_roundtrip(self):
        p = from_dict(minimal_doc())
        assert (p.n, p.m) == (1, 1)
        assert p.grid.n_steps == 10
        assert p.b.is_zero() and p.sigma.is_zero()
        again = from_dict(p.to_json())
        assert again.grid.n_steps == 10
        assert np.array_equal(again.G, p.G)

    def test_default_step_density(self):
        doc = minimal_doc(horizon={"t0": 0.0, "T": 2.0})
        p = from_dict(doc)
        assert p.grid.n_steps == 2 * DEFAULT_STEPS_PER_UNIT_TIME

    def test_override_wins(self):
        p = from_dict(minimal_doc(), n_steps_override=77)
        assert p.grid.n_steps == 77

    def test_rejects_random_coefficients(self):
        with pytest.raises(UnsupportedStochasticData):
            from_dict(minimal_doc(stochastic=True))

    def test_rejects_missing_sections(self):
        doc = minimal_doc()
        del doc["weights"]
        with pytest.raises(ParseError):
            from_dict(doc)

    def test_rejects_wrong_shape(self):
        doc = minimal_doc()
        doc["coefficients"]["B"] = [[1.0, 2.0]]
        with pytest.raises(DimensionError):
            from_dict(doc)

    def test_rejects_time_varying_terminal_weight(self):
        doc = minimal_doc()
        doc["weights"]["G"] = {"poly": [[[0.0, 1.0]]]}
        with pytest.raises(ParseError):
            from_dict(doc)

    def test_loads_json_text(self):
        p = loads(json.dumps(minimal_doc()))
        assert p.grid.T == 1.0


def test_standard_conditions_well_posed():
    rep = standard_conditions(scalar_tanh(50))
    assert rep.holds
    assert rep.G_psd
    assert rep.R_uniform_delta == pytest.approx(1.0)
    assert rep.schur_complement_psd


def test_standard_conditions_degenerate_weight():
    rep = standard_conditions(twin_control(50))
    # R = 0: G is fine but the uniform positivity margin is gone
    assert rep.G_psd
    assert rep.R_uniform_delta == 0.0
    assert not rep.holds


def test_homogeneous_part_strips_affine_data():
    import dataclasses

    withdrift = dataclasses.replace(
        scalar_tanh(50), b=MatrixPath.const([[0.3]]), g=np.array([[1.0]])
    )
    hom = withdrift.homogeneous_part()
    assert hom.b.is_zero()
    assert np.all(hom.g == 0)
    assert not withdrift.b.is_zero()
