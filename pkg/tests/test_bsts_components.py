import numpy as np
import pytest

from glycast.bsts import (
    ParamPoint,
    SpikeSlabSettings,
    TrendPriors,
    VariancePrior,
    assemble_model,
    circadian_seasonal,
    day_seasonal,
    meal_seasonal,
    regression,
    seasonal,
    semi_local_trend,
)
from glycast.errors import RangeError, SchemaError


def series(n=300, seed=0):
    rng = np.random.default_rng(seed)
    return 140 + np.cumsum(rng.normal(0, 1.5, n))


class TestAssembly:
    def test_day_component_dimensions(self):
        model = assemble_model([semi_local_trend(), day_seasonal()], series())
        assert model.state_dim == 2 + 3
        assert model.seasonals[0].cycle == 96

    def test_meal_component_cycle(self):
        model = assemble_model([semi_local_trend(), meal_seasonal()], series())
        assert model.seasonals[0].cycle == 96
        assert model.seasonals[0].state_dim == 2

    def test_circadian_component_asymmetric(self):
        model = assemble_model([semi_local_trend(), circadian_seasonal()], series())
        layout = model.seasonals[0]
        assert layout.durations == (48, 24)
        assert layout.cycle == 72
        assert layout.state_dim == 1
        alt = assemble_model([semi_local_trend(), circadian_seasonal((64, 32))], series())
        assert alt.seasonals[0].cycle == 96

    def test_full_stack_state_dim(self):
        model = assemble_model(
            [semi_local_trend(), day_seasonal(), meal_seasonal(), circadian_seasonal()], series()
        )
        assert model.state_dim == 2 + 3 + 2 + 1
        assert model.period == np.lcm(96, 72)

    def test_duration_schedule_validation(self):
        with pytest.raises(SchemaError, match="durations"):
            assemble_model([semi_local_trend(), seasonal("s", 3, (24, 24))], series())
        with pytest.raises(SchemaError, match=">= 1"):
            assemble_model([semi_local_trend(), seasonal("s", 2, (24, 0))], series())
        with pytest.raises(SchemaError, match="n_seasons"):
            assemble_model([semi_local_trend(), seasonal("s", 1, (24,))], series())

    def test_design_shape_validation(self):
        y = series(100)
        x = np.ones((100, 2))
        model = assemble_model(
            [semi_local_trend(), regression(("c1", "c2"))], y, x
        )
        assert model.n_regressors == 2
        with pytest.raises(SchemaError):
            assemble_model([semi_local_trend(), regression(("c1",))], y, np.ones((50, 1)))
        with pytest.raises(SchemaError):
            assemble_model([semi_local_trend(), regression(("c1", "c2"))], y)
        with pytest.raises(SchemaError):
            assemble_model([semi_local_trend()], y, x)

    def test_trend_required_and_unique(self):
        with pytest.raises(SchemaError):
            assemble_model([day_seasonal()], series())
        with pytest.raises(SchemaError):
            assemble_model([semi_local_trend(), semi_local_trend()], series())

    def test_phase_shifts_boundaries(self):
        y = series(200)
        base = assemble_model([semi_local_trend(), seasonal("s", 4, (24,) * 4)], y)
        shifted = assemble_model([semi_local_trend(), seasonal("s", 4, (24,) * 4, phase=23)], y)
        assert base.boundary_mask(23) == (True,)
        assert shifted.boundary_mask(0) == (True,)
        assert shifted.boundary_mask(1) == (False,)

    def test_prior_validation(self):
        with pytest.raises(RangeError):
            VariancePrior(df=0.0, guess=1.0)
        with pytest.raises(RangeError):
            TrendPriors(
                level_var=VariancePrior(1, 1), slope_var=VariancePrior(1, 1), d_mean=0, d_sd=0
            )
        with pytest.raises(RangeError):
            SpikeSlabSettings(expected_model_size=0)


class TestSeasonalRecursion:
    def test_dummy_seasonal_sign_convention(self):
        # S=4, duration 1: next effect is minus the sum of the stored three.
        y = series(50)
        model = assemble_model([semi_local_trend(), seasonal("s", 4, (1, 1, 1, 1))], y)
        T = model.transition_matrix(0.0, t=0)
        state = np.array([0.0, 0.0, 1.0, -1.0, 2.0])
        nxt = T @ state
        assert nxt[2] == pytest.approx(-(1.0 - 1.0 + 2.0))
        assert nxt[3] == pytest.approx(1.0)  # previous effect shifts down
        assert nxt[4] == pytest.approx(-1.0)

    def test_within_season_state_frozen(self):
        y = series(50)
        model = assemble_model([semi_local_trend(), seasonal("s", 3, (4, 4, 4))], y)
        T = model.transition_matrix(0.5, t=0)  # t=0 -> t=1 stays inside season 0
        state = np.array([0.0, 0.0, 3.0, -1.5])
        nxt = T @ state
        np.testing.assert_allclose(nxt[2:], state[2:])

    def test_noise_only_at_boundaries(self):
        y = series(50)
        model = assemble_model([semi_local_trend(), seasonal("s", 3, (4, 4, 4))], y)
        q_inside = model.noise_diag(0.1, 0.2, [0.5], t=0)
        q_boundary = model.noise_diag(0.1, 0.2, [0.5], t=3)
        assert q_inside[2] == 0.0
        assert q_boundary[2] == 0.5
        np.testing.assert_allclose(q_inside[:2], [0.1, 0.2])


class TestParamPoint:
    def test_validation(self):
        with pytest.raises(RangeError):
            ParamPoint(-0.1, 0.1, 0.1)
        with pytest.raises(RangeError):
            ParamPoint(0.1, 0.1, 0.1, phi=1.5)
        point = ParamPoint(0.1, 0.1, 0.1, phi=1.0)  # boundary allowed
        assert point.phi == 1.0


class TestSpecsFromJson:
    def test_standard_stack_document(self):
        from glycast.bsts import specs_from_json

        payload = {
            "components": [
                {"kind": "semi_local_trend"},
                {"kind": "seasonal", "name": "day", "n_seasons": 4, "durations": [24, 24, 24, 24]},
                {"kind": "seasonal", "name": "circadian", "n_seasons": 2, "durations": [48, 24],
                 "phase": 12, "var_prior": {"df": 2.0, "guess": 0.5}},
                {"kind": "regression", "columns": ["sim_a", "sim_b"],
                 "spike_slab": {"expected_model_size": 1.5}},
            ]
        }
        specs = specs_from_json(payload)
        assert [s.kind for s in specs] == ["semi_local_trend", "seasonal", "seasonal", "regression"]
        assert specs[1].durations == (24, 24, 24, 24)
        assert specs[2].phase == 12
        assert specs[2].var_prior.guess == 0.5
        assert specs[3].columns == ("sim_a", "sim_b")
        assert specs[3].spike_slab.expected_model_size == 1.5
        model = assemble_model(
            specs, series(300), np.zeros((300, 2))
        )
        assert model.state_dim == 2 + 3 + 1

    def test_trend_priors_document(self):
        from glycast.bsts import specs_from_json

        payload = {
            "components": [
                {
                    "kind": "semi_local_trend",
                    "priors": {
                        "level": {"df": 1.0, "guess": 0.01},
                        "slope": {"df": 1.0, "guess": 0.001},
                        "d_mean": 0.2,
                        "d_sd": 0.5,
                        "phi_sd": 0.3,
                    },
                }
            ]
        }
        (spec,) = specs_from_json(payload)
        assert spec.trend_priors.d_mean == 0.2
        assert spec.trend_priors.phi_sd == 0.3
        model = assemble_model([spec], series(50))
        assert model.trend_priors.d_mean == 0.2

    def test_invalid_documents(self):
        from glycast.bsts import specs_from_json

        with pytest.raises(SchemaError):
            specs_from_json({})
        with pytest.raises(SchemaError, match="unknown kind"):
            specs_from_json({"components": [{"kind": "wavelet"}]})
