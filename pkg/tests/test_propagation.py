import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ntnric.netmodel import CellConfig, EnergyModel, UeConfig, TrafficProfile
from ntnric.propagation import (
    CellOffError, CoverageGrid, LinkGeometry, Position3D, PropagationDomainError,
    RadioEnvironment, Terrain, breakpoint_distance_m, coverage_grid, fspl_db, los_check,
    n_subcarriers, noise_floor_dbm, pathloss_db, rma_los_pathloss_db, rma_nlos_pathloss_db,
    rsrp_dbm, shadowing_db, snr_db,
)

# Frozen from a 40-digit mpmath evaluation of the closed-form expressions.
FSPL_100M_2650 = 80.91270070061953
DBP_60_15_2650 = 4998.590377354761
RMA_LOS_1000_35_2650 = 103.0432027223677
RMA_NLOS_1000_35_2650 = 132.28248860633207
PAYLOAD_RSRP_DBM = -109.97246644078704
NOISE_20MHZ_NF7 = -93.98970004336019

ENV = RadioEnvironment()


def payload_cell(**kw):
    base = dict(id=1, position=Position3D(0.0, 0.0, 60.0), tx_power_dbm=-2.0, fc_mhz=2650.0,
                bandwidth_mhz=10.0, role="capacity", antenna_gain_dbi=2.0, switchable=True,
                energy=EnergyModel(50.0, 15.0, 5.0))
    base.update(kw)
    return CellConfig(**base)


def ue_at(x, y=0.0, z=1.5, nf=7.0):
    profile = TrafficProfile(0, 1, (1.0,) + (0.0,) * 23)
    return UeConfig(0, Position3D(x, y, z), nf, -125.0, profile)


class TestFspl:
    def test_unit_argument_is_zero_db(self):
        f_mhz = 2650.0
        d = 299_792_458.0 / (4 * math.pi * f_mhz * 1e6)
        assert fspl_db(d, f_mhz) == pytest.approx(0.0, abs=1e-12)

    def test_reference_value(self):
        assert fspl_db(100.0, 2650.0) == pytest.approx(FSPL_100M_2650, abs=1e-9)

    def test_distance_doubling(self):
        assert fspl_db(200.0, 2650.0) - fspl_db(100.0, 2650.0) == pytest.approx(20 * math.log10(2), abs=1e-12)

    @pytest.mark.parametrize("d,f", [(0.0, 2650.0), (-1.0, 2650.0), (10.0, 0.0)])
    def test_domain(self, d, f):
        with pytest.raises(PropagationDomainError):
            fspl_db(d, f)


class TestBreakpoint:
    def test_reference_value(self):
        g = LinkGeometry.from_heights(100.0, 60.0, 1.5, 2650.0)
        assert breakpoint_distance_m(g) == pytest.approx(DBP_60_15_2650, rel=1e-12)

    def test_coverage_cell_breakpoint_beyond_arena(self):
        g = LinkGeometry.from_heights(100.0, 1000.0, 1.5, 3300.0)
        assert breakpoint_distance_m(g) > 10_000.0


class TestRma:
    geom = LinkGeometry.from_heights(1000.0, 35.0, 1.5, 2650.0)

    def test_los_reference(self):
        pl, sigma = rma_los_pathloss_db(self.geom, ENV)
        assert pl == pytest.approx(RMA_LOS_1000_35_2650, abs=1e-9)
        assert sigma == 4.0

    def test_nlos_reference(self):
        pl, sigma = rma_nlos_pathloss_db(self.geom, ENV)
        assert pl == pytest.approx(RMA_NLOS_1000_35_2650, abs=1e-9)
        assert sigma == 8.0

    def test_los_sigma_beyond_breakpoint(self):
        g = LinkGeometry.from_heights(6000.0, 35.0, 1.5, 2650.0)
        assert rma_los_pathloss_db(g, ENV)[1] == 6.0

    def test_continuity_at_breakpoint(self):
        g = LinkGeometry.from_heights(1000.0, 35.0, 1.5, 2650.0)
        dbp = breakpoint_distance_m(g)
        d2d = math.sqrt(dbp ** 2 - (35.0 - 1.5) ** 2)
        below = rma_los_pathloss_db(g.with_d2d(np.nextafter(d2d, 0)), ENV)[0]
        above = rma_los_pathloss_db(g.with_d2d(np.nextafter(d2d, np.inf)), ENV)[0]
        assert abs(above - below) <= 1e-9

    def test_short_distance_clamps_with_warning(self):
        g = LinkGeometry.from_heights(2.0, 35.0, 1.5, 2650.0)
        with pytest.warns(RuntimeWarning):
            pl = rma_los_pathloss_db(g, ENV)[0]
        assert pl == pytest.approx(float(oracles.rma_los(10.0, 35.0, 1.5, 2650e6)), abs=1e-9)

    def test_short_distance_strict_raises(self):
        g = LinkGeometry.from_heights(2.0, 35.0, 1.5, 2650.0)
        with pytest.raises(PropagationDomainError):
            rma_los_pathloss_db(g, RadioEnvironment(strict_range=True))

    def test_long_distance_strict_raises_lenient_extrapolates(self):
        g = LinkGeometry.from_heights(12_000.0, 35.0, 1.5, 2650.0)
        with pytest.raises(PropagationDomainError):
            rma_nlos_pathloss_db(g, RadioEnvironment(strict_range=True))
        assert math.isfinite(rma_nlos_pathloss_db(g, ENV)[0])

    def test_inconsistent_geometry_rejected(self):
        with pytest.raises(PropagationDomainError):
            LinkGeometry(100.0, 100.0, 35.0, 1.5, 2650.0)

    def test_fspl_mode_dispatch(self):
        env = RadioEnvironment(pathloss_model="fspl")
        g = LinkGeometry.from_heights(100.0, 60.0, 1.5, 2650.0)
        assert pathloss_db(g, env, los=True)[0] == pytest.approx(fspl_db(g.d3d_m, 2650.0), abs=1e-12)
        assert pathloss_db(g, env, los=False)[0] >= pathloss_db(g, env, los=True)[0]


draws = st.tuples(
    st.floats(10.0, 10_000.0), st.floats(10.0, 150.0), st.floats(1.0, 10.0),
    st.floats(500.0, 30_000.0), st.floats(5.0, 50.0), st.floats(5.0, 50.0),
)


@settings(max_examples=200, deadline=None)
@given(draws)
def test_pathloss_matches_oracle(p):
    d2d, hbs, hut, fc, h, w = p
    env = RadioEnvironment(building_height_m=h, street_width_m=w)
    g = LinkGeometry.from_heights(d2d, hbs, hut, fc)
    assert rma_los_pathloss_db(g, env)[0] == pytest.approx(float(oracles.rma_los(d2d, hbs, hut, fc * 1e6, h)), abs=1e-9)
    assert rma_nlos_pathloss_db(g, env)[0] == pytest.approx(
        float(oracles.rma_nlos(d2d, hbs, hut, fc * 1e6, h, w)), abs=1e-9)
    assert fspl_db(g.d3d_m, fc) == pytest.approx(float(oracles.fspl(g.d3d_m, fc * 1e6)), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(draws)
def test_nlos_never_below_los(p):
    d2d, hbs, hut, fc, h, w = p
    env = RadioEnvironment(building_height_m=h, street_width_m=w)
    g = LinkGeometry.from_heights(d2d, hbs, hut, fc)
    assert rma_nlos_pathloss_db(g, env)[0] >= rma_los_pathloss_db(g, env)[0]


class TestLinkBudget:
    env = RadioEnvironment(pathloss_model="fspl")

    def test_payload_rsrp_reference(self):
        assert n_subcarriers(10.0) == 600
        got = rsrp_dbm(payload_cell(), Position3D(100.0, 0.0, 1.5), self.env, los=True)
        assert got == pytest.approx(PAYLOAD_RSRP_DBM, abs=1e-9)

    def test_payload_rsrp_hand_budget(self):
        d3d = math.hypot(100.0, 58.5)
        hand = -2.0 - 10 * math.log10(600) + 2.0 - float(oracles.fspl(d3d, 2650e6))
        got = rsrp_dbm(payload_cell(), Position3D(100.0, 0.0, 1.5), self.env, los=True)
        assert got == pytest.approx(hand, abs=1e-9)

    def test_off_cell_raises(self):
        with pytest.raises(CellOffError):
            rsrp_dbm(payload_cell(), Position3D(100.0, 0.0, 1.5), self.env, on=False)

    @given(st.floats(-30.0, 50.0), st.floats(-30.0, 30.0))
    def test_linear_in_tx_power(self, p, dx):
        rx = Position3D(300.0, 40.0, 1.5)
        a = rsrp_dbm(payload_cell(tx_power_dbm=p), rx, ENV)
        b = rsrp_dbm(payload_cell(tx_power_dbm=p + dx), rx, ENV)
        assert b - a == pytest.approx(dx, abs=1e-9)

    def test_noise_floor_reference(self):
        assert noise_floor_dbm(20e6, 7.0) == pytest.approx(NOISE_20MHZ_NF7, abs=1e-9)

    def test_bandwidth_doubling_costs_3db(self):
        ue = ue_at(300.0)
        a = snr_db(payload_cell(bandwidth_mhz=10.0), ue, ENV)
        b = snr_db(payload_cell(bandwidth_mhz=20.0), ue, ENV)
        assert a - b == pytest.approx(10 * math.log10(2), abs=1e-9)

    def test_snr_zero_when_rx_equals_noise(self):
        ue = ue_at(300.0)
        cell = payload_cell()
        s = snr_db(cell, ue, ENV)
        shifted = snr_db(payload_cell(tx_power_dbm=cell.tx_power_dbm - s), ue, ENV)
        assert shifted == pytest.approx(0.0, abs=1e-9)

    def test_extra_shadowing_subtracts(self):
        rx = Position3D(300.0, 0.0, 1.5)
        a = rsrp_dbm(payload_cell(), rx, ENV)
        b = rsrp_dbm(payload_cell(), rx, RadioEnvironment(extra_shadowing_db=6.0))
        assert a - b == pytest.approx(6.0, abs=1e-12)

    def test_lognormal_shadowing_is_deterministic(self):
        env = RadioEnvironment(shadowing_mode="lognormal", rng_seed=11)
        rx = Position3D(300.0, 0.0, 1.5)
        a = shadowing_db(payload_cell(), rx, env, 8.0)
        b = shadowing_db(payload_cell(), rx, env, 8.0)
        c = shadowing_db(payload_cell(), rx, RadioEnvironment(shadowing_mode="lognormal", rng_seed=12), 8.0)
        assert a == b and a != c


class TestLos:
    def flat(self, n=10, cs=10.0):
        return Terrain(0.0, 0.0, cs, np.zeros((n, n)))

    def test_no_terrain_is_los(self):
        assert los_check(None, Position3D(0, 0, 1), Position3D(5, 5, 1))

    def test_flat_terrain_is_los(self):
        assert los_check(self.flat(), Position3D(1, 1, 0.5), Position3D(95, 80, 2))

    def test_wall_blocks(self):
        elev = np.zeros((10, 10))
        elev[:, 5] = 50.0
        t = Terrain(0.0, 0.0, 10.0, elev)
        assert not los_check(t, Position3D(5, 45, 10), Position3D(95, 45, 20))

    def test_raised_transmitter_clears_ridge(self):
        elev = np.zeros((20, 20))
        elev[:, 10] = 30.0
        t = Terrain(0.0, 0.0, 10.0, elev)
        a, b = Position3D(5, 55, 200.0), Position3D(195, 55, 1.5)
        assert los_check(t, a, b)
        assert oracles.los_bruteforce(t.elevation, (0, 0), 10.0, (a.x, a.y, a.z), (b.x, b.y, b.z), 1.0)

    def test_outside_raster_raises(self):
        with pytest.raises(PropagationDomainError):
            los_check(self.flat(), Position3D(-1, 0, 1), Position3D(5, 5, 1))

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.0, 99.9), st.floats(0.0, 99.9), st.floats(0.0, 99.9),
           st.floats(0.0, 99.9), st.floats(0.0, 60.0), st.floats(0.0, 60.0))
    def test_matches_dense_sampling(self, seed, x0, y0, x1, y1, z0, z1):
        rng = np.random.default_rng(seed)
        elev = rng.uniform(0.0, 40.0, size=(10, 10))
        t = Terrain(0.0, 0.0, 10.0, elev)
        a, b = Position3D(x0, y0, z0), Position3D(x1, y1, z1)
        exact = los_check(t, a, b)
        sampled = oracles.los_bruteforce(elev, (0.0, 0.0), 10.0, (x0, y0, z0), (x1, y1, z1), 0.01)
        # Sampling can miss a blocking corner clip but never invents one.
        if not sampled:
            assert not exact
        if exact:
            assert sampled


class TestTerrainCsv:
    def test_roundtrip_and_orientation(self):
        text = "origin_x,origin_y,cell_size_m,ncols,nrows\n0,0,10,3,2\n1,2,3\n4,5,6\n"
        t = Terrain.from_csv_text(text)
        assert t.height_at(0.5, 0.5) == 1.0
        assert t.height_at(25.0, 15.0) == 6.0

    def test_shape_mismatch(self):
        with pytest.raises(PropagationDomainError):
            Terrain.from_csv_text("origin_x,origin_y,cell_size_m,ncols,nrows\n0,0,10,3,3\n1,2,3\n")


class TestCoverageGrid:
    def test_grid_shape_and_values(self):
        cell = payload_cell()
        grid = coverage_grid(cell, ENV, (-200.0, -200.0, 200.0, 200.0), 100.0)
        assert (grid.width, grid.height) == (5, 5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            expect = rsrp_dbm(cell, Position3D(100.0, -200.0, 1.5), ENV)
        assert grid.values[0, 3] == expect

    def test_csv_deterministic(self, tmp_path):
        cell = payload_cell()
        a = coverage_grid(cell, ENV, (0.0, 0.0, 300.0, 200.0), 50.0).to_csv_text()
        b = coverage_grid(cell, ENV, (0.0, 0.0, 300.0, 200.0), 50.0).to_csv_text()
        assert a == b
        assert a.splitlines()[0] == "x_m,y_m,rsrp_dbm"
        assert len(a.splitlines()) == 1 + 7 * 5

    @pytest.mark.parametrize("bbox,res", [((0, 0, 10, 10), 0.0), ((10, 0, 0, 10), 1.0)])
    def test_invalid(self, bbox, res):
        with pytest.raises(PropagationDomainError):
            coverage_grid(payload_cell(), ENV, bbox, res)

    def test_dimension_check(self):
        with pytest.raises(PropagationDomainError):
            CoverageGrid(Position3D(0, 0), 1.0, 0, 3, np.zeros(0))
