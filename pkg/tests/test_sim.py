import numpy as np
import pytest
from scipy.stats import spearmanr

from meshgp.kroncov import FieldTensor
from meshgp.mesh import ellipsoid, geodesic_distances, icosphere, tetrahedron
from meshgp.physics import FHNParams
from meshgp.sim import (
    SimConfig,
    SimulationError,
    Stimulus,
    add_noise,
    apex_vertex,
    fhn_simulate,
    protocol_stimuli,
    relative_error,
    relative_errors,
    stimulus_patch,
    subsample,
)

PAPER_FHN = FHNParams()


@pytest.fixture(scope="module")
def protocol_i_run():
    mesh = icosphere(3, radius=30.0)
    stim = protocol_stimuli(mesh, "I")
    cfg = SimConfig(fhn=PAPER_FHN, dt=0.2, n_steps=1600, stimuli=stim, record_stride=10)
    return mesh, fhn_simulate(mesh, cfg)


class TestFHNSimulate:
    def test_rest_state_stays_exactly_zero(self):
        mesh = tetrahedron()
        cfg = SimConfig(fhn=PAPER_FHN, dt=0.2, n_steps=50,
                        stimuli=(Stimulus(vertices=(0,), onset=1e9),),
                        record_stride=5)
        field = fhn_simulate(mesh, cfg)
        assert np.all(field.values == 0.0)
        assert field.values.shape == (2, 4, 10)

    def test_no_diffusion_stays_local(self):
        mesh = tetrahedron()
        p = FHNParams(e1=0.0, e2=0.0)
        cfg = SimConfig(fhn=p, dt=0.1, n_steps=400,
                        stimuli=(Stimulus(vertices=(0,), amplitude=1.0,
                                          duration=5.0, period=None),),
                        record_stride=10)
        field = fhn_simulate(mesh, cfg)
        assert np.abs(field.values[0, 0]).max() > 0.1  # stimulated vertex fires
        assert np.all(field.values[:, 1:, :] == 0.0)   # the rest never move

    def test_recovery_is_local_without_v_diffusion(self, protocol_i_run):
        # e2 = 0: v only responds to the local u history, so v stays zero
        # exactly until u arrives (activation times from u crossings)
        mesh, field = protocol_i_run
        u, v = field.values
        moved_u = np.abs(u) > 1e-12
        first_u = np.argmax(moved_u, axis=1)
        moved_v = np.abs(v) > 1e-12
        first_v = np.where(moved_v.any(axis=1), np.argmax(moved_v, axis=1),
                           u.shape[1])
        assert np.all(first_v >= first_u)

    def test_propagating_wave_orders_by_geodesic_distance(self, protocol_i_run):
        mesh, field = protocol_i_run
        u = field.values[0]
        crossed = u > 0.5
        assert crossed.any(axis=1).mean() == 1.0
        activation = field.times[np.argmax(crossed, axis=1)]
        dist = geodesic_distances(mesh, apex_vertex(mesh))
        rho = spearmanr(dist, activation).statistic
        assert rho >= 0.9

    def test_time_stamps_and_shapes(self):
        mesh = tetrahedron()
        cfg = SimConfig(fhn=FHNParams(e1=0.0), dt=0.5, n_steps=7,
                        stimuli=(Stimulus(vertices=(0,), period=None),),
                        record_stride=2)
        field = fhn_simulate(mesh, cfg)
        np.testing.assert_allclose(field.times, [1.0, 2.0, 3.0])
        assert field.values.shape == (2, 4, 3)

    def test_unstable_step_rejected_with_index(self):
        mesh = tetrahedron()
        cfg = SimConfig(fhn=FHNParams(e1=0.0), dt=0.5, n_steps=100,
                        stimuli=(Stimulus(vertices=(0,), amplitude=50.0,
                                          duration=100.0, period=None),),
                        record_stride=1)
        with pytest.raises(SimulationError, match="at step 0"):
            fhn_simulate(mesh, cfg)

    def test_field_blowup_detected(self):
        # moderate per-step increments that accumulate past the magnitude guard
        mesh = tetrahedron()
        cfg = SimConfig(fhn=FHNParams(C1=0.0, C2=0.0, b=0.0, e1=0.0),
                        dt=0.5, n_steps=200,
                        stimuli=(Stimulus(vertices=(0,), amplitude=1.9,
                                          duration=1e6, period=None),),
                        record_stride=1)
        with pytest.raises(SimulationError, match="instability"):
            fhn_simulate(mesh, cfg)

    def test_stimulus_vertex_out_of_range(self):
        mesh = tetrahedron()
        cfg = SimConfig(fhn=PAPER_FHN, dt=0.1, n_steps=10,
                        stimuli=(Stimulus(vertices=(9,)),), record_stride=1)
        with pytest.raises(SimulationError, match="out of range"):
            fhn_simulate(mesh, cfg)


class TestAddNoise:
    def test_zero_noise_bitwise_identity(self, rng):
        q = FieldTensor(values=rng.standard_normal((2, 5, 7)))
        y = add_noise(q, 0.0, seed=3)
        assert np.array_equal(y.values, q.values)

    def test_sample_moments(self):
        q = FieldTensor(values=np.zeros((2, 200, 300)))
        y = add_noise(q, 0.02, seed=0)
        sd = np.std(y.values - q.values)
        assert abs(sd - 0.02) / 0.02 <= 0.05

    def test_deterministic(self, rng):
        q = FieldTensor(values=rng.standard_normal((2, 4, 4)))
        a = add_noise(q, 0.1, seed=42)
        b = add_noise(q, 0.1, seed=42)
        assert np.array_equal(a.values, b.values)
        c = add_noise(q, 0.1, seed=43)
        assert not np.array_equal(a.values, c.values)

    def test_negative_sigma_rejected(self, rng):
        q = FieldTensor(values=np.zeros((2, 2, 2)))
        with pytest.raises(SimulationError):
            add_noise(q, -0.1, seed=0)


class TestRelativeError:
    def test_perfect_prediction(self, rng):
        q = rng.standard_normal((2, 3, 4))
        assert relative_error(q, q) == 0.0

    def test_zero_prediction(self, rng):
        q = rng.standard_normal((2, 3, 4))
        assert relative_error(np.zeros_like(q), q) == pytest.approx(1.0)

    def test_hand_computed(self):
        assert relative_error([3.0, 0.0], [3.0, 4.0]) == pytest.approx(0.8)

    def test_zero_reference_rejected(self):
        with pytest.raises(SimulationError, match="zero norm"):
            relative_error([1.0], [0.0])

    def test_per_task_aggregation(self, rng):
        truth = rng.standard_normal((2, 4, 5))
        pred = truth.copy()
        pred[0] = 0.0  # task u fully wrong, task v exact
        res = relative_errors(pred, truth)
        assert res.re_u == pytest.approx(1.0)
        assert res.re_v == 0.0
        assert res.re_total == pytest.approx(0.5)


class TestSubsample:
    def test_identity_round_trip(self, rng):
        q = FieldTensor(values=rng.standard_normal((2, 6, 8)),
                        space_ids=np.arange(6), times=np.arange(8.0))
        ts = subsample(q, 6, time_stride=1, seed=0)
        np.testing.assert_array_equal(ts.Y.values, q.values)
        np.testing.assert_array_equal(ts.X_tr, np.arange(6))

    def test_counts_and_uniqueness(self, rng):
        q = FieldTensor(values=rng.standard_normal((2, 100, 10)),
                        space_ids=np.arange(100), times=np.arange(10.0))
        ts = subsample(q, 50, time_stride=2, seed=1)
        assert len(ts.X_tr) == 50
        assert len(np.unique(ts.X_tr)) == 50
        assert len(ts.T_tr) == 5
        # values correspond to the picked ids
        for row, vid in enumerate(ts.X_tr):
            np.testing.assert_array_equal(ts.Y.values[:, row, :],
                                          q.values[:, vid, ::2])

    def test_deterministic(self, rng):
        q = FieldTensor(values=rng.standard_normal((2, 30, 4)))
        a = subsample(q, 10, 1, seed=9)
        b = subsample(q, 10, 1, seed=9)
        np.testing.assert_array_equal(a.X_tr, b.X_tr)

    def test_too_many_picks(self, rng):
        q = FieldTensor(values=rng.standard_normal((2, 5, 4)))
        with pytest.raises(SimulationError, match="cannot pick"):
            subsample(q, 6, 1, seed=0)

    def test_explicit_picks(self, rng):
        q = FieldTensor(values=rng.standard_normal((2, 10, 4)))
        ts = subsample(q, [7, 2, 5], 1, seed=0)
        np.testing.assert_array_equal(ts.X_tr, [2, 5, 7])


class TestProtocols:
    def test_apex_is_extremal_on_ellipsoid(self):
        mesh = ellipsoid((1.0, 1.0, 3.0), subdivisions=2)
        apex = apex_vertex(mesh)
        z = np.abs(mesh.vertices[:, 2])
        assert z[apex] == pytest.approx(z.max())

    def test_protocol_i_single_source(self):
        mesh = icosphere(2, radius=10.0)
        stim = protocol_stimuli(mesh, "I")
        assert len(stim) == 1
        assert apex_vertex(mesh) in stim[0].vertices

    def test_protocol_ii_adds_delayed_far_source(self):
        mesh = icosphere(2, radius=10.0)
        stim = protocol_stimuli(mesh, "II")
        assert len(stim) == 2
        assert stim[1].onset == pytest.approx(180.0)
        dist = geodesic_distances(mesh, apex_vertex(mesh))
        far = int(np.argmax(dist))
        assert far in stim[1].vertices

    def test_unknown_protocol(self):
        with pytest.raises(SimulationError, match="unknown protocol"):
            protocol_stimuli(icosphere(1), "III")

    def test_patch_contains_center(self):
        mesh = icosphere(2, radius=5.0)
        patch = stimulus_patch(mesh, 17, radius_edges=1.5)
        assert 17 in patch
        assert len(patch) >= 4  # center plus immediate neighbors


class TestStimulus:
    def test_periodic_window(self):
        s = Stimulus(vertices=(0,), onset=10.0, duration=5.0, period=100.0)
        assert not s.active(9.9)
        assert s.active(10.0)
        assert s.active(14.9)
        assert not s.active(15.0)
        assert s.active(110.0)
        assert not s.active(116.0)

    def test_one_shot(self):
        s = Stimulus(vertices=(0,), onset=0.0, duration=5.0, period=None)
        assert s.active(4.9)
        assert not s.active(5.1)
        assert not s.active(400.0)

    def test_round_trip(self):
        s = Stimulus(vertices=(3, 4), amplitude=2.0, onset=1.0, duration=2.0, period=None)
        assert Stimulus.from_dict(s.to_dict()) == s
