import numpy as np
import pytest
from pydantic import ValidationError

from src.app.core.config import SceneConfig
from src.app.core.errors import InputError
from src.data.scene import (
    SensorSet,
    colormap_rgb,
    face_velocities,
    normalize,
    observation_field,
    sample_sensors,
    simulate,
    to_channels,
)


def _divergence(ux, uy):
    return (ux[:, 1:] - ux[:, :-1]) + (uy[1:, :] - uy[:-1, :])


class TestSimulation:
    def test_frozen_dynamics(self, still_room):
        snapshots = simulate(still_room)
        assert snapshots.shape == (5, 6, 7)
        for snap in snapshots:
            np.testing.assert_array_equal(snap, snapshots[0])

    def test_pure_diffusion_matches_heat_kernel(self):
        sigma, d, steps = 8.0, 0.1, 6
        config = SceneConfig(
            grid_rows=81, grid_cols=81, diffusivity=d,
            velocity={"kind": "uniform"}, windows=[],
            initial_ppm=1.0, ambient_ppm=0.0, initial_kind="gaussian",
            bump={"row": 40.0, "col": 40.0, "sigma": sigma},
            steps=steps, substeps=1,
        )
        snapshots = simulate(config)
        r2 = (np.arange(81)[:, None] - 40.0) ** 2 + (np.arange(81)[None, :] - 40.0) ** 2
        for t in range(steps):
            spread = sigma ** 2 + 2.0 * d * t
            exact = (sigma ** 2 / spread) * np.exp(-r2 / (2.0 * spread))
            assert np.max(np.abs(snapshots[t] - exact)) < 1e-3

    def test_vortex_is_divergence_free_with_closed_walls(self):
        ux, uy = face_velocities(SceneConfig())
        np.testing.assert_allclose(_divergence(ux, uy), 0.0, atol=1e-14)
        assert not ux[:, 0].any() and not ux[:, -1].any()
        assert not uy[0, :].any() and not uy[-1, :].any()
        assert max(np.abs(ux).max(), np.abs(uy).max()) == pytest.approx(0.2)

    def test_mean_never_increases_and_range_holds(self):
        config = SceneConfig(grid_rows=20, grid_cols=26, steps=40,
                             windows=[{"side": "top", "start": 3, "stop": 9}, {"side": "left", "start": 5, "stop": 12}])
        snapshots = simulate(config)
        means = snapshots.mean(axis=(1, 2))
        assert np.all(means[1:] <= means[:-1] + 1e-12)
        assert means[-1] < means[0]
        assert snapshots.min() >= config.ambient_ppm - 1e-9
        assert snapshots.max() <= config.initial_ppm + 1e-9

    def test_mean_is_conserved_without_windows(self):
        snapshots = simulate(SceneConfig(grid_rows=20, grid_cols=26, steps=30, windows=[]))
        means = snapshots.mean(axis=(1, 2))
        assert np.max(np.abs(np.diff(means))) < 1e-10

    def test_unstable_diffusion_is_rejected(self):
        with pytest.raises(ValidationError, match="unstable"):
            SceneConfig(diffusivity=0.3)

    def test_unstable_advection_is_rejected(self):
        with pytest.raises(ValidationError, match="unstable"):
            SceneConfig(velocity={"kind": "vortex", "strength": 0.6})

    def test_initial_shape_must_match(self, still_room):
        with pytest.raises(InputError):
            simulate(still_room, initial=np.ones((3, 3)))


class TestNormalisation:
    @pytest.mark.parametrize("ppm,expected", [(400.0, 0.0), (1420.0, 1.0), (910.0, 0.5), (1500.0, 1.0), (100.0, 0.0)])
    def test_affine_map_with_clamp(self, ppm, expected):
        assert normalize(np.array(ppm), 400.0, 1420.0) == pytest.approx(expected)

    def test_degenerate_range(self):
        with pytest.raises(InputError):
            normalize(np.zeros(3), 5.0, 5.0)

    @pytest.mark.parametrize("value,rgb", [
        (0.0, (0.0, 0.0, 1.0)), (0.125, (0.0, 0.5, 1.0)), (0.25, (0.0, 1.0, 1.0)),
        (0.5, (0.0, 1.0, 0.0)), (0.75, (1.0, 1.0, 0.0)), (1.0, (1.0, 0.0, 0.0)),
    ])
    def test_colormap_breakpoints(self, value, rgb):
        np.testing.assert_allclose(colormap_rgb(np.full((1, 1), value))[:, 0, 0], rgb, atol=1e-15)

    def test_colormap_rejects_unnormalised_fields(self):
        with pytest.raises(InputError):
            colormap_rgb(np.full((2, 2), 1.2))

    def test_channel_layouts(self, rng):
        field = rng.random((4, 5))
        assert to_channels(field, 1).shape == (1, 4, 5)
        assert to_channels(field, 3).shape == (3, 4, 5)
        with pytest.raises(InputError):
            to_channels(field, 2)


class TestSensors:
    def test_noise_free_readings_are_exact(self, rng):
        field = rng.random((10, 12)) * 1000.0
        sensors = SensorSet(((1, 2), (5, 5), (9, 11)), half_width=1)
        np.testing.assert_array_equal(sample_sensors(field, sensors), [field[1, 2], field[5, 5], field[9, 11]])

    def test_constant_field(self):
        sensors = SensorSet(((0, 0), (3, 4), (7, 1)))
        np.testing.assert_array_equal(sample_sensors(np.full((8, 8), 700.0), sensors), [700.0] * 3)

    def test_seeded_noise_is_reproducible(self):
        field = np.full((8, 8), 700.0)
        sensors = SensorSet(((0, 0), (3, 4), (7, 1)), noise_std=0.01)
        first = sample_sensors(field, sensors, np.random.default_rng(3))
        second = sample_sensors(field, sensors, np.random.default_rng(3))
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, [700.0] * 3)

    def test_noise_needs_a_generator(self):
        with pytest.raises(InputError):
            sample_sensors(np.zeros((4, 4)), SensorSet(((0, 0), (1, 1), (2, 3)), noise_std=0.1))

    def test_positions_outside_the_grid(self):
        with pytest.raises(InputError):
            sample_sensors(np.zeros((4, 4)), SensorSet(((0, 0), (1, 1), (4, 3))))


class TestObservationField:
    def test_constant_readings(self):
        sensors = SensorSet(((2, 2), (2, 12), (12, 6), (8, 9)), half_width=2)
        field = observation_field([650.0] * 4, sensors, (16, 16))
        np.testing.assert_allclose(field, 650.0, rtol=0, atol=1e-9)

    def test_reproduces_a_plane_inside_the_hull(self):
        sensors = SensorSet(((2, 2), (2, 12), (12, 6)), half_width=0)
        plane = lambda r, c: 500.0 + 3.0 * r - 2.0 * c  # noqa: E731
        field = observation_field([plane(r, c) for r, c in sensors.positions], sensors, (16, 16))
        for r, c in [(5, 6), (4, 4), (3, 10), (8, 6)]:
            assert field[r, c] == pytest.approx(plane(r, c), abs=1e-9)

    def test_zone_takes_the_sensor_reading(self):
        sensors = SensorSet(((3, 3), (3, 14), (13, 8)), half_width=2)
        readings = [500.0, 800.0, 1100.0]
        field = observation_field(readings, sensors, (18, 18))
        for (zr, zc), value in zip(sensors.zones((18, 18)), readings):
            assert np.all(field[zr, zc] == value)
        assert field[zr, zc].shape == (4, 4)

    def test_normalises_when_given_a_range(self):
        sensors = SensorSet(((2, 2), (2, 12), (12, 6)), half_width=1)
        field = observation_field([910.0] * 3, sensors, (16, 16), 400.0, 1420.0)
        np.testing.assert_allclose(field, 0.5)

    def test_collinear_sensors_are_rejected(self):
        sensors = SensorSet(((1, 1), (2, 2), (3, 3)))
        with pytest.raises(InputError, match="collinear"):
            observation_field([1.0, 2.0, 3.0], sensors, (8, 8))

    def test_needs_three_sensors(self):
        with pytest.raises(InputError):
            observation_field([1.0, 2.0], SensorSet(((1, 1), (5, 2))), (8, 8))
