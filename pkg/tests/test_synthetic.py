import math
from unittest import TestCase

import numpy as np

from crowd_points.points import InvalidInput, PointSet
from crowd_points.synthetic import (
    Scene,
    apply_annotation_noise,
    expected_density_mass,
    generate_scene,
    generate_suite,
    inject_deletions,
    inject_jitter,
    integrate_density,
    render_density_map,
)


class GenerateTests(TestCase):
    def test_empty_scene(self):
        assert generate_scene(64, 64, 0, seed=1).n == 0

    def test_deterministic(self):
        for distribution in ("uniform", "clustered", "border"):
            a = generate_scene(128, 96, 40, distribution, seed=3)
            b = generate_scene(128, 96, 40, distribution, seed=3)
            assert a == b
            assert a != generate_scene(128, 96, 40, distribution, seed=4)

    def test_in_bounds(self):
        for distribution in ("uniform", "clustered", "border"):
            scene = generate_scene(256, 256, 1000, distribution, seed=0)
            coords = scene.gt.coords
            assert scene.n == 1000
            assert np.all(coords >= 0.0) and np.all(coords < 256.0)

    def test_scene_bounds_are_checked(self):
        with self.assertRaises(InvalidInput):
            Scene(10, 10, PointSet([[10.0, 5.0]]))

    def test_suite_ids_and_independence(self):
        suite = generate_suite(3, 64, 64, 10, seed=9)
        assert [s.image_id for s in suite] == ["scene-0000", "scene-0001", "scene-0002"]
        assert suite[0].gt != suite[1].gt
        assert generate_suite(3, 64, 64, 10, seed=9) == suite


class NoiseTests(TestCase):
    def setUp(self):
        self.scene = generate_scene(512, 512, 10000, seed=1)

    def test_jitter(self):
        assert inject_jitter(self.scene, 0.0, seed=0) == self.scene
        interior = Scene(512, 512, PointSet(np.random.default_rng(2).uniform(50, 462, size=(10000, 2))))
        jittered = inject_jitter(interior, 3.0, seed=5)
        assert jittered.n == interior.n
        mean_shift = np.mean(np.linalg.norm(jittered.gt.coords - interior.gt.coords, axis=1))
        assert abs(mean_shift - 3.0 * math.sqrt(math.pi / 2)) < 0.05 * 3.0 * math.sqrt(math.pi / 2)

    def test_deletions(self):
        assert inject_deletions(self.scene, 0.0, seed=0) == self.scene
        assert inject_deletions(self.scene, 1.0, seed=0).n == 0
        kept = inject_deletions(self.scene, 0.1, seed=7).n
        assert abs((10000 - kept) / 10000 - 0.1) <= 0.01
        assert inject_deletions(self.scene, 0.1, seed=7) == inject_deletions(self.scene, 0.1, seed=7)
        with self.assertRaises(InvalidInput):
            inject_deletions(self.scene, 1.5, seed=0)

    def test_annotation_noise_only_removes(self):
        suite = generate_suite(4, 128, 128, 50, seed=0)
        noisy = apply_annotation_noise(suite, 3.0, 0.1, seed=1)
        assert [s.image_id for s in noisy] == [s.image_id for s in suite]
        assert all(b.n <= a.n for a, b in zip(suite, noisy))
        assert apply_annotation_noise(suite, 3.0, 0.1, seed=1) == noisy


class DensityTests(TestCase):
    def test_empty_scene(self):
        density = render_density_map(generate_scene(32, 32, 0), 4.0)
        assert density.values.shape == (32, 32)
        assert integrate_density(density) == 0.0

    def test_center_and_corner(self):
        center = Scene(128, 128, PointSet([[64.0, 64.0]]))
        assert abs(integrate_density(render_density_map(center, 4.0)) - 1.0) < 1e-3
        corner = Scene(128, 128, PointSet([[0.0, 0.0]]))
        assert abs(integrate_density(render_density_map(corner, 4.0)) - 0.25) < 1e-3

    def test_interior_scene_keeps_its_count(self):
        coords = np.random.default_rng(0).uniform(40.0, 472.0, size=(100, 2))
        scene = Scene(512, 512, PointSet(coords))
        integral = integrate_density(render_density_map(scene, 4.0))
        assert abs(integral - 100) / 100 < 0.005
        filtered = integrate_density(render_density_map(scene, 4.0, method="filter"))
        assert abs(filtered - 100) / 100 < 0.005

    def test_border_scene_loses_truncated_mass(self):
        scene = generate_scene(512, 512, 100, "border", seed=0)
        integral = integrate_density(render_density_map(scene, 4.0))
        deficit = 100 - integral
        expected_deficit = 100 - expected_density_mass(scene, 4.0)
        assert integral < 100
        assert abs(deficit - expected_deficit) <= 0.1 * expected_deficit

    def test_values_non_negative(self):
        scene = generate_scene(64, 48, 30, "clustered", seed=2)
        for method in ("integral", "filter"):
            density = render_density_map(scene, 2.0, method)
            assert density.values.shape == (48, 64)
            assert np.all(density.values >= 0.0)

    def test_sigma_must_be_positive(self):
        with self.assertRaises(InvalidInput):
            render_density_map(generate_scene(8, 8, 1), 0.0)
