import numpy as np
import pytest

import labelfuse as lf
from labelfuse import rng

from conftest import grid_noise


def small_roi(dims_zyx, margin):
    mask = np.zeros(dims_zyx, dtype=np.uint8)
    mask[margin:-margin, margin:-margin, margin:-margin] = 1
    return lf.RoiMask(mask)


@pytest.fixture(scope="module")
def tiny_setup():
    subject = lf.Volume(grid_noise((12, 12, 12), seed=11))
    templates = [lf.Volume(grid_noise((12, 12, 12), seed=20 + i)) for i in range(3)]
    roi = small_roi((12, 12, 12), margin=3)
    return subject, templates, roi


class TestSearchParams:
    def test_defaults(self):
        p = lf.SearchParams()
        assert (p.init_window, p.iterations, p.k, p.seed) == (13, 3, 10, 0)
        assert p.half_window == 6

    @pytest.mark.parametrize(
        "kwargs", [dict(init_window=12), dict(init_window=0), dict(iterations=0), dict(k=0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            lf.SearchParams(**kwargs)


class TestInitialize:
    def test_deterministic(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p = lf.SearchParams(seed=5)
        f1 = lf.initialize_field(subject, templates, roi, g, p, run=1)
        f2 = lf.initialize_field(subject, templates, roi, g, p, run=1)
        np.testing.assert_array_equal(f1.template, f2.template)
        np.testing.assert_array_equal(f1.distance, f2.distance)
        f3 = lf.initialize_field(subject, templates, roi, g, p, run=2)
        assert not np.array_equal(f1.template, f3.template)

    def test_degenerate_window_self_match(self, tiny_setup):
        subject, _, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p = lf.SearchParams(init_window=1, seed=0)
        field = lf.initialize_field(subject, [subject], roi, g, p)
        nx, ny, _ = field.dims
        x = field.roi_index % nx
        y = (field.roi_index // nx) % ny
        z = field.roi_index // (nx * ny)
        np.testing.assert_array_equal(field.pos_x[0], x)
        np.testing.assert_array_equal(field.pos_y[0], y)
        np.testing.assert_array_equal(field.pos_z[0], z)
        assert (field.distance == 0.0).all()

    def test_zero_fraction_matches_window_odds(self, cohort3_identity):
        # subject identical to the sole template: dist 0 iff offset (0,0,0)
        cohort = cohort3_identity
        subject = cohort.images[0]
        roi = lf.build_roi(cohort, lf.PatchGeometry(5), dilate=5.0)
        field = lf.initialize_field(
            subject, [subject], roi, lf.PatchGeometry(5), lf.SearchParams(seed=123)
        )
        frac = float((field.distance[0] == 0.0).mean())
        p = 1.0 / 13**3
        sigma = (p * (1 - p) / roi.count()) ** 0.5
        assert abs(frac - p) < 6 * sigma

    def test_distances_consistent(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(5)
        field = lf.initialize_field(subject, templates, roi, g, lf.SearchParams(seed=9))
        assert field.audit_max_error(subject, templates) == 0.0


class TestPropagation:
    def flood_oracle(self, roi, seeds_mask):
        """Reachability of the forward-then-reverse sweep pair, booleans only."""
        nx, ny, nz = roi.dims
        mask = roi.values.astype(bool)
        zero = seeds_mask.copy()
        order = np.argwhere(mask)  # (z, y, x) ascending = scan order
        for z, y, x in order:
            for dz, dy, dx in ((0, 0, -1), (0, -1, 0), (-1, 0, 0)):
                zz, yy, xx = z + dz, y + dy, x + dx
                if zz >= 0 and yy >= 0 and xx >= 0 and mask[zz, yy, xx] and zero[zz, yy, xx]:
                    zero[z, y, x] = True
        for z, y, x in order[::-1]:
            for dz, dy, dx in ((0, 0, 1), (0, 1, 0), (1, 0, 0)):
                zz, yy, xx = z + dz, y + dy, x + dx
                if zz < nz and yy < ny and xx < nx and mask[zz, yy, xx] and zero[zz, yy, xx]:
                    zero[z, y, x] = True
        return zero

    def test_flood_fill_matches_oracle(self, cohort3_identity):
        cohort = cohort3_identity
        subject = cohort.images[0]
        g = lf.PatchGeometry(3)
        roi = lf.build_roi(cohort, g, dilate=3.0)
        params = lf.SearchParams(seed=31)
        field = lf.initialize_field(subject, [subject], roi, g, params)
        # plant one zero-distance self-match in the middle of the ROI
        mid = field.n_voxels // 2
        nx, ny, _ = field.dims
        idx = int(field.roi_index[mid])
        x, y, z = idx % nx, (idx // nx) % ny, idx // (nx * ny)
        field.template[0, mid] = 0
        field.pos_x[0, mid] = x
        field.pos_y[0, mid] = y
        field.pos_z[0, mid] = z
        field.distance[0, mid] = 0.0

        seeds = np.zeros(subject.values.shape, dtype=bool)
        flat = field.roi_index[field.distance[0] == 0.0]
        seeds.reshape(-1)[flat] = True

        after = lf.propagation_pass(field, "forward", subject, [subject], roi, g)
        after = lf.propagation_pass(after, "reverse", subject, [subject], roi, g)

        got = np.zeros_like(seeds)
        got.reshape(-1)[after.roi_index[after.distance[0] == 0.0]] = True
        expected = self.flood_oracle(roi, seeds)
        np.testing.assert_array_equal(got, expected)

    def test_noop_at_global_optimum(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        best = lf.brute_force_field(subject, templates, roi, g, k=1, window=25)
        for direction in ("forward", "reverse"):
            after = lf.propagation_pass(best, direction, subject, templates, roi, g)
            np.testing.assert_array_equal(after.distance, best.distance)
            np.testing.assert_array_equal(after.template, best.template)

    def test_single_voxel_roi_noop(self, tiny_setup):
        subject, templates, _ = tiny_setup
        mask = np.zeros((12, 12, 12), dtype=np.uint8)
        mask[6, 6, 6] = 1
        roi = lf.RoiMask(mask)
        g = lf.PatchGeometry(3)
        field = lf.initialize_field(subject, templates, roi, g, lf.SearchParams(seed=2))
        after = lf.propagation_pass(field, "forward", subject, templates, roi, g)
        np.testing.assert_array_equal(after.distance, field.distance)

    def test_rejects_bad_direction(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        field = lf.initialize_field(subject, templates, roi, g, lf.SearchParams())
        with pytest.raises(ValueError, match="direction"):
            lf.propagation_pass(field, "sideways", subject, templates, roi, g)


class TestRandomSearch:
    def test_zero_distance_entry_never_changes(self, tiny_setup):
        subject, _, _ = tiny_setup
        match = lf.Match(template=0, x=6, y=6, z=6, distance=0.0)
        state = rng.stream_state(77)
        out = lf.random_search(
            match, (6, 6, 6), subject, subject, lf.PatchGeometry(3), lf.SearchParams(), state
        )
        assert out == match

    @pytest.mark.parametrize("window,levels", [(3, 1), (13, 3), (7, 2)])
    def test_draws_consumed_per_level(self, tiny_setup, window, levels):
        # three bounded draws per level pin the stream advance
        subject, templates, _ = tiny_setup
        match = lf.Match(template=1, x=6, y=6, z=6, distance=0.0)
        state = rng.stream_state(55)
        lf.random_search(
            match,
            (6, 6, 6),
            subject,
            templates[1],
            lf.PatchGeometry(3),
            lf.SearchParams(init_window=window),
            state,
        )
        expected = rng.stream_state(55)
        for _ in range(3 * levels):
            lf.kernels.rng_next(expected)
        assert state[0] == expected[0]

    def test_improves_or_keeps(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        field = lf.initialize_field(subject, templates, roi, g, lf.SearchParams(seed=3))
        state = rng.stream_state(99)
        for i in range(0, field.n_voxels, 37):
            nx, ny, _ = field.dims
            idx = int(field.roi_index[i])
            voxel = (idx % nx, (idx // nx) % ny, idx // (nx * ny))
            m = field.matches_at(*voxel)[0]
            out = lf.random_search(m, voxel, subject, templates[m.template], g, lf.SearchParams(), state)
            assert out.distance <= m.distance
            assert out.template == m.template


class TestRunMatch:
    def test_monotone_improvement(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p = lf.SearchParams(seed=41)
        init = lf.initialize_field(subject, templates, roi, g, p, run=0)
        final = lf.run_match(subject, templates, roi, g, p, run=0)
        assert (final.distance <= init.distance).all()

    def test_deterministic(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p = lf.SearchParams(seed=8)
        a = lf.run_match(subject, templates, roi, g, p)
        b = lf.run_match(subject, templates, roi, g, p)
        np.testing.assert_array_equal(a.distance, b.distance)
        np.testing.assert_array_equal(a.template, b.template)
        np.testing.assert_array_equal(a.pos_x, b.pos_x)

    def test_audit_exact_after_full_run(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(5)
        field = lf.run_match(subject, templates, roi, g, lf.SearchParams(seed=6))
        assert field.audit_max_error(subject, templates) == 0.0

    def test_identity_convergence(self, cohort3_identity):
        cohort = cohort3_identity
        subject = cohort.images[0]
        g = lf.PatchGeometry(5)
        roi = lf.build_roi(cohort, g, dilate=5.0)
        field = lf.run_match(subject, list(cohort.images), roi, g, lf.SearchParams(seed=17))
        assert float((field.distance == 0.0).mean()) >= 0.99

    def test_search_space_containment(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p = lf.SearchParams(seed=12)
        field = lf.run_match(subject, templates, roi, g, p)
        nx, ny, _ = field.dims
        x = field.roi_index % nx
        y = (field.roi_index // nx) % ny
        z = field.roi_index // (nx * ny)
        # shift budget: init offset plus per-iteration search levels (6+3+1)
        sum_levels = 0
        r = p.half_window
        while r >= 1:
            sum_levels += r
            r //= 2
        bound = p.half_window + p.iterations * sum_levels
        assert int(np.abs(field.pos_x[0] - x).max()) <= bound
        assert int(np.abs(field.pos_y[0] - y).max()) <= bound
        assert int(np.abs(field.pos_z[0] - z).max()) <= bound


class TestBuildField:
    def test_k1_equals_single_run(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p1 = lf.SearchParams(k=1, seed=14)
        single = lf.run_match(subject, templates, roi, g, p1, run=0)
        multi = lf.build_field(subject, templates, roi, g, p1)
        np.testing.assert_array_equal(single.distance, multi.distance)
        np.testing.assert_array_equal(single.template, multi.template)

    def test_threads_do_not_change_result(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p = lf.SearchParams(k=6, seed=15)
        serial = lf.build_field(subject, templates, roi, g, p, threads=1)
        threaded = lf.build_field(subject, templates, roi, g, p, threads=4)
        np.testing.assert_array_equal(serial.distance, threaded.distance)
        np.testing.assert_array_equal(serial.template, threaded.template)
        np.testing.assert_array_equal(serial.pos_x, threaded.pos_x)

    def test_rows_are_independent_runs(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        p = lf.SearchParams(k=3, seed=16)
        field = lf.build_field(subject, templates, roi, g, p)
        for j in range(3):
            row = lf.run_match(subject, templates, roi, g, p, run=j)
            np.testing.assert_array_equal(field.run(j).distance, row.distance)

    def test_matches_at(self, tiny_setup):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        field = lf.build_field(subject, templates, roi, g, lf.SearchParams(k=2, seed=1))
        matches = field.matches_at(6, 6, 6)
        assert len(matches) == 2
        got = lf.patch_ssd(
            subject,
            (6, 6, 6),
            templates[matches[0].template],
            (matches[0].x, matches[0].y, matches[0].z),
            g,
        )
        assert got == matches[0].distance
        with pytest.raises(KeyError):
            field.matches_at(0, 0, 0)


class TestBruteForce:
    def test_identity_self_match(self, cohort3_identity):
        cohort = cohort3_identity
        subject = cohort.images[0]
        g = lf.PatchGeometry(3)
        roi = lf.build_roi(
            lf.TemplateLibrary(images=(subject,), labels=(cohort.labels[0],)), g, dilate=2.0
        )
        field = lf.brute_force_field(subject, [subject], roi, g, k=1, window=7)
        nx, ny, _ = field.dims
        x = field.roi_index % nx
        np.testing.assert_array_equal(field.pos_x[0], x)
        assert (field.distance == 0.0).all()

    def test_exhaustive_k_returns_all_sorted(self, tiny_setup):
        subject, templates, _ = tiny_setup
        mask = np.zeros((12, 12, 12), dtype=np.uint8)
        mask[6, 6, 6] = 1
        roi = lf.RoiMask(mask)
        g = lf.PatchGeometry(3)
        window = 3
        k = len(templates) * window**3
        field = lf.brute_force_field(subject, templates, roi, g, k=k, window=window)
        d = field.distance[:, 0]
        assert (np.diff(d) >= 0).all()
        with pytest.raises(ValueError, match="exceeds"):
            lf.brute_force_field(subject, templates, roi, g, k=k + 1, window=window)

    def test_double_oracle_agreement(self, tiny_setup):
        # second naive implementation with permuted loop order (vectorized)
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        k, window = 3, 5
        field = lf.brute_force_field(subject, templates, roi, g, k=k, window=window)
        half = window // 2
        r = g.radius
        nx, ny, nz = subject.dims
        for i in range(0, field.n_voxels, 29):
            idx = int(field.roi_index[i])
            x, y, z = idx % nx, (idx // nx) % ny, idx // (nx * ny)
            rows = []
            for cx in range(max(x - half, r), min(x + half, nx - 1 - r) + 1):
                for cy in range(max(y - half, r), min(y + half, ny - 1 - r) + 1):
                    for cz in range(max(z - half, r), min(z + half, nz - 1 - r) + 1):
                        for t in range(len(templates)):
                            d = lf.patch_ssd(subject, (x, y, z), templates[t], (cx, cy, cz), g)
                            rows.append((d, t, cx + nx * (cy + ny * cz)))
            rows.sort(key=lambda rec: (rec[0], rec[1], rec[2]))
            for j in range(k):
                m = field.matches_at(x, y, z)[j]
                lin = m.x + nx * (m.y + ny * m.z)
                assert (m.distance, m.template, lin) == rows[j]


class TestDump:
    def test_debug_dump_format(self, tiny_setup, tmp_path):
        subject, templates, roi = tiny_setup
        g = lf.PatchGeometry(3)
        field = lf.build_field(subject, templates, roi, g, lf.SearchParams(k=2, seed=4))
        path = tmp_path / "field.txt"
        field.dump_text(path)
        lines = path.read_text().splitlines()
        assert len(lines) == field.n_voxels * 2
        x, y, z, k_idx, t, px, py, pz, dist = lines[0].split()
        m = field.matches_at(int(x), int(y), int(z))[int(k_idx)]
        assert (int(t), int(px), int(py), int(pz)) == (m.template, m.x, m.y, m.z)
        assert float(dist) == m.distance
