import numpy as np
import pytest
from scipy import ndimage

import labelfuse as lf


def test_deterministic_per_seed():
    spec = lf.PhantomSpec(dims=(24, 24, 24), n_subjects=3, semi_axes=(5.5, 5.0, 4.5), seed=12)
    a = lf.generate_cohort(spec)
    b = lf.generate_cohort(spec)
    for va, vb in zip(a.images, b.images):
        np.testing.assert_array_equal(va.values, vb.values)
    for la, lb in zip(a.labels, b.labels):
        np.testing.assert_array_equal(la.values, lb.values)


def test_different_seed_differs():
    spec = lf.PhantomSpec(dims=(24, 24, 24), n_subjects=1, semi_axes=(5.5, 5.0, 4.5), seed=1)
    spec2 = lf.PhantomSpec(dims=(24, 24, 24), n_subjects=1, semi_axes=(5.5, 5.0, 4.5), seed=2)
    a = lf.generate_cohort(spec)
    b = lf.generate_cohort(spec2)
    assert not np.array_equal(a.images[0].values, b.images[0].values)


def test_subjects_generable_independently():
    spec = lf.PhantomSpec(dims=(24, 24, 24), n_subjects=4, semi_axes=(5.5, 5.0, 4.5), seed=3)
    cohort = lf.generate_cohort(spec)
    img2, lab2 = lf.generate_subject(spec, 2)
    np.testing.assert_array_equal(cohort.images[2].values, img2.values)
    np.testing.assert_array_equal(cohort.labels[2].values, lab2.values)


def test_no_variation_means_identical_subjects():
    spec = lf.PhantomSpec(
        dims=(24, 24, 24), n_subjects=2, semi_axes=(6.0, 5.0, 4.5),
        deform_amplitude=0.0, noise_std=0.0, seed=7,
    )
    cohort = lf.generate_cohort(spec)
    np.testing.assert_array_equal(cohort.images[0].values, cohort.images[1].values)
    np.testing.assert_array_equal(cohort.labels[0].values, cohort.labels[1].values)


def test_no_variation_reproduces_analytic_ellipsoid():
    spec = lf.PhantomSpec(
        dims=(24, 24, 24), n_subjects=1, semi_axes=(6.0, 5.0, 4.5),
        deform_amplitude=0.0, noise_std=0.0, seed=7,
    )
    _, lab = lf.generate_subject(spec, 0)
    z, y, x = np.meshgrid(np.arange(24), np.arange(24), np.arange(24), indexing="ij")
    c = 23 / 2
    implicit = ((x - c) / 6.0) ** 2 + ((y - c) / 5.0) ** 2 + ((z - c) / 4.5) ** 2
    np.testing.assert_array_equal(lab.values, (implicit <= 1.0).astype(np.uint8))


def test_labels_single_connected_component(cohort20):
    structure = ndimage.generate_binary_structure(3, 1)  # 6-connectivity
    for lab in cohort20.labels:
        _, n = ndimage.label(lab.values, structure=structure)
        assert n == 1


def test_foreground_volume_variation_bounded(cohort20):
    counts = np.array([lab.count() for lab in cohort20.labels], dtype=float)
    assert np.abs(counts - counts.mean()).max() <= 0.2 * counts.mean()


def test_intensities_on_grid(cohort20):
    img = cohort20.images[0].values
    np.testing.assert_array_equal(img, lf.quantize_intensities(img))


def test_pairwise_ground_truth_dice_range(cohort20):
    # anatomy-like variation band, measured on the shipped default cohort and
    # pinned here
    scores = []
    for i in range(len(cohort20)):
        for j in range(i + 1, len(cohort20)):
            scores.append(lf.dice(cohort20.labels[i], cohort20.labels[j]))
    assert 0.80 <= min(scores) and max(scores) <= 0.98


def test_margin_invariant_enforced():
    with pytest.raises(ValueError, match="margin"):
        lf.PhantomSpec(dims=(24, 24, 24), n_subjects=1, semi_axes=(10.0, 5.0, 4.0))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_subjects=0),
        dict(dims=(4, 24, 24)),
        dict(deform_amplitude=-1.0),
        dict(noise_std=-0.1),
        dict(semi_axes=(0.0, 5.0, 4.0)),
    ],
)
def test_bad_spec_rejected(kwargs):
    base = dict(dims=(24, 24, 24), n_subjects=2, semi_axes=(5.5, 5.0, 4.5))
    base.update(kwargs)
    with pytest.raises(ValueError):
        lf.PhantomSpec(**base)
