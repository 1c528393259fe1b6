"""Synthetic PSF construction, dataset corruption and truth bookkeeping."""

import json

import numpy as np
import pytest

from aodeconv import imgio
from aodeconv.image import grid_center
from aodeconv.moffat import MoffatParams, moffat_eval, radial_profile
from aodeconv.noise import NoiseModel
from aodeconv.simulate import (
    NuisanceSpec,
    SyntheticPsfSpec,
    make_dataset,
    make_synthetic_psf,
    reference_scenario,
    save_truth_bundle,
)


def disc_object(n, radius, height):
    yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    c = n // 2
    return np.where((yy - c) ** 2 + (xx - c) ** 2 <= radius**2, height, 0.0)


@pytest.fixture(scope="module")
def small_psf():
    return make_synthetic_psf(
        (64, 64), SyntheticPsfSpec(ao_cutoff_radius=20.0), seed=3
    )


class TestSpecValidation:
    def test_cutoff_must_fit_grid(self):
        with pytest.raises(ValueError, match="fit inside"):
            make_synthetic_psf((64, 64), SyntheticPsfSpec(), seed=0)

    def test_cutoff_must_be_positive(self):
        with pytest.raises(ValueError):
            SyntheticPsfSpec(ao_cutoff_radius=0.0)

    def test_component_counts_non_negative(self):
        with pytest.raises(ValueError):
            SyntheticPsfSpec(n_speckles=-1)

    def test_salt_pepper_fraction_range(self):
        with pytest.raises(ValueError):
            NuisanceSpec(salt_pepper_fraction=0.5)

    def test_moon_contrast_positive(self):
        with pytest.raises(ValueError):
            NuisanceSpec(moons=((5.0, 5.0, 0.0),))


class TestMakeSyntheticPsf:
    def test_degenerate_spec_is_pure_moffat(self):
        spec = SyntheticPsfSpec(
            ao_cutoff_radius=20.0, halo_amplitude=0.0, wind_amplitude=0.0,
            n_speckles=0, speckle_amplitude=0.0,
            n_spikes=0, spike_amplitude=0.0,
        )
        psf = make_synthetic_psf((64, 64), spec, seed=1)
        ci, cj = grid_center((64, 64))
        want = moffat_eval(
            (64, 64), MoffatParams(ci, cj, 3.2, 2.6, 1.8, 0.5, 1.0)
        )
        want /= want.sum()
        assert np.abs(psf - want).max() < 1e-12

    def test_unit_sum_and_positive(self):
        psf = make_synthetic_psf((256, 256), SyntheticPsfSpec(), seed=7)
        assert psf.sum() == pytest.approx(1.0, abs=1e-12)
        assert psf.min() > 0.0

    def test_profile_monotone_outside_core(self):
        psf = make_synthetic_psf((256, 256), SyntheticPsfSpec(), seed=7)
        rr, prof = radial_profile(psf, grid_center((256, 256)), n_bins=40)
        outer = prof[rr > 10.0]
        assert all(b <= a * 1.05 for a, b in zip(outer, outer[1:]))

    def test_dynamic_range(self):
        psf = make_synthetic_psf((256, 256), SyntheticPsfSpec(), seed=7)
        assert psf.max() / psf.min() >= 1e4

    def test_deterministic_per_seed(self):
        a = make_synthetic_psf((256, 256), SyntheticPsfSpec(), seed=7)
        b = make_synthetic_psf((256, 256), SyntheticPsfSpec(), seed=7)
        c = make_synthetic_psf((256, 256), SyntheticPsfSpec(), seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestMakeDataset:
    def test_no_nuisance_returns_exact_convolution(self, small_psf):
        obj = disc_object(64, 10, 500.0)
        data, bundle = make_dataset(
            obj, small_psf, NuisanceSpec(noise=None), seed=1
        )
        from aodeconv.image import convolve

        assert np.array_equal(data, convolve(obj, small_psf))
        assert np.all(bundle.noise_image == 0.0)

    def test_readout_noise_variance(self, small_psf):
        obj = disc_object(64, 10, 500.0)
        nui = NuisanceSpec(noise=NoiseModel(0.0, 400.0))
        for seed in (1, 2, 3):
            data, bundle = make_dataset(obj, small_psf, nui, seed)
            v = np.var(data - bundle.clean, ddof=1)
            assert v == pytest.approx(400.0, rel=0.05)

    def test_moon_aperture_photometry(self, small_psf):
        obj = disc_object(64, 10, 10000.0)
        nui = NuisanceSpec(
            noise=NoiseModel(1.0, 25.0), moons=((20.0, -14.0, 1e-2),)
        )
        data, b = make_dataset(obj, small_psf, nui, seed=11)
        px, py = b.moon_positions[0]
        yy, xx = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
        ap = (yy - px) ** 2 + (xx - py) ** 2 <= 25.0
        measured = (data - b.clean)[ap].sum()
        predicted = b.moon_image[ap].sum()
        pre = b.clean + b.moon_image
        sigma_ap = np.sqrt((np.maximum(pre, 0.0) + 25.0)[ap].sum())
        assert predicted / sigma_ap > 10.0
        assert abs(measured - predicted) <= 3.0 * sigma_ap

    def test_moon_outside_grid_rejected(self, small_psf):
        obj = disc_object(64, 10, 500.0)
        nui = NuisanceSpec(moons=((200.0, 0.0, 1e-2),))
        with pytest.raises(ValueError, match="outside the grid"):
            make_dataset(obj, small_psf, nui, seed=1)

    def test_additive_identity_exact(self, small_psf):
        obj = disc_object(64, 10, 500.0)
        nui = NuisanceSpec(
            noise=NoiseModel(1.0, 25.0),
            salt_pepper_fraction=0.01,
            n_cosmic_rays=3,
            moons=((15.0, 10.0, 5e-3),),
        )
        data, b = make_dataset(obj, small_psf, nui, seed=21)
        recon = (
            b.clean + b.moon_image + b.noise_image + b.cosmic_image
            + b.salt_pepper_delta
        )
        assert np.array_equal(data, recon)
        assert np.array_equal(data, b.data)

    def test_salt_pepper_bookkeeping(self, small_psf):
        obj = disc_object(64, 10, 500.0)
        nui = NuisanceSpec(noise=NoiseModel(1.0, 25.0),
                           salt_pepper_fraction=0.01)
        data, b = make_dataset(obj, small_psf, nui, seed=5)
        n_bad = round(0.01 * 64 * 64)
        n_salt = int(b.salt_mask.sum())
        n_pepper = int(b.pepper_mask.sum())
        assert n_salt + n_pepper == n_bad
        assert n_salt == n_bad // 2 + n_bad % 2
        assert not np.any(b.salt_mask & b.pepper_mask)
        salt = b.salt_mask.astype(bool)
        pepper = b.pepper_mask.astype(bool)
        assert np.all(data[pepper] == 0.0)
        assert np.unique(data[salt]).size == 1  # all clipped to saturation
        assert data[salt].max() == data.max()
        # deltas recorded nowhere else
        assert np.all(b.salt_pepper_delta[~(salt | pepper)] == 0.0)

    def test_cosmic_ray_bookkeeping(self, small_psf):
        obj = disc_object(64, 10, 500.0)
        nui = NuisanceSpec(noise=NoiseModel(1.0, 25.0), n_cosmic_rays=5)
        data, b = make_dataset(obj, small_psf, nui, seed=9)
        hit = b.cosmic_mask.astype(bool)
        assert hit.sum() >= 5
        assert np.all(b.cosmic_image[hit] >= 1200.0)
        assert np.all(b.cosmic_image[~hit] == 0.0)

    def test_mean_over_seeds_is_clean(self, small_psf):
        obj = disc_object(32, 5, 200.0)
        psf = make_synthetic_psf(
            (32, 32), SyntheticPsfSpec(ao_cutoff_radius=10.0), seed=5
        )
        nui = NuisanceSpec(noise=NoiseModel(1.0, 25.0))
        acc = np.zeros((32, 32))
        clean = None
        for s in range(100):
            data, b = make_dataset(obj, psf, nui, seed=1000 + s)
            acc += data - b.clean
            clean = b.clean
        acc /= 100
        sd_mean = np.sqrt(np.maximum(clean, 0.0) + 25.0) / 10.0
        z = acc / sd_mean
        assert abs(acc.sum()) <= 3.0 * np.sqrt((sd_mean**2).sum())
        assert (np.abs(z) > 3.0).mean() <= 0.01
        assert np.abs(z).max() <= 5.0


class TestReferenceScenario:
    def test_deterministic(self):
        a = reference_scenario(2)
        b = reference_scenario(2)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(a.psf_true, b.psf_true)
        assert np.array_equal(a.obj_true, b.obj_true)

    def test_bundle_contents(self):
        b = reference_scenario(2)
        assert b.data.shape == (256, 256)
        assert b.psf_true.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(b.obj_true >= 0.0)
        assert b.clean.max() == pytest.approx(1.0e4, rel=1e-9)
        assert b.moon_contrasts == [0.01, 0.003, 0.001]
        n_sp = int(b.salt_mask.sum() + b.pepper_mask.sum())
        assert n_sp == round(0.002 * 256 * 256)
        assert b.cosmic_mask.sum() > 0
        recon = (
            b.clean + b.moon_image + b.noise_image + b.cosmic_image
            + b.salt_pepper_delta
        )
        assert np.array_equal(b.data, recon)

    def test_moons_on_grid(self):
        b = reference_scenario(4)
        for px, py in b.moon_positions:
            assert 0 <= px < 256 and 0 <= py < 256

    def test_size_floor(self):
        with pytest.raises(ValueError, match=">= 64"):
            reference_scenario(1, size=32)

    def test_smaller_grid_scales(self):
        b = reference_scenario(3, size=128)
        assert b.data.shape == (128, 128)
        assert b.clean.max() == pytest.approx(1.0e4, rel=1e-9)


class TestSaveTruthBundle:
    def test_files_round_trip(self, tmp_path):
        b = reference_scenario(6, size=64)
        save_truth_bundle(b, tmp_path / "bundle")
        out = tmp_path / "bundle"
        assert np.array_equal(imgio.read_img1(out / "data.img1"), b.data)
        assert np.array_equal(
            imgio.read_img1(out / "obj_true.img1"), b.obj_true
        )
        assert np.array_equal(
            imgio.read_img1(out / "psf_true.img1"), b.psf_true
        )
        truth = json.loads((out / "truth.json").read_text())
        assert truth["seed"] == b.seed
        assert truth["noise"] == {"eta": 1.0, "v_ron": 25.0}
        assert len(truth["moons"]) == 3
        assert len(truth["salt_pixels"]) == int(b.salt_mask.sum())
        assert len(truth["cosmic_pixels"]) == int(b.cosmic_mask.sum())
