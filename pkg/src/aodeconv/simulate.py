"""Synthetic frames with a structured AO-like PSF and known truth.

The synthetic PSF stacks the usual anatomy of a partially corrected
long-exposure image: a sharp elliptical Moffat core, an anisotropic
wind-driven halo, a power-law turbulence halo switching on beyond the
correction cutoff radius, a sprinkle of quasi-static speckles sitting
on the cutoff ring, and thin diffraction spikes.  Everything is
deterministic given a seed.

Datasets add photon + readout noise, optional moons (faint point
sources), cosmic-ray streaks and salt/pepper pixels, and keep every
injected component so tests can do exact bookkeeping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from . import imgio
from .deconv import DeconvConfig, RobustConfig
from .image import as_image, convolve, grid_center, shift_image
from .moffat import MoffatParams, moffat_eval
from .noise import NoiseModel
from .pipeline import SegmentationConfig


@dataclass(frozen=True)
class SyntheticPsfSpec:
    """Anatomy of the synthetic PSF.

    The core's (x0, y0) are offsets from the grid centre, so the
    default (0, 0) builds a centred PSF.  Amplitudes are relative to
    the core peak before normalization.
    """

    core: MoffatParams = MoffatParams(
        x0=0.0, y0=0.0, alpha1=3.2, alpha2=2.6,
        beta=1.8, theta=0.5, gamma=1.0,
    )
    ao_cutoff_radius: float = 40.0
    halo_amplitude: float = 3e-5
    halo_slope: float = 2.5
    wind_amplitude: float = 2e-3
    wind_sigma_major: float = 18.0
    wind_sigma_minor: float = 9.0
    wind_angle: float = 0.8
    n_speckles: int = 12
    speckle_amplitude: float = 1.0e-4
    speckle_sigma: float = 3.2
    n_spikes: int = 4
    spike_angle: float = 0.35
    spike_amplitude: float = 8e-5
    spike_width: float = 1.2
    floor_frac: float = 1e-14

    def __post_init__(self):
        if self.ao_cutoff_radius <= 0:
            raise ValueError("ao_cutoff_radius must be positive")
        if not (0 < self.floor_frac < 1):
            raise ValueError("floor_frac must be in (0, 1)")
        if self.n_speckles < 0 or self.n_spikes < 0:
            raise ValueError("component counts must be >= 0")


@dataclass(frozen=True)
class NuisanceSpec:
    """Everything inflicted on the clean frame.

    `noise=None` produces a noiseless dataset (the noise law itself
    cannot express zero variance).
    """

    noise: NoiseModel | None = NoiseModel(eta=1.0, v_ron=25.0)
    salt_pepper_fraction: float = 0.0
    n_cosmic_rays: int = 0
    cosmic_ray_amplitude: tuple[float, float] = (1200.0, 3500.0)
    cosmic_ray_length: tuple[float, float] = (5.0, 15.0)
    moons: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if not (0 <= self.salt_pepper_fraction < 0.5):
            raise ValueError("salt_pepper_fraction must be in [0, 0.5)")
        if self.n_cosmic_rays < 0:
            raise ValueError("n_cosmic_rays must be >= 0")
        for dx, dy, contrast in self.moons:
            if contrast <= 0:
                raise ValueError(f"moon contrast must be positive, got {contrast}")


@dataclass
class TruthBundle:
    """A dataset plus every component that went into it.

    data == clean + moon_image + noise_image + cosmic_image +
    salt_pepper_delta, exactly.
    """

    data: np.ndarray
    obj_true: np.ndarray
    psf_true: np.ndarray
    clean: np.ndarray
    moon_image: np.ndarray
    moon_images: list[np.ndarray]
    moon_positions: list[tuple[float, float]]
    moon_contrasts: list[float]
    noise_image: np.ndarray
    cosmic_image: np.ndarray
    cosmic_mask: np.ndarray
    salt_mask: np.ndarray
    pepper_mask: np.ndarray
    salt_pepper_delta: np.ndarray
    noise: NoiseModel | None
    seed: int
    extras: dict = field(default_factory=dict)


def make_synthetic_psf(shape, spec: SyntheticPsfSpec, seed: int) -> np.ndarray:
    """Build the unit-sum synthetic PSF on an (n0, n1) grid."""
    n0, n1 = int(shape[0]), int(shape[1])
    if n0 < 8 or n1 < 8:
        raise ValueError(f"grid {shape} too small")
    if spec.ao_cutoff_radius >= min(n0, n1) / 2:
        raise ValueError("ao_cutoff_radius must fit inside the grid")
    rng = np.random.default_rng(seed)
    ci, cj = grid_center((n0, n1))
    cx, cy = ci + spec.core.x0, cj + spec.core.y0

    core = moffat_eval(
        (n0, n1),
        MoffatParams(
            x0=cx, y0=cy,
            alpha1=spec.core.alpha1, alpha2=spec.core.alpha2,
            beta=spec.core.beta, theta=spec.core.theta,
            gamma=spec.core.gamma,
        ),
    )
    peak = spec.core.gamma

    i = np.arange(n0, dtype=np.float64)[:, None] - cx
    j = np.arange(n1, dtype=np.float64)[None, :] - cy
    r = np.hypot(i, j)

    # anisotropic wind-driven halo
    cw, sw = math.cos(spec.wind_angle), math.sin(spec.wind_angle)
    u = i * cw + j * sw
    v = -i * sw + j * cw
    wind = (
        peak
        * spec.wind_amplitude
        * np.exp(
            -0.5 * (u / spec.wind_sigma_major) ** 2
            - 0.5 * (v / spec.wind_sigma_minor) ** 2
        )
    )

    # power-law turbulence halo beyond the correction cutoff
    rc = spec.ao_cutoff_radius
    turnon = 1.0 / (1.0 + np.exp(-(r - rc) / 2.0))
    outer = (
        peak
        * spec.halo_amplitude
        * turnon
        * (np.maximum(r, rc) / rc) ** (-spec.halo_slope)
    )

    # quasi-static speckles on the cutoff ring
    speckles = np.zeros_like(core)
    for _ in range(spec.n_speckles):
        phi = rng.uniform(0.0, 2.0 * math.pi)
        rad = rc * rng.uniform(0.92, 1.08)
        si = cx + rad * math.cos(phi)
        sj = cy + rad * math.sin(phi)
        amp = peak * spec.speckle_amplitude * rng.uniform(0.5, 1.5)
        di = np.arange(n0, dtype=np.float64)[:, None] - si
        dj = np.arange(n1, dtype=np.float64)[None, :] - sj
        speckles += amp * np.exp(
            -(di * di + dj * dj) / (2.0 * spec.speckle_sigma ** 2)
        )

    # diffraction spikes: thin ridges leaving the core
    spikes = np.zeros_like(core)
    for k in range(spec.n_spikes):
        phi = spec.spike_angle + 2.0 * math.pi * k / max(spec.n_spikes, 1)
        ux, uy = math.cos(phi), math.sin(phi)
        t = i * ux + j * uy
        d_perp = -i * uy + j * ux
        along = t > 2.0
        ridge = (
            peak
            * spec.spike_amplitude
            * np.exp(-0.5 * (d_perp / spec.spike_width) ** 2)
            / (1.0 + np.maximum(t, 0.0) / 10.0)
        )
        spikes += np.where(along, ridge, 0.0)

    psf = core + wind + outer + speckles + spikes
    psf = np.maximum(psf, spec.floor_frac * float(psf.max()))
    return psf / float(psf.sum())


def _rasterize_segment(shape, start, angle, length):
    """Pixel indices of a straight streak, deduplicated."""
    steps = np.arange(0.0, length, 0.5)
    ii = np.round(start[0] + steps * math.cos(angle)).astype(int)
    jj = np.round(start[1] + steps * math.sin(angle)).astype(int)
    keep = (ii >= 0) & (ii < shape[0]) & (jj >= 0) & (jj < shape[1])
    pix = np.unique(np.stack([ii[keep], jj[keep]], axis=1), axis=0)
    return pix[:, 0], pix[:, 1]


def make_dataset(obj_true, psf_true, nuisance: NuisanceSpec, seed: int):
    """Corrupt a clean scene; return (data, TruthBundle)."""
    obj = as_image(obj_true, "obj_true")
    psf = as_image(psf_true, "psf_true")
    if obj.shape != psf.shape:
        raise ValueError(f"shape mismatch: {obj.shape} vs {psf.shape}")
    rng = np.random.default_rng(seed)
    n0, n1 = obj.shape
    ci, cj = grid_center(obj.shape)

    clean = convolve(obj, psf)
    peak = float(clean.max())
    psf_peak = float(psf.max())

    moon_images: list[np.ndarray] = []
    moon_positions: list[tuple[float, float]] = []
    moon_contrasts: list[float] = []
    moon_total = np.zeros_like(clean)
    for dx, dy, contrast in nuisance.moons:
        px, py = ci + dx, cj + dy
        if not (0 <= px < n0 and 0 <= py < n1):
            raise ValueError(f"moon offset ({dx}, {dy}) lands outside the grid")
        img = contrast * peak * shift_image(psf, dx, dy) / psf_peak
        moon_images.append(img)
        moon_positions.append((px, py))
        moon_contrasts.append(contrast)
        moon_total = moon_total + img

    pre = clean + moon_total
    if nuisance.noise is None:
        noise_image = np.zeros_like(pre)
        data = pre + noise_image
    else:
        sigma = np.sqrt(
            nuisance.noise.eta * np.maximum(pre, 0.0) + nuisance.noise.v_ron
        )
        noise_image = rng.standard_normal(obj.shape) * sigma
        data = pre + noise_image

    cosmic_image = np.zeros_like(data)
    cosmic_mask = np.zeros(obj.shape, dtype=np.uint8)
    # Keep streaks clear of the injected moons so that each recorded
    # nuisance component owns its pixels and per-component photometry
    # stays unambiguous.
    moon_clearance = 12.0
    for _ in range(nuisance.n_cosmic_rays):
        for _attempt in range(64):
            start = (
                rng.uniform(8, n0 - 8),
                rng.uniform(8, n1 - 8),
            )
            angle = rng.uniform(0.0, 2.0 * math.pi)
            length = rng.uniform(*nuisance.cosmic_ray_length)
            ii, jj = _rasterize_segment(obj.shape, start, angle, length)
            if all(
                np.min(np.hypot(ii - px, jj - py)) > moon_clearance
                for px, py in moon_positions
            ):
                break
        amp = rng.uniform(*nuisance.cosmic_ray_amplitude)
        cosmic_image[ii, jj] += amp
        cosmic_mask[ii, jj] = 1
    data = data + cosmic_image

    salt_mask = np.zeros(obj.shape, dtype=np.uint8)
    pepper_mask = np.zeros(obj.shape, dtype=np.uint8)
    sp_delta = np.zeros_like(data)
    n_bad = int(round(nuisance.salt_pepper_fraction * data.size))
    if n_bad > 0:
        flat = rng.choice(data.size, size=n_bad, replace=False)
        ii, jj = np.unravel_index(flat, data.shape)
        saturation = 1.5 * float(data.max())
        half = n_bad // 2 + n_bad % 2
        before = data[ii, jj].copy()
        new = np.where(np.arange(n_bad) < half, saturation, 0.0)
        sp_delta[ii, jj] = new - before
        data = data + sp_delta
        salt_mask[ii[:half], jj[:half]] = 1
        pepper_mask[ii[half:], jj[half:]] = 1

    bundle = TruthBundle(
        data=data,
        obj_true=obj,
        psf_true=psf,
        clean=clean,
        moon_image=moon_total,
        moon_images=moon_images,
        moon_positions=moon_positions,
        moon_contrasts=moon_contrasts,
        noise_image=noise_image,
        cosmic_image=cosmic_image,
        cosmic_mask=cosmic_mask,
        salt_mask=salt_mask,
        pepper_mask=pepper_mask,
        salt_pepper_delta=sp_delta,
        noise=nuisance.noise,
        seed=int(seed),
    )
    return data, bundle


def _make_object(shape, rng, peak=1.0, scale=1.0):
    """Sharp-edged blob with gentle surface texture."""
    n0, n1 = shape
    ci, cj = grid_center(shape)
    i = np.arange(n0, dtype=np.float64)[:, None] - ci
    j = np.arange(n1, dtype=np.float64)[None, :] - cj
    r = np.hypot(i, j)
    phi = np.arctan2(j, i)
    a, b = 30.0 * scale, 21.0 * scale
    tilt = rng.uniform(0.0, math.pi)
    ell = (a * b) / np.sqrt(
        (b * np.cos(phi - tilt)) ** 2 + (a * np.sin(phi - tilt)) ** 2
    )
    p1, p2 = rng.uniform(0.0, 2.0 * math.pi, size=2)
    boundary = ell * (
        1.0 + 0.10 * np.sin(2 * phi + p1) + 0.06 * np.sin(3 * phi + p2)
    )
    inside = r <= boundary
    texture = 1.0 + 0.25 * ndi.gaussian_filter(
        rng.standard_normal(shape), max(4.0 * scale, 1.0), mode="wrap"
    )
    texture = np.clip(texture, 0.4, None)
    return peak * np.where(inside, texture, 0.0)


def reference_scenario(seed: int, size: int = 256) -> TruthBundle:
    """The standard test scene: one blob, three moons, full nuisance set.

    Deterministic per seed; the seed drives the PSF speckles, the
    object's orientation and texture, the noise realization and the
    outlier placement, all through independent child generators.
    """
    if size < 64:
        raise ValueError(f"size must be >= 64, got {size}")
    ss = np.random.SeedSequence(seed)
    s_psf, s_obj, s_moon, s_nuis = [s.generate_state(1)[0] for s in ss.spawn(4)]

    shape = (size, size)
    scale = size / 256.0
    psf_spec = SyntheticPsfSpec(ao_cutoff_radius=40.0 * scale)
    psf = make_synthetic_psf(shape, psf_spec, s_psf)

    obj_rng = np.random.default_rng(s_obj)
    obj_raw = _make_object(shape, obj_rng, scale=scale)
    clean_raw = convolve(obj_raw, psf)
    obj = obj_raw * (1.0e4 / float(clean_raw.max()))

    moon_rng = np.random.default_rng(s_moon)
    seps = (48.0 * scale, 70.0 * scale, 95.0 * scale)
    contrasts = (1e-2, 3e-3, 1e-3)
    moons = []
    for sep, contrast in zip(seps, contrasts):
        ang = moon_rng.uniform(0.0, 2.0 * math.pi)
        moons.append((sep * math.cos(ang), sep * math.sin(ang), contrast))

    nuisance = NuisanceSpec(
        noise=NoiseModel(eta=1.0, v_ron=25.0),
        salt_pepper_fraction=0.002,
        n_cosmic_rays=5,
        moons=tuple(moons),
    )
    _, bundle = make_dataset(obj, psf, nuisance, s_nuis)
    bundle.seed = int(seed)  # report the scenario seed, not the child stream
    bundle.extras["psf_spec"] = psf_spec
    bundle.extras["nuisance"] = nuisance
    return bundle


def reference_configs(size: int = 256):
    """Hyperparameters tuned for the reference scenario.

    Returns (DeconvConfig, SegmentationConfig, RobustConfig).
    """
    deconv = DeconvConfig(
        mu_obj=0.02,
        eps_obj=240.0,
        mu_psf=30.0,
        n_alt=12,
        n_wgt=5,
        max_iter=1000,
    )
    return deconv, SegmentationConfig(), RobustConfig()


def save_truth_bundle(bundle: TruthBundle, out_dir) -> None:
    """Write data/object/PSF rasters and the truth metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imgio.write_img1(out / "data.img1", bundle.data)
    imgio.write_img1(out / "obj_true.img1", bundle.obj_true)
    imgio.write_img1(out / "psf_true.img1", bundle.psf_true)
    salt = np.argwhere(bundle.salt_mask > 0)
    pepper = np.argwhere(bundle.pepper_mask > 0)
    cosmic = np.argwhere(bundle.cosmic_mask > 0)
    truth = {
        "seed": bundle.seed,
        "noise": None if bundle.noise is None else
        {"eta": bundle.noise.eta, "v_ron": bundle.noise.v_ron},
        "moons": [
            {
                "x": float(px),
                "y": float(py),
                "contrast": float(c),
                "aperture_flux_total": float(img.sum()),
            }
            for (px, py), c, img in zip(
                bundle.moon_positions, bundle.moon_contrasts, bundle.moon_images
            )
        ],
        "salt_pixels": salt.tolist(),
        "pepper_pixels": pepper.tolist(),
        "cosmic_pixels": cosmic.tolist(),
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
