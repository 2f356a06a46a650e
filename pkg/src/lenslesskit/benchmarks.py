"""Frozen desk-scale benchmarks shared by the test suite, demos, and CLI.

Everything here is generated deterministically from fixed seeds, so the
"frozen" benchmarks are code-defined rather than shipped as binary assets.
Record-level benchmarks stay in memory; dataset benchmarks are written to a
caller-provided directory through :func:`lenslesskit.simulate.build_dataset`.
"""

import numpy as np

from . import optics, simulate, solvers

#: master seeds for the individual benchmarks (do not reuse across benchmarks)
SEED_BACKGROUND = 1001
SEED_TREND = 2002
SEED_TRAINING = 3003
SEED_DECOMPOSITION = 4004


def benchmark_psf(seed=7, shape=(9, 9, 3)):
    """Multifocal-style PSF used by the record-level benchmarks."""
    return simulate.synth_psf("multifocal_like", shape, {"n_grids": 3, "spacing": 3}, seed=seed)


def benchmark_operator(sensor_shape=(32, 32), seed=7):
    return optics.make_operator(benchmark_psf(seed=seed), sensor_shape)


def background_dominated_records(n=50, n_frames=16, sigma=0.005, seed=SEED_BACKGROUND):
    """The frozen background-dominated benchmark: ``||H x_b|| >= 10 ||n_a||``.

    Returns (operator, list of SimRecord). Ambient plus two directional
    lamps dominate the sensor noise by a wide margin, mirroring captures in
    ordinary lit rooms.
    """
    op = benchmark_operator()
    noise = simulate.NoiseSpec(kind="gaussian", sigma=sigma)
    records = []
    for i in range(n):
        ss = np.random.SeedSequence([seed, 1, i])
        scene_ss, lamp_ss, record_ss = ss.spawn(3)
        rng = np.random.default_rng(lamp_ss)
        lamps = tuple(
            (
                float(rng.uniform(4, 28)),
                float(rng.uniform(4, 28)),
                float(rng.uniform(3.0, 7.0)),
                float(rng.uniform(0.4, 0.9)),
            )
            for _ in range(2)
        )
        illum = simulate.IlluminationSpec(kind="mixture", level=0.15, lamp_positions=lamps)
        x = simulate.synth_scene((32, 32, 3), seed=scene_ss, kind="mixed")
        x_b = simulate.synth_background(illum, (32, 32))
        rec = simulate.make_record(op, x, x_b, noise, n_frames, record_ss)
        records.append(rec)
    return op, records


def trend_dataset_config(seed=SEED_TREND):
    """Dataset behind the reconstruction-trend benchmark (none vs direct_sub
    vs trained concatenate); lamp positions are held out between splits."""
    train_sets = (
        ((6.0, 6.0, 4.0, 0.7),),
        ((6.0, 18.0, 5.0, 0.6),),
        ((18.0, 6.0, 4.5, 0.8),),
        ((12.0, 12.0, 5.0, 0.5),),
    )
    test_sets = (
        ((18.0, 18.0, 4.0, 0.7),),
        ((4.0, 12.0, 5.5, 0.6),),
        ((12.0, 4.0, 4.5, 0.75),),
    )
    return simulate.DatasetConfig(
        n_records=40,
        scene_shape=(24, 24),
        psf={"kind": "multifocal_like", "shape": [7, 7], "params": {"n_grids": 2, "spacing": 3}, "seed": 11},
        channels=3,
        noise=simulate.NoiseSpec(kind="gaussian", sigma=0.005),
        ambient_level=0.12,
        train_lamp_sets=train_sets,
        test_lamp_sets=test_sets,
        n_frames=16,
        split_fraction=0.85,
        seed=seed,
        scene_kind="mixed",
    )


def training_dataset_config(seed=SEED_TRAINING):
    """The frozen 64-record set for solver-training benchmarks (no background)."""
    return simulate.DatasetConfig(
        n_records=64,
        scene_shape=(16, 16),
        psf={"kind": "random_spots", "shape": [5, 5], "params": {"n_spots": 3, "blur_sigma": 0.6}, "seed": 13},
        channels=3,
        noise=simulate.NoiseSpec(kind="gaussian", sigma=0.01),
        ambient_level=0.0,
        n_frames=1,
        split_fraction=0.85,
        seed=seed,
        scene_kind="mixed",
    )


def benchmark_solver_config(n_iter=20):
    """ADMM configuration used for the trend benchmark's classical arms."""
    return solvers.SolverConfig(n_iter=n_iter)


def decomposition_instance(seed=SEED_DECOMPOSITION, sensor_shape=(16, 16), psf_shape=(7, 7)):
    """Well-conditioned operator + signed perturbation for order-fit tests.

    The PSF mixes a strong central impulse with a diffuse component and is
    scaled to 0.9, keeping the OTF magnitude within [~0.27, 0.9]; the
    perturbation is zero-mean with L1 norm 0.5 so the first-order expansion
    converges comfortably over epsilon in [1e-3, 1e-1].
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    h, w = psf_shape
    diffuse = rng.uniform(0.0, 1.0, size=(h, w, 3))
    diffuse /= diffuse.sum(axis=(0, 1))
    psf = 0.35 * diffuse
    psf[h // 2, w // 2, :] += 0.65
    psf *= 0.9
    op = optics.make_operator(psf, sensor_shape)

    delta = rng.standard_normal((h, w, 3))
    delta -= delta.mean(axis=(0, 1))
    delta /= np.abs(delta).sum(axis=(0, 1))
    delta *= 0.5

    shape = op.padded_shape + (3,)
    x = simulate.synth_scene(shape, seed=np.random.SeedSequence([seed, 1]), kind="texture")
    n_a = 0.01 * rng.standard_normal(shape)
    x_b = 0.15 + 0.1 * simulate.synth_scene(shape, seed=np.random.SeedSequence([seed, 2]), kind="texture")
    return op, delta, x, n_a, x_b
