import numpy as np
import pytest

from oracles import circular_convolve2d
from qtrk.corruption import CorruptionPlan, MagnitudeLaw, plan_from_counts
from qtrk.deblur import (
    BlurSpec,
    blur_tensor,
    blur_video,
    circulant,
    gaussian_kernel,
    load_frames,
    pad_kernel,
    psnr,
    read_pgm,
    reorder_from_system,
    reorder_to_system,
    run_deblur,
    save_frames,
    synthetic_frames,
    write_pgm,
)
from qtrk.errors import ShapeError
from qtrk.solvers import SolverConfig, Variant
from qtrk.spectral import bcirc_singular_extremes
from qtrk.tensor_core import frobenius, identity, tprod


def test_gaussian_kernel():
    k = gaussian_kernel(5, 1.0)
    assert k.shape == (5, 5)
    assert abs(k.sum() - 1) < 1e-12
    assert np.array_equal(k, k.T) and k.argmax() == 12
    assert abs(BlurSpec(np.ones((2, 2))).kernel.sum() - 1) < 1e-12


def test_pad_kernel_examples():
    d = pad_kernel(np.ones((1, 1)), 3, 4)
    assert d[0, 0] == 1 and d.sum() == 1
    k = gaussian_kernel()
    padded = pad_kernel(k, 128, 128)
    assert np.array_equal(padded[:5, :5], k)
    assert padded.sum() == pytest.approx(k.sum(), abs=1e-15)
    with pytest.raises(ShapeError):
        pad_kernel(k, 4, 8)


def test_circulant_orientation():
    C = circulant(np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(C[:, 0], [1, 2, 3])
    assert np.array_equal(C[:, 1], [3, 1, 2])


def test_blur_tensor_slices_are_circulant(rng):
    H = blur_tensor(pad_kernel(rng.random((3, 2)), 4, 6))
    assert H.shape == (6, 6, 4)
    for i in range(4):
        S = H[:, :, i]
        for d in range(6):
            diag = [S[(r + d) % 6, r] for r in range(6)]
            assert len(set(diag)) == 1


def test_delta_kernel_is_identity():
    H = blur_tensor(pad_kernel(np.ones((1, 1)), 5, 7))
    assert np.array_equal(H, identity(7, 5))
    video = np.random.default_rng(1).random((5, 7, 2))
    assert np.max(np.abs(blur_video(video, BlurSpec.delta()) - video)) < 1e-15


def test_blur_matches_circular_convolution_oracle(rng):
    frame = rng.random((4, 4))
    kernel = np.full((2, 2), 0.25)
    out = blur_video(frame[:, :, None], BlurSpec(kernel))[:, :, 0]
    assert np.max(np.abs(out - circular_convolve2d(frame, kernel))) < 1e-12
    video = rng.random((8, 6, 3))
    k = gaussian_kernel(3, 0.8)
    blurred = blur_video(video, BlurSpec(k))
    for f in range(3):
        assert np.max(np.abs(blurred[:, :, f] - circular_convolve2d(video[:, :, f], k))) < 1e-12


def test_reorder_examples(rng):
    video = rng.random((6, 5, 3))
    assert np.array_equal(reorder_from_system(reorder_to_system(video)), video)
    # a pure permutation of entries, so the norm is preserved exactly
    assert np.array_equal(np.sort(reorder_to_system(video), axis=None), np.sort(video, axis=None))
    assert frobenius(reorder_to_system(video)) == pytest.approx(frobenius(video), rel=1e-15)
    small = np.arange(6.0).reshape(2, 3, 1)
    Xs = reorder_to_system(small)
    assert Xs.shape == (3, 1, 2)
    assert np.array_equal(Xs[:, 0, 0], [0, 1, 2]) and np.array_equal(Xs[:, 0, 1], [3, 4, 5])


def test_two_paths_agree(rng):
    video = rng.random((8, 8, 3))
    blur = BlurSpec.gaussian()
    H = blur_tensor(pad_kernel(blur.kernel, 8, 8))
    via_tprod = tprod(H, reorder_to_system(video))
    assert np.max(np.abs(reorder_to_system(blur_video(video, blur)) - via_tprod)) < 1e-12


def test_blur_preserves_frame_mean(rng):
    video = rng.random((16, 12, 3))
    blurred = blur_video(video, BlurSpec.gaussian())
    assert np.allclose(blurred.mean(axis=(0, 1)), video.mean(axis=(0, 1)), atol=1e-10)


@pytest.mark.parametrize("size", [32, 128])
def test_gaussian_blur_tensor_well_posed(size):
    H = blur_tensor(pad_kernel(gaussian_kernel(), size, size))
    smin, _ = bcirc_singular_extremes(H)
    assert smin > 1e-10


def test_pgm_roundtrip(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    assert path.read_bytes().startswith(b"P5")
    back = read_pgm(path)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
    (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n2 1\n255\n" + bytes([0, 255]))
    assert np.array_equal(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])
    with pytest.raises(ValueError):
        (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
        read_pgm(tmp_path / "bad.pgm")


def test_frames_directory_roundtrip(tmp_path):
    video = synthetic_frames(10, 12, 3)
    save_frames(tmp_path, video)
    back = load_frames(tmp_path)
    assert back.shape == (10, 12, 3)
    assert np.max(np.abs(back - video)) <= 0.5 / 255 + 1e-12


def test_psnr():
    a = np.zeros((4, 4))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert isinstance(psnr(a, a + 0.1), float)


def test_delta_kernel_recovers_original():
    video = synthetic_frames(8, 8, 2)
    res = run_deblur(video, BlurSpec.delta(), None, SolverConfig(Variant.TRK, 1.0, 400, seed=0))
    assert np.max(np.abs(res.recovered - video)) < 1e-8


def desk_plan(seed=0):
    # 6 corruptions from |N(3, 2)| confined to 3 row slices of the 32 x 4 x 32 system
    return plan_from_counts((32, 4, 32), 3, 6, MagnitudeLaw("abs_normal", 3, 2), seed)


@pytest.mark.parametrize("variant", [Variant.QTRK, Variant.MQTRK])
def test_desk_scale_deblur(variant):
    video = synthetic_frames(32, 32, 4)
    plan = desk_plan()
    assert len(plan.entries) == 6 and len(plan.uncorrupted_rows) == 29
    res = run_deblur(video, BlurSpec.gaussian(), plan, SolverConfig(variant, 0.99, 2000, seed=1))
    m = res.metrics
    assert res.record.rel_residual[-1] < res.record.rel_residual[0]
    assert m["final_rel_residual"] < m["baseline_rel_residual"]
    assert m["psnr_clean_rows"] - m["baseline_psnr_clean_rows"] >= 10


@pytest.mark.long
def test_full_scale_deblur():
    video = synthetic_frames(128, 128, 12)
    plan = plan_from_counts((128, 12, 128), 6, 15, MagnitudeLaw("abs_normal", 3, 2), 0)
    for variant in (Variant.QTRK, Variant.MQTRK):
        res = run_deblur(video, BlurSpec.gaussian(), plan, SolverConfig(variant, 0.99, 2000, seed=1,
                                                                         record_every=100))
        assert res.record.iterations[-1] == 2000
        assert res.record.rel_residual[-1] < res.record.rel_residual[0]


def test_plan_shape_mismatch():
    video = synthetic_frames(8, 8, 2)
    with pytest.raises(ShapeError):
        run_deblur(video, BlurSpec.delta(), CorruptionPlan((8, 2, 7), ()), SolverConfig(Variant.TRK, 1.0, 1))
