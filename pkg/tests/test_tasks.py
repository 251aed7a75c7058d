import numpy as np
import pytest

from vitcae import tasks
from vitcae.errors import ContractError, DimensionError

# every test here uses the shared 40-epoch run
pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def model(controlled_run):
    return controlled_run.model


@pytest.fixture(scope="module")
def heldout(controlled_run):
    return controlled_run.heldout.images


def _pixel_mask(mask, p, channels):
    return np.repeat(np.repeat(mask, p, axis=1), p, axis=2)[:, None].repeat(channels, axis=1)


def test_reconstruct_shape_range_determinism(model, heldout):
    out = tasks.reconstruct(model, heldout[:6])
    assert out.shape == heldout[:6].shape
    assert out.min() >= 0 and out.max() <= 1
    twin = tasks.reconstruct(model, np.stack([heldout[0], heldout[0]]))
    assert np.array_equal(twin[0], twin[1])
    assert np.array_equal(twin[0], out[0])
    assert np.array_equal(tasks.reconstruct(model, heldout[0]), out[:1])


def test_reconstruct_rejects_wrong_shape(model):
    with pytest.raises(DimensionError):
        tasks.reconstruct(model, np.zeros((2, 3, 8, 8)))


def test_reconstruct_mse_below_threshold(controlled_run, model, heldout):
    rec = tasks.reconstruct(model, heldout)
    assert np.mean((rec - heldout) ** 2) < 0.5 * controlled_run.epoch_logs[0]["heldout_mse"]


def test_inpaint_all_visible_equals_reconstruct(model, heldout):
    gh, gw = model.pc.grid
    assert np.array_equal(tasks.inpaint(model, heldout[:5], np.zeros((gh, gw), bool)),
                          tasks.reconstruct(model, heldout[:5]))


def test_inpaint_all_masked_ignores_content(model, heldout):
    gh, gw = model.pc.grid
    out = tasks.inpaint(model, heldout[:4], np.ones((gh, gw), bool))
    for k in range(1, 4):
        assert np.array_equal(out[0], out[k])


def test_inpaint_half_mask_beats_blind_baseline(model, heldout):
    gh, gw = model.pc.grid
    mask = np.random.default_rng(0).random((len(heldout), gh, gw)) < 0.5
    pm = _pixel_mask(mask, model.pc.patch_size, model.pc.channels)
    filled = tasks.inpaint(model, heldout, mask)
    blind = tasks.inpaint(model, heldout, np.ones((gh, gw), bool))
    assert np.mean((filled - heldout)[pm] ** 2) < np.mean((blind - heldout)[pm] ** 2)


def test_inpaint_mask_grid_mismatch(model, heldout):
    with pytest.raises(DimensionError, match="patch grid"):
        tasks.inpaint(model, heldout[:2], np.zeros((3, 3), bool))
    with pytest.raises(DimensionError):
        tasks.inpaint(model, heldout[:2], np.zeros((3, 4, 4), bool))


def test_generate_seeded_and_bounded(model):
    a, b = tasks.generate(model, 8, seed=5), tasks.generate(model, 8, seed=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, tasks.generate(model, 8, seed=6))
    assert a.min() >= 0 and a.max() <= 1
    assert tasks.generate(model, 0, seed=0).shape == (0,) + a.shape[1:]
    with pytest.raises(ContractError):
        tasks.generate(model, -1, seed=0)


def test_generate_moments_match_training_set(controlled_run, model):
    x = controlled_run.train_set.images
    g = tasks.generate(model, 256, seed=0)
    # mean intensity, with sigma the spread of per-image means in the training set
    assert abs(g.mean() - x.mean()) < 3 * x.mean(axis=(1, 2, 3)).std()
    # per-pixel mean map, with sigma the pooled pixel spread of the training set
    assert np.max(np.abs(g.mean(axis=0) - x.mean(axis=0))) < 3 * x.std()


def test_interpolate_endpoints_exact(model, heldout):
    frames = tasks.interpolate(model, heldout[0], heldout[1], 6)
    rec = tasks.reconstruct(model, heldout[:2])
    assert frames.shape == (6,) + heldout.shape[1:]
    assert np.array_equal(frames[0], rec[0]) and np.array_equal(frames[-1], rec[1])


def test_interpolate_same_image_constant(model, heldout):
    frames = tasks.interpolate(model, heldout[2], heldout[2], 5)
    for f in frames[1:]:
        assert np.array_equal(f, frames[0])


def test_interpolate_frames_smooth(model, heldout):
    frames = tasks.interpolate(model, heldout[0], heldout[1], 8)
    adjacent = np.mean((frames[1:] - frames[:-1]) ** 2, axis=(1, 2, 3))
    assert adjacent.max() <= np.mean((frames[0] - frames[-1]) ** 2)


def test_interpolate_contracts(model, heldout):
    with pytest.raises(ContractError):
        tasks.interpolate(model, heldout[0], heldout[1], 1)
    with pytest.raises(DimensionError):
        tasks.interpolate(model, heldout[:2], heldout[1], 3)


def test_load_model_from_checkpoint(model, controlled_run, tmp_path, heldout):
    path = controlled_run.save_checkpoint(tmp_path / "c.npz")
    again = tasks.load_model(path)
    assert np.array_equal(tasks.reconstruct(again, heldout[:3]), tasks.reconstruct(model, heldout[:3]))
