import json
import os

import numpy as np
import pytest
from PIL import Image

from feat_video.data import SyntheticVideoSpec, gen_dataset
from feat_video.export import to_uint8, write_sample
from feat_video.validation import check_positive_int, check_timesteps, check_video_array


def _centroid(frame):
    w = frame[0] + 1.0  # background -1 -> 0
    yy, xx = np.mgrid[: w.shape[0], : w.shape[1]]
    return np.array([(w * yy).sum(), (w * xx).sum()]) / w.sum()


def test_same_seed_bit_identical():
    spec = SyntheticVideoSpec(seed=3)
    a, b = gen_dataset(spec, 4), gen_dataset(spec, 4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], gen_dataset(SyntheticVideoSpec(seed=4), 1)[0])


def test_clip_depends_only_on_index():
    spec = SyntheticVideoSpec(seed=1)
    assert np.array_equal(gen_dataset(spec, 2)[1], gen_dataset(spec, 5)[1])


def test_range_and_shape():
    clips = gen_dataset(SyntheticVideoSpec(channels=3, frames=5, seed=2), 3)
    assert clips[0].shape == (5, 3, 32, 32) and clips[0].dtype == np.float32
    assert all(c.min() >= -1 and c.max() <= 1 for c in clips)


def test_zero_velocity_is_static():
    clip = gen_dataset(SyntheticVideoSpec(speed=(0.0, 0.0), seed=5), 1)[0]
    assert all(np.array_equal(clip[0], f) for f in clip)


def test_centroid_moves_at_blob_velocity():
    # one small blob well inside the frame: the intensity centroid shifts by the velocity
    spec = SyntheticVideoSpec(frames=4, height=64, width=64, n_blobs=1, speed=(1.5, 1.5), radius=(3, 3), seed=0)
    for clip in gen_dataset(spec, 6):
        c = np.array([_centroid(f) for f in clip])
        steps = np.diff(c, axis=0)
        speed = np.linalg.norm(steps, axis=1)
        # skip clips whose blob reflects off a wall during the window
        if np.allclose(steps, steps[0], atol=1e-3):
            np.testing.assert_allclose(speed, 1.5, atol=1e-3)


def test_reflection_keeps_blob_inside():
    spec = SyntheticVideoSpec(frames=60, n_blobs=1, speed=(3, 3), radius=(4, 4), seed=9)
    clip = gen_dataset(spec, 1)[0]
    c = np.array([_centroid(f) for f in clip])
    assert (c >= 4 - 0.5).all() and (c <= 31 - 4 + 0.5).all()


def test_degenerate_spec_rejected():
    with pytest.raises(ValueError):
        gen_dataset(SyntheticVideoSpec(radius=(3, 16)), 1)
    with pytest.raises(ValueError):
        gen_dataset(SyntheticVideoSpec(speed=(2, 1)), 1)


def test_to_uint8():
    np.testing.assert_array_equal(to_uint8(np.array([-2.0, -1.0, 0.0, 1.0, 3.0])), [0, 0, 128, 255, 255])


@pytest.mark.parametrize("channels,ext", [(1, ".pgm"), (3, ".ppm"), (4, ".pgm")])
def test_write_sample(tmp_path, channels, ext):
    clip = gen_dataset(SyntheticVideoSpec(channels=channels, frames=2, height=8, width=8, radius=(1, 2)), 1)[0]
    manifest = write_sample(clip, str(tmp_path), seed=7, fingerprint="abc", prefix="s")
    on_disk = json.loads((tmp_path / "s_manifest.json").read_text())
    assert on_disk == manifest
    assert manifest["frames"] == 2 and manifest["shape"] == [2, channels, 8, 8]
    assert manifest["seed"] == 7 and manifest["checkpoint_fingerprint"] == "abc"
    assert len(manifest["files"]) == 2 * (channels if channels not in (1, 3) else 1)
    first = Image.open(os.path.join(tmp_path, manifest["files"][0]))
    assert manifest["files"][0].endswith(ext)
    if channels == 3:
        np.testing.assert_array_equal(np.asarray(first), to_uint8(clip[0].transpose(1, 2, 0)))
    else:
        np.testing.assert_array_equal(np.asarray(first), to_uint8(clip[0, 0]))


def test_check_video_array():
    X = np.zeros((2, 3, 1, 4, 4))
    assert check_video_array(X).dtype == np.float32
    assert check_video_array(X[0], allow_single=True).shape == (1, 3, 1, 4, 4)
    with pytest.raises(ValueError):
        check_video_array(X[0])
    with pytest.raises(ValueError):
        check_video_array(X, expected_shape=(3, 1, 8, 8))
    X[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        check_video_array(X)


def test_check_timesteps_and_ints():
    np.testing.assert_array_equal(check_timesteps(3, 2, 10), [3, 3])
    np.testing.assert_array_equal(check_timesteps([1.0, 2.0], 2, 10), [1, 2])
    for bad in (0, 11, 2.5):
        with pytest.raises(ValueError):
            check_timesteps(bad, 1, 10)
    assert check_positive_int(np.int64(3), "n") == 3
    for bad in (0, True, 1.0):
        with pytest.raises(ValueError):
            check_positive_int(bad, "n")
