import itertools

import numpy as np
import pytest
from PIL import Image

from glbm.dataset import (Batch, FrameStore, load_clip, make_batches, scan_dataset,
                          scan_scene)


def _write_scene(root, name, count, size=(12, 16), value=None, layout="sbm-style"):
    d = root / name / "input" if layout == "sbm-style" else root / name
    d.mkdir(parents=True)
    rng = np.random.default_rng(count)
    for i in range(count):
        img = np.full((*size, 3), value, np.uint8) if value is not None else \
            rng.integers(0, 256, size=(*size, 3), dtype=np.uint8)
        Image.fromarray(img).save(d / f"{i:06d}.png")
    return d


def test_scan_counts(tmp_path):
    _write_scene(tmp_path, "b", 7)
    _write_scene(tmp_path, "a", 5)
    scenes = scan_dataset(tmp_path)
    assert [s.scene_id for s in scenes] == ["a", "b"]
    assert [s.frame_count for s in scenes] == [5, 7]
    assert scenes[0].resolution == (12, 16)
    assert list(scenes[1].frame_paths) == sorted(scenes[1].frame_paths)


def test_scan_flat_layout(tmp_path):
    _write_scene(tmp_path, "x", 3, layout="flat")
    scenes = scan_dataset(tmp_path, layout="flat")
    assert len(scenes) == 1 and scenes[0].frame_count == 3


def test_scan_max_frames(tmp_path):
    _write_scene(tmp_path, "a", 6)
    assert scan_dataset(tmp_path, max_frames=4)[0].frame_count == 4


def test_empty_root(tmp_path):
    assert scan_dataset(tmp_path) == []


def test_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        scan_dataset(tmp_path / "nope")
    with pytest.raises(ValueError):
        scan_dataset(tmp_path, layout="zip")


def test_unreadable_frame_skipped(tmp_path):
    d = _write_scene(tmp_path, "a", 9)
    (d / "000004_.png").write_bytes(b"definitely not a png")
    with pytest.warns(RuntimeWarning, match="unreadable"):
        scene = scan_scene(tmp_path / "a")
    assert scene.frame_count == 9


def test_scene_without_frames_skipped(tmp_path):
    (tmp_path / "a" / "input").mkdir(parents=True)
    _write_scene(tmp_path, "b", 2)
    with pytest.warns(RuntimeWarning):
        scenes = scan_dataset(tmp_path)
    assert [s.scene_id for s in scenes] == ["b"]


@pytest.mark.parametrize("value,expected", [(0, 0.0), (255, 1.0)])
def test_constant_clips(tmp_path, value, expected):
    _write_scene(tmp_path, "a", 3, value=value)
    clip = load_clip(scan_dataset(tmp_path)[0], 0, 3, target_size=(8, 8))
    assert clip.frames.shape == (3, 8, 8, 3)
    assert clip.c == 3 and clip.scene_id == "a" and clip.start_index == 0
    np.testing.assert_array_equal(clip.frames, expected)


def test_checkerboard_mean_preserved(tmp_path):
    d = tmp_path / "a" / "input"
    d.mkdir(parents=True)
    board = ((np.indices((64, 64)).sum(axis=0) % 2) * 255).astype(np.uint8)
    Image.fromarray(np.stack([board] * 3, axis=-1)).save(d / "000000.png")
    clip = load_clip(scan_dataset(tmp_path)[0], 0, 1, target_size=(32, 32))
    assert abs(clip.frames.mean() - board.mean() / 255.0) <= 0.01


def test_clip_window_checked(tmp_path):
    _write_scene(tmp_path, "a", 4)
    scene = scan_dataset(tmp_path)[0]
    with pytest.raises(IndexError):
        load_clip(scene, 2, 3)
    with pytest.raises(IndexError):
        load_clip(scene, -1, 2)


def test_batch_of_three_forty_frame_clips(tmp_path):
    _write_scene(tmp_path, "a", 45, size=(8, 8))
    _write_scene(tmp_path, "b", 50, size=(8, 8))
    scenes = scan_dataset(tmp_path)
    batch = next(make_batches(scenes, 3, 40, seed=0, target_size=(8, 8)))
    assert isinstance(batch, Batch)
    assert batch.clique_sizes == [40, 40, 40]
    assert batch.frames.shape[0] == 120


def test_single_frame_batch(tmp_path):
    _write_scene(tmp_path, "a", 2, size=(8, 8))
    batch = next(make_batches(scan_dataset(tmp_path), 1, 1, target_size=(8, 8)))
    assert batch.clique_sizes == [1]


def test_batches_deterministic_and_within_scene(tmp_path):
    _write_scene(tmp_path, "a", 12, size=(8, 8))
    _write_scene(tmp_path, "b", 20, size=(8, 8))
    scenes = scan_dataset(tmp_path)
    store = FrameStore(scenes, (8, 8))
    run = lambda seed: [b.windows for b in make_batches(scenes, 2, 10, seed=seed, store=store, num_batches=6)]
    assert run(5) == run(5)
    assert run(5) != run(6)
    counts = {s.scene_id: s.frame_count for s in scenes}
    for scene_id, start in itertools.chain.from_iterable(run(5)):
        assert 0 <= start and start + 10 <= counts[scene_id]


def test_store_and_disk_batches_agree(tmp_path):
    _write_scene(tmp_path, "a", 6, size=(8, 8))
    scenes = scan_dataset(tmp_path)
    disk = next(make_batches(scenes, 2, 3, seed=1, target_size=(8, 8)))
    cached = next(make_batches(scenes, 2, 3, seed=1, store=FrameStore(scenes, (8, 8))))
    np.testing.assert_array_equal(disk.frames, cached.frames)


def test_no_scene_long_enough(tmp_path):
    _write_scene(tmp_path, "a", 3, size=(8, 8))
    with pytest.raises(ValueError):
        next(make_batches(scan_dataset(tmp_path), 1, 5, target_size=(8, 8)))
