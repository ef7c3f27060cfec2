import numpy as np
import pytest

from vcot_grasp.codec import decode_box, decode_grasp, BoxTokens, GraspTokens
from vcot_grasp.geometry import grasp_success
from vcot_grasp.model.network import ModelConfig, forward, init_params
from vcot_grasp.model.train import TrainConfig, make_examples, train, train_steps
from vcot_grasp.scenegen import DatasetConfig, gen_dataset
from vcot_grasp.vcot import from_crop_frame, square_expand

TINY = ModelConfig(image_side=32, patch=8, d_model=16, n_layers=1, n_heads=2, codebook_dim=32, seed=1)


@pytest.fixture(scope="module")
def data32():
    return gen_dataset(DatasetConfig(n_scenes=24, n_test_seen=4, n_test_unseen=4, image_side=32, seed=8))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(warmup_ratio=0.0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_ratio=1.0)
    with pytest.raises(ValueError):
        TrainConfig(schedule="step")
    d = TrainConfig().to_dict()
    assert d["lr"] == 3e-4 and d["batch"] == 32 and d["warmup_ratio"] == 0.03 and d["lam"] == 1.0


def test_examples_one_per_target(data32):
    train_scenes = [s for s in data32 if s.split == "train"]
    ex = make_examples(train_scenes, 32, vcot=True)
    assert len(ex) == sum(len(s.targets()) for s in train_scenes)
    assert ex.crops.shape == ex.images.shape
    assert make_examples(train_scenes, 32, vcot=False).crops is None


def test_example_labels_decode_to_annotations(data32):
    scene = data32[0]
    ex = make_examples([scene], 32, vcot=True)
    for i, obj in enumerate(scene.targets()):
        box = decode_box(BoxTokens(tuple(ex.box_tokens[i])), 32, 32)
        assert np.allclose(box.as_list(), obj.bbox.as_list(), atol=32 / 2048 + 1e-9)
        spec = square_expand(obj.bbox, 32, 32, out_side=32)
        g = from_crop_frame(decode_grasp(GraspTokens(tuple(ex.grasp_tokens[i])), 32, 32), spec)
        assert grasp_success(g, obj.grasps)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty dataset"):
        train(TINY, TrainConfig(epochs=1), [])


def test_resolution_mismatch_rejected(data32):
    with pytest.raises(ValueError):
        make_examples(data32, 64)


def test_training_deterministic_and_descends(data32):
    tc = TrainConfig(epochs=2, batch=8, lr=3e-3)
    p1, rows1 = train(TINY, tc, data32)
    p2, rows2 = train(TINY, tc, data32)
    assert rows1 == rows2
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert [r["epoch"] for r in rows1] == [1, 2]
    assert set(rows1[0]) >= {"loss", "grasp_loss", "box_loss", "lr", "step"}
    ex = make_examples([s for s in data32 if s.split == "train"], 32)
    batch = ex.batch(np.arange(len(ex)))
    init_loss = forward(init_params(TINY), TINY, batch)[0]["total"]
    assert rows1[0]["loss"] < init_loss
    assert forward(p1, TINY, batch)[0]["total"] < init_loss


def test_epoch_callback_metrics(data32):
    seen = []

    def cb(epoch, params):
        seen.append(epoch)
        return {"probe": epoch * 10}

    _, rows = train(TINY, TrainConfig(epochs=2, batch=16), data32, on_epoch=cb)
    assert seen == [1, 2]
    assert [r["probe"] for r in rows] == [10, 20]


def test_single_turn_training_runs(data32):
    _, rows = train(TINY, TrainConfig(epochs=1, batch=16, vcot=False), data32)
    assert np.isfinite(rows[0]["loss"])


def test_regression_head_trains(data32):
    cfg = ModelConfig(**{**TINY.to_dict(), "head_kind": "regression"})
    _, rows = train(cfg, TrainConfig(epochs=1, batch=16), data32)
    assert np.isfinite(rows[0]["grasp_loss"])


def test_overfit_small_batch(data32):
    ex = make_examples([s for s in data32 if s.split == "train"], 32)
    batch = ex.batch(np.arange(4))
    hist = train_steps(init_params(TINY), TINY, batch, steps=300, lr=1e-2)
    assert hist[0]["slot_ce_sum"] == pytest.approx(9 * np.log(1024), rel=1e-12)
    assert hist[-1]["slot_ce_sum"] < 0.5
