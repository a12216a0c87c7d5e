import numpy as np
import pytest
import torch

from bronchograde.classify.model import (
    LABEL_ORDER,
    ClassifierConfig,
    activations_and_gradients,
    build_classifier,
    extract_features,
    finetune,
    load_classifier,
    logits,
    predict,
    predict_batch,
    predict_proba,
    save_classifier,
    trainable_parameter_count,
)
from bronchograde.data_model import Dataset, ImageRecord
from bronchograde.synthetic import six_class_shapes


def cfg(**kw):
    base = dict(pretrained=False, image_size=32, epochs=2, batch_size=8, lr=1e-3, trainable_scope="full")
    base.update(kw)
    return ClassifierConfig(**base)


@pytest.fixture(scope="module")
def toy():
    return six_class_shapes(n=48, seed=1)


@pytest.fixture(scope="module")
def trained(toy):
    return finetune(build_classifier(cfg()), toy)[0]


def test_label_order_is_grade_order():
    assert LABEL_ORDER == (1, 2, 3, 4, 5, 6)


def test_config_validation():
    for bad in (dict(backbone="resnet"), dict(trainable_scope="some"), dict(epochs=0), dict(lr=0)):
        with pytest.raises(ValueError):
            cfg(**bad)


def test_head_only_freezes_everything_else(toy):
    model = build_classifier(cfg(trainable_scope="head_only"))
    before = {k: v.clone() for k, v in model.net.state_dict().items() if not k.startswith("head.")}
    assert trainable_parameter_count(model) == sum(p.numel() for p in model.net.head.parameters())
    finetune(model, toy)
    after = model.net.state_dict()
    assert all(torch.equal(v, after[k]) for k, v in before.items())


def test_last_block_scope_counts():
    full = trainable_parameter_count(build_classifier(cfg()))
    block = trainable_parameter_count(build_classifier(cfg(trainable_scope="last_block_and_head")))
    head = trainable_parameter_count(build_classifier(cfg(trainable_scope="head_only")))
    assert head < block < full


def test_probabilities_sum_to_one(trained, toy):
    probs = predict_proba(trained, toy.images())
    assert probs.shape == (len(toy), 6)
    assert np.allclose(probs.sum(1), 1.0, atol=1e-9) and np.all(probs >= 0)
    grade, p = predict(trained, toy[0].pixels)
    assert grade.value in LABEL_ORDER and p.shape == (6,)


def test_ties_go_to_lower_grade(trained, monkeypatch):
    import bronchograde.classify.model as mod

    monkeypatch.setattr(mod, "predict_proba", lambda m, x: np.array([[0.1, 0.3, 0.3, 0.1, 0.1, 0.1]]))
    assert predict_batch(trained, np.zeros((1, 32, 32, 3), np.uint8))[0].tolist() == [2]


def test_input_validation(trained):
    with pytest.raises(ValueError):
        predict_proba(trained, np.zeros((1, 16, 16, 3), np.uint8))
    with pytest.raises(ValueError):
        predict(trained, np.zeros((2, 32, 32, 3), np.uint8))
    with pytest.raises(ValueError):
        finetune(build_classifier(cfg()), Dataset())


def test_features_are_deterministic_with_fixed_dimension(trained, toy):
    a = extract_features(trained, toy.images()[:5])
    b = extract_features(trained, toy.images()[:5])
    assert a.shape == (5, trained.net.feature_dim) and np.array_equal(a, b)
    assert extract_features(trained, toy[0].pixels).shape == (trained.net.feature_dim,)
    with pytest.raises(RuntimeError):
        extract_features(build_classifier(cfg()), toy.images()[:1])


def test_head_is_linear_in_features(trained, toy):
    imgs = toy.images()[:4]
    feats = torch.from_numpy(extract_features(trained, imgs)).float()
    with torch.no_grad():
        want = (feats @ trained.net.head.weight.T + trained.net.head.bias).double().numpy()
    assert np.allclose(logits(trained, imgs), want, atol=1e-4)


def test_activation_gradient_matches_finite_difference(trained, toy):
    """Perturb one activation of the Grad-CAM layer and compare the logit change."""
    img = toy[0].pixels
    act, grad = activations_and_gradients(trained, img, 3)
    assert act.shape == grad.shape and act.ndim == 3
    net = trained.net.double()
    try:
        x = torch.from_numpy(img[None].astype(np.float64)).permute(0, 3, 1, 2) / 127.5 - 1.0
        k, i, j = np.unravel_index(np.argmax(np.abs(grad)), grad.shape)
        h = 1e-4

        def logit_with(delta):
            def bump(_m, _inp, out):
                out = out.clone()
                out[0, k, i, j] += delta
                return out

            handle = net.cam_layer.register_forward_hook(bump)
            try:
                with torch.no_grad():
                    return net(x)[0, 2].item()
            finally:
                handle.remove()

        fd = (logit_with(h) - logit_with(-h)) / (2 * h)
        assert fd == pytest.approx(grad[k, i, j], rel=1e-3, abs=1e-6)
    finally:
        net.float()


def test_gradient_hook_rejects_bad_class(trained, toy):
    with pytest.raises(ValueError):
        activations_and_gradients(trained, toy[0].pixels, 0)


def test_save_load_roundtrip(tmp_path, trained, toy):
    save_classifier(trained, tmp_path / "m.pt", extra={"method": "original"})
    back = load_classifier(tmp_path / "m.pt")
    imgs = toy.images()[:6]
    assert np.allclose(predict_proba(back, imgs), predict_proba(trained, imgs), atol=1e-6)
    assert back.train_hashes == trained.train_hashes and back.extra == {"method": "original"}


def test_single_class_training_warns_but_runs():
    rng = np.random.default_rng(0)
    ds = Dataset(tuple(ImageRecord(f"p{i}", rng.integers(0, 256, (32, 32, 3), dtype=np.uint8), 3) for i in range(6)))
    with pytest.warns(UserWarning, match="absent"):
        model, hist = finetune(build_classifier(cfg(epochs=1)), ds)
    assert len(hist) == 1 and model.trained


def test_training_is_deterministic(toy):
    a = finetune(build_classifier(cfg(epochs=1)), toy)[1]
    b = finetune(build_classifier(cfg(epochs=1)), toy)[1]
    assert a[0]["train_loss"] == b[0]["train_loss"]


def test_vit_backbone_builds_and_predicts(toy):
    model, _ = finetune(build_classifier(cfg(backbone="vit", epochs=1)), toy)
    assert predict_proba(model, toy.images()[:2]).shape == (2, 6)
