"""Patch classifier, surrogate loss/gradient, and the training loop."""

import math

import numpy as np
import pytest

from miatt_forge import (
    AssessmentFailedError,
    EmptyFactsError,
    GenParams,
    Instance,
    MetricSet,
    MiattSet,
    Model,
    PartialLabeling,
    SceneParams,
    TrainConfig,
    WeightMismatchError,
    check_stop,
    evaluate,
    forward,
    generate_miatts_abductive,
    generate_synthetic_scene,
    init_model,
    surrogate_loss_and_grad,
    train_uttl,
)


def zero_model(patch_radius=1, hidden_width=3) -> Model:
    k = (2 * patch_radius + 1) ** 2
    return Model(
        patch_radius,
        hidden_width,
        np.zeros((hidden_width, k)),
        np.zeros(hidden_width),
        np.zeros(hidden_width),
        0.0,
    )


def scalar_forward(model: Model, instance: Instance) -> np.ndarray:
    """Independent plain-loop re-implementation of the forward pass."""
    h, w = instance.height, instance.width
    r = model.patch_radius
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            patch = []
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    patch.append(instance.pixels[yy, xx])
            acts = []
            for j in range(model.hidden_width):
                z = model.bias_in[j]
                for k, v in enumerate(patch):
                    z += model.weights_in[j, k] * v
                acts.append(math.tanh(z))
            logit = model.bias_out
            for j, a in enumerate(acts):
                logit += model.weights_out[j] * a
            out[y, x] = 1.0 / (1.0 + math.exp(-logit))
    return out


def pack(model: Model) -> np.ndarray:
    return np.concatenate(
        [
            model.weights_in.ravel(),
            model.bias_in,
            model.weights_out,
            [model.bias_out],
        ]
    )


def unpack(theta: np.ndarray, patch_radius: int, hidden_width: int) -> Model:
    k = (2 * patch_radius + 1) ** 2
    i = 0
    w_in = theta[i : i + hidden_width * k].reshape(hidden_width, k)
    i += hidden_width * k
    b_in = theta[i : i + hidden_width]
    i += hidden_width
    w_out = theta[i : i + hidden_width]
    i += hidden_width
    b_out = float(theta[i])
    return Model(patch_radius, hidden_width, w_in, b_in, w_out, b_out)


def random_case(rng: np.random.Generator, size=8, n_targets=3, patch_radius=1, hidden=3):
    instance = Instance(rng.random((size, size)))
    full = rng.integers(1, 3, size=size * size, dtype=np.int8)
    targets = []
    for _ in range(n_targets):
        keep = rng.random(size * size) < rng.uniform(0.3, 0.7)
        if keep.all():
            keep[rng.integers(0, keep.size)] = False
        if not keep.any():
            keep[rng.integers(0, keep.size)] = True
        targets.append(PartialLabeling(np.where(keep, full, np.int8(0)).reshape(size, size)))
    m = MiattSet(tuple(targets))
    raw = rng.random(n_targets) + 0.1
    alpha = tuple(float(a) for a in raw / raw.sum())
    theta = rng.normal(scale=0.5, size=pack(zero_model(patch_radius, hidden)).size)
    model = unpack(theta, patch_radius, hidden)
    return model, instance, m, alpha


def fd_gradient(model, instance, m, alpha, step=1e-5):
    """Central finite differences over every parameter."""
    theta = pack(model)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        plus[i] += step
        minus = theta.copy()
        minus[i] -= step
        lp, _ = surrogate_loss_and_grad(
            unpack(plus, model.patch_radius, model.hidden_width), instance, m, alpha
        )
        lm, _ = surrogate_loss_and_grad(
            unpack(minus, model.patch_radius, model.hidden_width), instance, m, alpha
        )
        grad[i] = (lp - lm) / (2 * step)
    return grad


class TestForward:
    def test_zero_model_outputs_half(self):
        instance = Instance(np.random.default_rng(0).random((5, 7)))
        probs = forward(zero_model(), instance).probs
        assert (probs == 0.5).all()

    def test_constant_image_constant_output(self):
        instance = Instance(np.full((6, 6), 0.37))
        model = init_model(2, 4, seed=3)
        probs = forward(model, instance).probs
        assert np.allclose(probs, probs[0, 0])

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(14)
        instance = Instance(rng.random((8, 8)))
        model = init_model(1, 3, seed=21)
        expected = scalar_forward(model, instance)
        got = forward(model, instance).probs
        assert np.allclose(got, expected, atol=1e-12)


class TestSurrogateLoss:
    def test_single_pixel_analytic_value(self):
        # 1x1 instance, both targets assert the pixel as Object, prob = 0.5
        instance = Instance(np.array([[0.4]]))
        t = PartialLabeling.from_rows(["O"])
        m = MiattSet((t, t))
        loss, _ = surrogate_loss_and_grad(zero_model(), instance, m, (0.5, 0.5))
        assert loss == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_confident_match_has_near_zero_loss(self):
        rng = np.random.default_rng(5)
        _, instance, m, alpha = random_case(rng)
        # drive the output bias very positive/negative per pixel is impossible
        # with one bias, so use a set where every fact is Object
        full = PartialLabeling.from_rows(["OO", "OU"])
        m = MiattSet((full, PartialLabeling.from_rows(["OU", "UO"])))
        inst = Instance(np.full((2, 2), 0.5))
        confident = Model(0, 1, np.zeros((1, 1)), np.zeros(1), np.zeros(1), 50.0)
        loss, _ = surrogate_loss_and_grad(confident, inst, m, (0.5, 0.5))
        assert 0.0 <= loss <= -math.log(1 - 1e-7) * 1.01

    def test_loss_non_negative(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            model, instance, m, alpha = random_case(rng)
            loss, _ = surrogate_loss_and_grad(model, instance, m, alpha)
            assert loss >= 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            model, instance, m, alpha = random_case(rng)
            _, grad = surrogate_loss_and_grad(model, instance, m, alpha)
            analytic = np.concatenate(
                [grad.weights_in.ravel(), grad.bias_in, grad.weights_out, [grad.bias_out]]
            )
            numeric = fd_gradient(model, instance, m, alpha)
            denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
            assert (np.abs(analytic - numeric) / denom).max() < 1e-4

    def test_alpha_validation(self):
        rng = np.random.default_rng(8)
        model, instance, m, _ = random_case(rng, n_targets=3)
        with pytest.raises(WeightMismatchError):
            surrogate_loss_and_grad(model, instance, m, (0.5, 0.5))
        with pytest.raises(WeightMismatchError):
            surrogate_loss_and_grad(model, instance, m, (0.5, 0.4, 0.2))

    def test_empty_facts_rejected(self):
        instance = Instance(np.full((2, 2), 0.5))
        empty = PartialLabeling.filled(2, 2, 0)
        some = PartialLabeling.from_rows(["OU", "UU"])
        with pytest.raises(EmptyFactsError):
            surrogate_loss_and_grad(zero_model(), instance, MiattSet((some, empty)), (0.5, 0.5))

    def test_conflicting_set_rejected(self):
        instance = Instance(np.full((2, 2), 0.5))
        a = PartialLabeling.from_rows(["OU", "UU"])
        b = PartialLabeling.from_rows(["NU", "UU"])
        with pytest.raises(AssessmentFailedError):
            surrogate_loss_and_grad(zero_model(), instance, MiattSet((a, b)), (0.5, 0.5))

    def test_alpha_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        model, instance, m, alpha = random_case(rng, n_targets=4)
        perm = rng.permutation(4)
        m2 = MiattSet(tuple(m.targets[i] for i in perm))
        alpha2 = tuple(alpha[i] for i in perm)
        l1, g1 = surrogate_loss_and_grad(model, instance, m, alpha)
        l2, g2 = surrogate_loss_and_grad(model, instance, m2, alpha2)
        assert l1 == pytest.approx(l2, rel=1e-12)
        assert np.allclose(g1.weights_in, g2.weights_in, atol=1e-12)
        assert g1.bias_out == pytest.approx(g2.bias_out, abs=1e-12)

    def test_output_layer_descent_step_decreases_loss(self):
        # with the hidden layer frozen the loss is convex in the output
        # parameters, so a small enough step along -grad cannot increase it
        rng = np.random.default_rng(10)
        for _ in range(5):
            model, instance, m, alpha = random_case(rng)
            loss, grad = surrogate_loss_and_grad(model, instance, m, alpha)
            direction = np.concatenate([grad.weights_out, [grad.bias_out]])
            if np.linalg.norm(direction) < 1e-12:
                continue
            decreased = False
            for eta in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
                stepped = Model(
                    model.patch_radius,
                    model.hidden_width,
                    model.weights_in,
                    model.bias_in,
                    model.weights_out - eta * grad.weights_out,
                    model.bias_out - eta * grad.bias_out,
                )
                new_loss, _ = surrogate_loss_and_grad(stepped, instance, m, alpha)
                if new_loss <= loss + 1e-15:
                    decreased = True
                    break
            assert decreased


def small_training_setup(seed=3):
    scene = SceneParams(width=24, height=24, lane_half_width=3, lane_angle=0.3,
                        lane_offset=12, noise_sigma=0.02, seed=seed)
    instance, reference = generate_synthetic_scene(scene)
    m = generate_miatts_abductive(reference, GenParams(seed=seed))
    cfg = TrainConfig(max_epochs=400, eval_every=10, patch_radius=1, hidden_width=8, seed=seed)
    return instance, m, cfg


class TestTrainUttl:
    def test_reaches_stop_criteria_on_small_scene(self):
        instance, m, cfg = small_training_setup()
        model, history = train_uttl([(instance, m)], cfg)
        assert history.selected_epoch is not None
        record = history.record_at(history.selected_epoch)
        assert check_stop(record.metrics, cfg)

    def test_determinism(self):
        instance, m, cfg = small_training_setup()
        m1, h1 = train_uttl([(instance, m)], cfg)
        m2, h2 = train_uttl([(instance, m)], cfg)
        assert m1 == m2
        assert h1.selected_epoch == h2.selected_epoch
        assert [r.loss for r in h1.records] == [r.loss for r in h2.records]

    def test_checkpoint_reproduces_selected_metrics(self):
        instance, m, cfg = small_training_setup()
        model, history = train_uttl([(instance, m)], cfg)
        record = history.record_at(history.selected_epoch)
        counts, metrics = evaluate(forward(model, instance), m)
        assert counts == record.counts
        assert metrics == record.metrics

    def test_budget_exhaustion_selects_min_lerrors(self):
        instance, m, cfg = small_training_setup()
        cfg = TrainConfig(max_epochs=3, eval_every=1, patch_radius=1, hidden_width=8, seed=3)
        model, history = train_uttl([(instance, m)], cfg)
        assert history.selected_epoch is not None
        best = min(
            history.records,
            key=lambda r: (r.metrics.lerrors, -(r.metrics.liou or -1), r.epoch),
        )
        assert history.selected_epoch == best.epoch

    def test_epochs_strictly_increasing_with_baseline_record(self):
        instance, m, cfg = small_training_setup()
        cfg = TrainConfig(max_epochs=25, eval_every=10, patch_radius=1, hidden_width=8, seed=3)
        _, history = train_uttl([(instance, m)], cfg)
        epochs = [r.epoch for r in history.records]
        assert epochs[0] == 1
        assert epochs == sorted(set(epochs))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_uttl([], TrainConfig())

    def test_failing_set_rejected(self):
        instance = Instance(np.full((2, 2), 0.5))
        single = MiattSet((PartialLabeling.from_rows(["OU", "UU"]),))
        with pytest.raises(AssessmentFailedError):
            train_uttl([(instance, single)], TrainConfig())


class TestCheckStop:
    def truth_table_cases(self):
        cfg = TrainConfig()
        return cfg

    def make_metrics(self, liou, lerrors) -> MetricSet:
        return MetricSet(None, None, None, None, liou, lerrors)

    def test_paper_point_passes(self):
        assert check_stop(self.make_metrics(1.0, 53), TrainConfig()) is True

    def test_lerrors_bound_violated(self):
        assert check_stop(self.make_metrics(0.9995, 120), TrainConfig()) is False

    def test_liou_bound_violated(self):
        assert check_stop(self.make_metrics(0.998, 50), TrainConfig()) is False

    def test_undefined_liou_fails(self):
        assert check_stop(self.make_metrics(None, 0), TrainConfig()) is False

    def test_bounds_are_strict(self):
        assert check_stop(self.make_metrics(0.999, 50), TrainConfig()) is False
        assert check_stop(self.make_metrics(1.0, 100), TrainConfig()) is False
