"""Adam optimizer behavior."""

import numpy as np
import pytest

from slimformer import Adam, Tensor, build_model, generate_task, spawn_rng
from slimformer.tasks import TaskSpec
from slimformer.training import train_epochs


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        opt = Adam([p], lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        assert opt.step_count == 1

    def test_single_step_matches_hand_computed_update(self):
        p = Tensor(np.array([3.0]), requires_grad=True)
        p.grad = np.array([0.5])
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        opt.step()
        m_hat = (1 - b1) * 0.5 / (1 - b1)
        v_hat = (1 - b2) * 0.25 / (1 - b2)
        expected = 3.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
        np.testing.assert_allclose(p.data, [expected], rtol=0, atol=1e-15)

    def test_missing_grads_raise(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(RuntimeError, match="no gradient"):
            Adam([p]).step()

    def test_zero_grad_clears(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([1.0])
        opt = Adam([p])
        opt.zero_grad()
        assert p.grad is None


class TestDeterminism:
    def test_identical_runs_identical_parameter_bytes(self, tiny_config):
        data = generate_task(TaskSpec("majority_classification", vocab_size=5,
                                      context_len=8, train_size=64, seed=9))

        def run():
            model = build_model(tiny_config, 3)
            train_epochs(model, None, data.train, 2, spawn_rng(3, 0), lr=0.01)
            return b"".join(t.data.tobytes() for _, t in model.named_parameters())

        assert run() == run()
