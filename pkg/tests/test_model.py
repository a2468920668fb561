import logging
import math

import numpy as np
import pytest
import torch

from gamformer import numkernel as nk
from gamformer.model import GAMformerNet, ModelConfig, estimate_shapes, pool_classes
from gamformer.priors import PriorConfig, sample_task
from gamformer.training import prepare_task, task_loss

SMALL = ModelConfig(n_bins=8, d_model=16, n_heads=2, n_layers=2, max_classes=3)


def _net(cfg=SMALL, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return GAMformerNet(cfg).to(dtype).eval()


def _context(n=24, p=3, m=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = np.arange(n) % m
    rng.shuffle(y)
    return X, y


class TestStages:
    def test_embedding_oracle(self):
        net = _net()
        idx = torch.tensor([[0, 7], [3, 3]])
        labels = torch.tensor([1, 0])
        out = net.embed_tokens(idx, labels)
        for r in range(2):
            for i in range(2):
                expected = net.embed_w[:, idx[r, i]] + net.embed_b + net.label_table[labels[r]]
                torch.testing.assert_close(out[r, i], expected)

    def test_label_beyond_table_rejected(self):
        net = _net()
        with pytest.raises(ValueError):
            net.embed_tokens(torch.zeros(2, 1, dtype=torch.long), torch.tensor([0, 3]))

    def test_pooling_oracle(self):
        h = torch.randn(5, 2, 4, dtype=torch.float64)
        labels = torch.tensor([0, 1, 1, 0, 1])
        pooled = pool_classes(h, labels, 2)
        torch.testing.assert_close(pooled[:, 0], h[[0, 3]].mean(0))
        torch.testing.assert_close(pooled[:, 1], h[[1, 2, 4]].mean(0))

    def test_empty_class_pools_to_zero(self, caplog):
        h = torch.randn(3, 2, 4, dtype=torch.float64)
        with caplog.at_level(logging.WARNING):
            pooled = pool_classes(h, torch.tensor([0, 0, 2]), 3)
        assert torch.all(pooled[:, 1] == 0)
        assert "no context rows" in caplog.text

    def test_decoder_oracle(self):
        net = _net()
        pooled = torch.randn(3, 2, SMALL.d_model, dtype=torch.float64)
        d = net.decoder
        hidden = torch.nn.functional.gelu(pooled @ d.w1.T + d.b1)
        expected = (hidden @ d.w2.T + d.b2).transpose(1, 2)
        torch.testing.assert_close(net.decode_shapes(pooled), expected)

    def test_output_shape(self):
        net = _net()
        X, y = _context(p=3, m=3)
        model = estimate_shapes(net, X, y, 3)
        assert model.values.shape == (3, SMALL.n_bins, 3)
        assert model.provenance == "icl"

    def test_parameter_count_scales_with_width(self):
        small = sum(p.numel() for p in _net().parameters())
        big = sum(p.numel() for p in _net(ModelConfig()).parameters())
        assert big > small
        # embedding, label table, two layers, final norm, decoder
        d, b, L, m = 64, 16, 2, 4
        layer = 2 * (4 * d * d + 4 * d) + 3 * 2 * d + (4 * d * d + 4 * d + 4 * d * d + d)
        expected = d * b + d + (m + 1) * d + L * layer + 2 * d + (d * d + d + b * d + b)
        assert big == expected


class TestSymmetries:
    def test_feature_permutation_equivariance(self):
        net = _net()
        X, y = _context(p=4, seed=1)
        perm = [2, 0, 3, 1]
        a = estimate_shapes(net, X, y).values
        b = estimate_shapes(net, X[:, perm], y).values
        np.testing.assert_allclose(b, a[perm], atol=1e-5)

    def test_row_permutation_invariance(self):
        net = _net()
        X, y = _context(seed=2)
        perm = np.random.default_rng(0).permutation(len(y))
        a = estimate_shapes(net, X, y).values
        b = estimate_shapes(net, X[perm], y[perm]).values
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_class_swap_is_not_invariant(self):
        # learned label embeddings tie each class id to its own vector
        net = _net()
        X, y = _context(seed=3)
        a = estimate_shapes(net, X, y).values
        b = estimate_shapes(net, X, 1 - y).values
        assert np.abs(b[:, :, ::-1] - a).max() > 1e-3


class TestLoss:
    def test_zero_decoder_gives_log_m(self):
        net = _net()
        with torch.no_grad():
            net.decoder.w2.zero_()
            net.decoder.b2.zero_()
        task = sample_task(PriorConfig(max_classes=3), 5)
        assert task_loss(net, task).item() == pytest.approx(math.log(task.m), abs=1e-6)

    def test_gradient_matches_finite_differences(self):
        net = _net()
        rng = np.random.default_rng(4)
        X = rng.normal(size=(8, 3))
        y = np.array([0, 1] * 4)
        from gamformer.priors import SupervisedTask

        task = prepare_task(SupervisedTask(X, y, 2, np.zeros(3, bool), np.arange(6), np.arange(6, 8)), SMALL.n_bins)
        leaves = list(net.parameters())
        err = nk.finite_difference_check(lambda: task_loss(net, task), leaves, n_samples=50)
        assert err <= 1e-4

    def test_every_parameter_gets_gradient(self):
        net = _net(dtype=torch.float32).train()
        cfg = PriorConfig(max_classes=3)
        grads = {name: torch.zeros_like(p) for name, p in net.named_parameters()}
        for seed in range(32):
            net.zero_grad()
            task_loss(net, sample_task(cfg, (9, seed))).backward()
            for name, p in net.named_parameters():
                grads[name] += p.grad.abs()
        dead = [name for name, g in grads.items() if not torch.any(g > 0)]
        assert dead == []
