import numpy as np
import pytest
import torch

from mifag import adm as A
from mifag.encoders import PointEncoder

torch.set_default_dtype(torch.float64)


class TestCosineScores:
    def test_self_similarity(self):
        v = torch.tensor([[1.0, 2.0, 3.0]])
        scores = A.cosine_scores(v, v.unsqueeze(0))
        assert float(scores[0, 0, 0]) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        q = torch.tensor([[1.0, 0.0]])
        k = torch.tensor([[[0.0, 1.0]]])
        assert float(A.cosine_scores(q, k)[0, 0, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_hand_oracle(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(2, 2))
        k = rng.normal(size=(1, 2, 2))
        scores = A.cosine_scores(torch.from_numpy(q), torch.from_numpy(k))
        for p in range(2):
            for m in range(2):
                expected = q[p] @ k[0, m] / (
                    (np.linalg.norm(q[p]) + 1e-8)
                    * (np.linalg.norm(k[0, m]) + 1e-8))
                assert float(scores[0, p, m]) == pytest.approx(expected, abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(1)
        scores = A.cosine_scores(torch.from_numpy(rng.normal(size=(5, 4))),
                                 torch.from_numpy(rng.normal(size=(3, 6, 4))))
        assert torch.all(scores <= 1.0 + 1e-12)
        assert torch.all(scores >= -1.0 - 1e-12)


def iqdca_oracle(p_in, tokens, wq, wk, wv, scale):
    """Naive loop IQDCA."""
    q = p_in @ wq.T
    n, m, _ = tokens.shape
    out = np.empty((n, q.shape[0], wv.shape[0]))
    for i in range(n):
        keys = tokens[i] @ wk.T
        values = tokens[i] @ wv.T
        for p in range(q.shape[0]):
            scores = np.array([
                scale * (q[p] @ keys[j]) / ((np.linalg.norm(q[p]) + 1e-8)
                                            * (np.linalg.norm(keys[j]) + 1e-8))
                for j in range(m)])
            e = np.exp(scores - scores.max())
            w = e / e.sum()
            out[i, p] = sum(w[j] * values[j] for j in range(m))
    return out


class TestDictionaryCrossAttention:
    def test_single_token_uniform(self):
        torch.manual_seed(0)
        cross = A.DictionaryCrossAttention(4, 4)
        p_in = torch.rand(3, 4)
        tokens = torch.rand(2, 1, 4)
        out, attn = cross(p_in, tokens, return_weights=True)
        assert torch.all(attn == 1.0)
        values = cross.wv(tokens)
        for i in range(2):
            for p in range(3):
                assert torch.allclose(out[i, p], values[i, 0], atol=1e-12)

    def test_duplicate_tokens_half_weights(self):
        torch.manual_seed(1)
        cross = A.DictionaryCrossAttention(4, 4)
        p_in = torch.rand(3, 4)
        token = torch.rand(1, 1, 4)
        tokens = token.repeat(1, 2, 1)
        out, attn = cross(p_in, tokens, return_weights=True)
        assert torch.allclose(attn, torch.full_like(attn, 0.5), atol=1e-12)
        assert torch.allclose(out[0, 0], cross.wv(token)[0, 0], atol=1e-12)

    def test_matches_loop_oracle(self):
        torch.manual_seed(2)
        cross = A.DictionaryCrossAttention(2, 2, scale=10.0)
        rng = np.random.default_rng(2)
        p_in = rng.normal(size=(2, 2))
        tokens = rng.normal(size=(1, 2, 2))
        out = cross(torch.from_numpy(p_in), torch.from_numpy(tokens))
        expected = iqdca_oracle(p_in, tokens, cross.wq.weight.detach().numpy(),
                                cross.wk.weight.detach().numpy(),
                                cross.wv.weight.detach().numpy(), 10.0)
        assert np.allclose(out.detach().numpy(), expected, atol=1e-10)

    def test_rows_stochastic(self):
        torch.manual_seed(3)
        cross = A.DictionaryCrossAttention(8, 8)
        rng = np.random.default_rng(3)
        _, attn = cross(torch.from_numpy(rng.normal(size=(6, 8))),
                        torch.from_numpy(rng.normal(size=(3, 5, 8))),
                        return_weights=True)
        sums = attn.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
        assert torch.all(attn > 0.0) and torch.all(attn < 1.0)

    def test_dictionary_scale_invariance(self):
        torch.manual_seed(4)
        cross = A.DictionaryCrossAttention(4, 4)
        rng = np.random.default_rng(4)
        p_in = torch.from_numpy(rng.normal(size=(5, 4)))
        tokens = torch.from_numpy(rng.normal(size=(2, 3, 4)))
        _, attn1 = cross(p_in, tokens, return_weights=True)
        _, attn2 = cross(p_in, 7.5 * tokens, return_weights=True)
        assert torch.allclose(attn1, attn2, atol=1e-6)


class TestSelfWeightedAttention:
    def test_single_image_identity(self):
        torch.manual_seed(5)
        gate = A.SelfWeightedAttention(4)
        x = torch.rand(1, 6, 4)
        assert torch.equal(gate(x), x)

    def test_identical_images_identity(self):
        torch.manual_seed(6)
        gate = A.SelfWeightedAttention(4)
        x = torch.rand(1, 6, 4).repeat(2, 1, 1)
        assert torch.allclose(gate(x), x, atol=1e-12)

    def test_hand_softmax_reweighting(self):
        gate = A.SelfWeightedAttention(2)
        with torch.no_grad():
            gate.score.weight.copy_(torch.tensor([[1.0, 0.0]]))
            gate.score.bias.zero_()
        x = torch.tensor([[[1.0, 5.0]], [[3.0, 7.0]]])
        out = gate(x)
        e = np.exp([1.0, 3.0])
        w = e / e.sum()
        expected = np.array([[[2 * w[0] * 1.0, 2 * w[0] * 5.0]],
                             [[2 * w[1] * 3.0, 2 * w[1] * 7.0]]])
        assert np.allclose(out.detach().numpy(), expected, atol=1e-12)

    def test_image_permutation_equivariance(self):
        torch.manual_seed(7)
        gate = A.SelfWeightedAttention(4)
        x = torch.rand(3, 5, 4)
        perm = torch.tensor([2, 0, 1])
        assert torch.allclose(gate(x)[perm], gate(x[perm]), atol=1e-12)


class TestResidualFusion:
    def test_zero_mixed_identity(self):
        torch.manual_seed(8)
        fuse = A.ResidualFusion(4, 4)
        with torch.no_grad():
            fuse.proj.bias.zero_()
        p_in = torch.rand(5, 4)
        out = fuse(torch.zeros(2, 5, 4), p_in)
        assert torch.equal(out, p_in)

    def test_image_permutation_exact(self):
        torch.manual_seed(9)
        fuse = A.ResidualFusion(4, 4)
        mixed = torch.rand(2, 5, 4)
        p_in = torch.rand(5, 4)
        assert torch.equal(fuse(mixed, p_in), fuse(mixed.flip(0), p_in))

    def test_hand_affine_residual(self):
        torch.manual_seed(10)
        fuse = A.ResidualFusion(2, 2)
        mixed = torch.rand(1, 1, 2)
        p_in = torch.rand(1, 2)
        out = fuse(mixed, p_in)
        w = fuse.proj.weight.detach().numpy()
        b = fuse.proj.bias.detach().numpy()
        expected = p_in.numpy()[0] + (w @ mixed.numpy()[0, 0] + b)
        assert np.allclose(out.detach().numpy()[0], expected, atol=1e-12)


class TestDecoder:
    def _pyramid(self, n=32, seed=11):
        torch.manual_seed(0)
        enc = PointEncoder(stage_points=(8, 4, 2),
                           stage_mlp_dims=((4, 4), (4, 4), (4, 4)),
                           num_neighbors=4)
        coords = torch.from_numpy(np.random.default_rng(seed).normal(size=(n, 3)))
        with torch.no_grad():
            return enc(coords)

    def test_zero_weights_half_output(self):
        torch.manual_seed(12)
        decoder = A.AffordanceDecoder(4)
        pyramid = self._pyramid()
        with torch.no_grad():
            for p in decoder.parameters():
                p.zero_()
            out = decoder(pyramid.deepest.features, pyramid)
        assert torch.all(out == 0.5)

    def test_output_length_and_range(self):
        torch.manual_seed(13)
        decoder = A.AffordanceDecoder(4)
        pyramid = self._pyramid()
        with torch.no_grad():
            out = decoder(pyramid.deepest.features, pyramid)
        assert out.shape == (32,)
        assert torch.all(out > 0.0) and torch.all(out < 1.0)

    def test_bias_monotonicity(self):
        torch.manual_seed(14)
        decoder = A.AffordanceDecoder(4)
        pyramid = self._pyramid()
        with torch.no_grad():
            base = decoder(pyramid.deepest.features, pyramid).clone()
            decoder.fc2.bias.add_(10.0)
            raised = decoder(pyramid.deepest.features, pyramid)
        assert torch.all(raised > base)
