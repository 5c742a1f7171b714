"""Architecture tests: budgets, invariances, goldens, gradients, I/O."""

import json
import os

import numpy as np
import pytest

from permubench import autodiff as ad
from permubench import models
from permubench.errors import FormatError, SpecError

from helpers import finite_diff, golden_image, permute_patches

HERE = os.path.dirname(os.path.abspath(__file__))


def spec4(arch):
    return models.default_spec(arch, num_classes=4)


class TestSpec:
    def test_unknown_arch(self):
        with pytest.raises(SpecError):
            models.default_spec("resnet", num_classes=2)

    def test_patch_divisibility(self):
        with pytest.raises(SpecError):
            models.ModelSpec(arch="zachvit", num_classes=2, input=(30, 30, 3),
                             embed_dims=(48,), depth=1)

    def test_heads_divide_width(self):
        with pytest.raises(SpecError):
            models.ModelSpec(arch="transmil", num_classes=2, embed_dims=(50,),
                             depth=1, heads=4)

    def test_token_geometry(self):
        s = spec4("zachvit")
        assert s.num_tokens == 49
        assert s.patch_dim == 48

    @pytest.mark.parametrize("arch", models.ARCHS)
    def test_default_specs_under_budget(self, arch):
        params = models.build(spec4(arch), init_seed=3)
        assert models.count_params(params) < 1_000_000

    def test_over_budget_rejected(self):
        big = models.ModelSpec(arch="minimalvit", num_classes=2,
                               embed_dims=(512,), depth=6, heads=4)
        with pytest.raises(SpecError, match=r"\d{7}"):
            models.build(big)

    def test_spec_dict_round_trip(self):
        s = spec4("minimalvit")
        assert models.ModelSpec.from_dict(s.to_dict()) == s


class TestBuild:
    def test_deterministic(self):
        a = models.build(spec4("zachvit"), init_seed=11)
        b = models.build(spec4("zachvit"), init_seed=11)
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k].data, b[k].data), k

    def test_seed_changes_weights(self):
        a = models.build(spec4("zachvit"), init_seed=11)
        b = models.build(spec4("zachvit"), init_seed=12)
        assert not np.array_equal(a["embed.weight"].data, b["embed.weight"].data)

    def test_init_kinds(self):
        p = models.build(spec4("minimalvit"), init_seed=3)
        assert np.all(p["embed.bias"].data == 0)
        assert np.all(p["blocks.0.ln1.gamma"].data == 1)
        assert np.all(p["blocks.0.ln1.beta"].data == 0)
        w = p["embed.weight"].data
        assert np.abs(w).max() <= 2 * models.INIT_SIGMA + 1e-7
        assert w.std() > 0.5 * models.INIT_SIGMA

    def test_count_params_basics(self):
        assert models.count_params({}) == 0
        assert models.count_params({"w": ad.Tensor(np.zeros((10, 10)))}) == 100


class TestForward:
    @pytest.mark.parametrize("arch", models.ARCHS)
    def test_zero_image_finite(self, arch):
        spec = spec4(arch)
        params = models.build(spec, init_seed=3)
        with ad.no_grad():
            out = models.forward(spec, params, np.zeros((1, 28, 28, 3), np.float32))
        assert out.shape == (1, 4)
        assert np.isfinite(out.data).all()

    @pytest.mark.parametrize("arch", models.ARCHS)
    def test_identical_rows(self, arch):
        spec = spec4(arch)
        params = models.build(spec, init_seed=3)
        one = golden_image((1, 28, 28, 3))
        batch = np.repeat(one, 3, axis=0)
        with ad.no_grad():
            out = models.forward(spec, params, batch).data
        assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])

    @pytest.mark.parametrize("arch", models.ARCHS)
    def test_batch_consistency(self, arch):
        spec = spec4(arch)
        params = models.build(spec, init_seed=3)
        x = golden_image((4, 28, 28, 3), key=10)
        with ad.no_grad():
            full = models.forward(spec, params, x).data
            parts = np.concatenate(
                [models.forward(spec, params, x[:2]).data,
                 models.forward(spec, params, x[2:]).data]
            )
        np.testing.assert_allclose(full, parts, atol=1e-6)

    @pytest.mark.parametrize("arch", ["zachvit", "abmil", "transmil"])
    def test_permutation_invariance(self, arch):
        spec = spec4(arch)
        params = models.build(spec, init_seed=5)
        img = golden_image((2, 28, 28, 3), key=11)
        with ad.no_grad():
            base = models.forward(spec, params, img).data
            worst = 0.0
            for t in range(30):
                perm = np.random.default_rng(t).permutation(spec.num_tokens)
                out = models.forward(spec, params, permute_patches(img, 4, perm)).data
                worst = max(worst, float(np.abs(out - base).max()))
        assert worst < 1e-5

    def test_minimalvit_permutation_witness(self):
        spec = spec4("minimalvit")
        params = models.build(spec, init_seed=5)
        img = golden_image((2, 28, 28, 3), key=11)
        with ad.no_grad():
            base = models.forward(spec, params, img).data
            worst = 0.0
            for t in range(100):
                perm = np.random.default_rng(t).permutation(spec.num_tokens)
                out = models.forward(spec, params, permute_patches(img, 4, perm)).data
                worst = max(worst, float(np.abs(out - base).max()))
        assert worst > 1e-3

    def test_minimalvit_ablation_restores_invariance(self):
        # kill the positional table, read out by mean pooling instead of cls
        spec = spec4("minimalvit")
        params = models.build(spec, init_seed=5)
        params["pos"] = ad.Tensor(np.zeros_like(params["pos"].data), requires_grad=True)
        img = golden_image((2, 28, 28, 3), key=11)
        with ad.no_grad():
            base = models.forward_minimalvit(spec, params, img, readout="mean").data
            for t in range(20):
                perm = np.random.default_rng(t).permutation(spec.num_tokens)
                out = models.forward_minimalvit(
                    spec, params, permute_patches(img, 4, perm), readout="mean"
                ).data
                assert np.abs(out - base).max() < 1e-5

    def test_abmil_attention_normalized(self):
        spec = spec4("abmil")
        params = models.build(spec, init_seed=3)
        img = golden_image((5, 28, 28, 3), key=12)
        w = models.abmil_attention_weights(spec, params, img)
        assert w.shape == (5, 49)
        np.testing.assert_allclose(w.sum(axis=1), np.ones(5), atol=1e-6)
        assert (w >= 0).all()

    def test_transmil_single_instance(self):
        spec = models.ModelSpec(arch="transmil", num_classes=3, input=(4, 4, 3),
                                embed_dims=(96,), depth=4, heads=4)
        params = models.build(spec, init_seed=3)
        with ad.no_grad():
            out = models.forward(spec, params, np.zeros((2, 4, 4, 3), np.float32))
        assert out.shape == (2, 3) and np.isfinite(out.data).all()

    @pytest.mark.parametrize("arch", models.ARCHS)
    def test_golden_regression(self, arch):
        with open(os.path.join(HERE, "goldens", "model_logits.json")) as f:
            golden = json.load(f)
        spec = spec4(arch)
        params = models.build(spec, init_seed=7)
        with ad.no_grad():
            out = models.forward(spec, params, golden_image()).data
        np.testing.assert_allclose(out, np.array(golden[arch]), rtol=1e-5, atol=1e-6)


class TestInputGradient:
    @pytest.mark.parametrize("arch", models.ARCHS)
    def test_matches_finite_difference_f64(self, arch):
        spec = spec4(arch)
        params32 = models.build(spec, init_seed=3)
        params = {k: ad.Tensor(t.data.astype(np.float64)) for k, t in params32.items()}
        labels = np.array([1, 3])
        x0 = golden_image((2, 28, 28, 3), key=13).astype(np.float64)

        x = ad.Tensor(x0, requires_grad=True)
        ad.backward(ad.cross_entropy(models.forward(spec, params, x), labels))
        got = x.grad

        def loss_at(arr):
            with ad.no_grad():
                out = models.forward(spec, params, ad.Tensor(arr))
                return float(ad.cross_entropy(out, labels).data)

        flat = x0.reshape(-1)
        picks = np.random.default_rng(14).choice(flat.size, size=10, replace=False)
        h = 1e-5
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_at(x0)
            flat[i] = orig - h
            fm = loss_at(x0)
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            ga = got.reshape(-1)[i]
            assert abs(ga - fd) <= 1e-5 * max(abs(fd), 1e-4), (arch, i, ga, fd)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        spec = spec4("zachvit")
        params = models.build(spec, init_seed=9)
        path = tmp_path / "m.params"
        models.save_params(path, spec, params)
        spec2, params2 = models.load_params(path)
        assert spec2 == spec
        assert params2.keys() == params.keys()
        for k in params:
            assert np.array_equal(params[k].data, params2[k].data), k

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.params"
        path.write_bytes(b"not a container")
        with pytest.raises(FormatError):
            models.load_params(path)

    def test_name_mismatch(self, tmp_path):
        spec = spec4("abmil")
        params = models.build(spec, init_seed=9)
        del params["head.bias"]
        path = tmp_path / "m.params"
        models.save_params(path, spec, params)
        with pytest.raises(FormatError, match="head.bias"):
            models.load_params(path)
