"""Shared test utilities: finite-difference oracles and synthetic data."""

import numpy as np


def finite_diff(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function at x.

    Works in float64; callers build the function so that autodiff runs in
    float64 too when comparing at tight tolerance.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grad_matches(got, expected, rtol=1e-5, atol=1e-7):
    np.testing.assert_allclose(got, expected, rtol=rtol, atol=atol)


def permute_patches(images, patch, perm):
    """Reorder the patch grid of an image stack; equivalent to permuting
    patch tokens after a per-patch embedding."""
    b, h, w, c = images.shape
    gh, gw = h // patch, w // patch
    x = images.reshape(b, gh, patch, gw, patch, c)
    x = x.transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, patch, patch, c)
    x = x[:, perm]
    x = x.reshape(b, gh, gw, patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x.reshape(b, h, w, c))


def golden_image(shape=(2, 28, 28, 3), key=0xBEEF):
    """Fixed pseudo-image in [0,1], reproducible across platforms."""
    from permubench import kernels

    n = int(np.prod(shape))
    u = kernels.bulk_u64(key, n)
    return (u.astype(np.float64) * 2.0**-64).astype(np.float32).reshape(shape)


def make_synthetic_npz(path, num_classes=2, train_per_class=8, n_val=4, n_test=6,
                       channels=1, seed=0, class_shift=0):
    """Write a MedMNIST-shaped archive (28x28 uint8, labels as (n,1) uint8).

    class_shift > 0 adds a per-class brightness offset so the task is
    learnable; 0 gives pure noise.
    """
    r = np.random.default_rng(seed)

    def images_for(labels):
        imgs = r.integers(0, 128, size=(len(labels), 28, 28, channels))
        if class_shift:
            imgs = imgs + (labels.reshape(-1, 1, 1, 1) * class_shift)
        return np.clip(imgs, 0, 255).astype(np.uint8)

    train_labels = np.repeat(np.arange(num_classes), train_per_class)
    val_labels = np.arange(n_val) % num_classes
    test_labels = np.arange(n_test) % num_classes
    out = {}
    for split, labels in (("train", train_labels), ("val", val_labels), ("test", test_labels)):
        out[f"{split}_images"] = images_for(labels)
        out[f"{split}_labels"] = labels.reshape(-1, 1).astype(np.uint8)
    np.savez(path, **out)
    return path
