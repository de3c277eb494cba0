"""End-to-end pipeline exercise on scikit-learn's bundled digits data.

Full path: CSV ingestion -> sphere preprocessing -> zonal Gram assembly ->
noise tuning -> posterior-mean classification.  The depth-degradation
pattern (unscaled accuracy falls with depth while the square-summable
schemes hold steady) shows up already on this small 8x8 dataset; the
MNIST-scale acceptance criterion asserts the same shape with its own
published numbers when the data is present.
"""

import csv

import numpy as np
import pytest

pytest.importorskip("sklearn")
from sklearn.datasets import load_digits

from resnet_kernels.gp import RegressionConfig, classify, one_hot, posterior_mean, tune_noise
from resnet_kernels.gram import Dataset, KernelDescriptor, gram, load_dataset, preprocess_sphere
from resnet_kernels.kernels import KernelHyper
from resnet_kernels.scaling import decreasing, unscaled


@pytest.fixture(scope="module")
def digits_splits(tmp_path_factory):
    X, y = load_digits(return_X_y=True)
    rng = np.random.default_rng(0)
    order = rng.permutation(len(X))
    X, y = X[order], y[order]
    # digits pixels are 0..16; rescale to the 0..255 convention of the loader
    X = np.round(X * (255.0 / 16.0))
    root = tmp_path_factory.mktemp("digits")
    paths = {}
    for name, sl in (("train", slice(0, 1000)), ("val", slice(1000, 1400)),
                     ("test", slice(1400, None))):
        path = root / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for label, row in zip(y[sl], X[sl]):
                writer.writerow([int(label)] + [f"{v:.0f}" for v in row])
        paths[name] = path
    train = load_dataset(paths["train"], format="csv", split="train")
    val = load_dataset(paths["val"], format="csv", split="val")
    test = load_dataset(paths["test"], format="csv", split="test")
    return preprocess_sphere(train, [val, test])


def accuracy(splits, scheme, depth):
    train, val, test = splits
    hyper = KernelHyper(2.0, 0.0, train.dim)
    desc = KernelDescriptor(hyper=hyper, scheme=scheme, depth=depth,
                            normalize="correlation")
    q_nn = gram(train, descriptor=desc)
    q_vn = gram(val, train, descriptor=desc)
    q_tn = gram(test, train, descriptor=desc)
    choice = tune_noise(q_nn, q_vn, train.targets, val.targets,
                        RegressionConfig(n_classes=10))
    pred = classify(posterior_mean(q_nn, q_tn, one_hot(train.targets, 10),
                                   choice.sigma_sq))
    return float(np.mean(pred == test.targets))


def test_unscaled_degrades_with_depth(digits_splits):
    accs = [accuracy(digits_splits, unscaled(), L) for L in (50, 200, 1000)]
    assert accs[0] > accs[1] > accs[2], accs
    assert accs[0] > 0.95


def test_decreasing_depth_robust(digits_splits):
    accs = [accuracy(digits_splits, decreasing(), L) for L in (50, 200, 1000)]
    assert max(accs) - min(accs) < 0.01, accs
    assert min(accs) > 0.95
