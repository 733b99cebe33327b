"""Synthetic Gaussian-blob datasets for desk-scale experiments and tests."""

import numpy as np

from .data import LabeledDataset, Normalization


def make_blobs(n, num_classes, dim, seed, separation=8.0, spread=1.0):
    """Class-balanced isotropic blobs with means spaced ``separation`` apart.

    Means are ``separation / sqrt(2)`` times distinct unit basis vectors, so every
    pair of class means is exactly ``separation`` apart.
    """
    if num_classes > dim:
        raise ValueError("need dim >= num_classes for orthogonal class means")
    rng = np.random.default_rng(seed)
    means = np.zeros((num_classes, dim))
    means[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    x = means[labels] + spread * rng.standard_normal((n, dim))
    return x.astype(np.float32), labels


def blob_datasets(n_train, n_test, num_classes, dim, seed, **kw):
    """Train/test blob datasets sharing class means; test uses the train normalization."""
    x, y = make_blobs(n_train + n_test, num_classes, dim, seed, **kw)
    norm = Normalization(float(x[:n_train].mean()), float(x[:n_train].std()))
    train = LabeledDataset(norm.apply(x[:n_train]), y[:n_train], num_classes, norm, "train", "blobs")
    test = LabeledDataset(norm.apply(x[n_train:]), y[n_train:], num_classes, norm, "test", "blobs")
    return train, test


def perceptron_separable(x, y, num_classes, max_epochs=1000):
    """Multiclass perceptron; True once an epoch makes no mistakes.

    Converges in finitely many updates exactly when the data are linearly
    separable, so a True result certifies separability.
    """
    x = np.hstack([np.asarray(x, dtype=np.float64).reshape(len(y), -1), np.ones((len(y), 1))])
    w = np.zeros((num_classes, x.shape[1]))
    for _ in range(max_epochs):
        mistakes = 0
        for xi, yi in zip(x, y):
            pred = int(np.argmax(w @ xi))
            if pred != yi:
                w[yi] += xi
                w[pred] -= xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False
