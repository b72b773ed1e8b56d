"""Estimator front end: parameter protocol, validation, fitted attributes."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from geoflow import (
    GridMismatchError,
    LDDMMRegistration,
    ShootingRegistration,
    SVFRegistration,
    blob_pair,
)


@pytest.fixture(scope="module")
def images():
    I0, I1 = blob_pair(32, 3.0, 3.0, peak=3.0)
    return I0.values, I1.values


def test_params_roundtrip_and_clone():
    est = LDDMMRegistration(kernel_sigma=3.0, sigma=0.2, steps=8, max_iters=10, tol=1e-4)
    assert est.get_params() == {
        "kernel_sigma": 3.0,
        "sigma": 0.2,
        "steps": 8,
        "max_iters": 10,
        "tol": 1e-4,
    }
    est.set_params(sigma=0.5)
    assert est.get_params()["sigma"] == 0.5
    dup = clone(est)
    assert dup.get_params() == est.get_params()
    assert not hasattr(dup, "displacement_")

    assert set(ShootingRegistration().get_params()) == {
        "kernel_sigma",
        "weight",
        "steps",
        "max_iters",
        "tol",
    }
    assert set(SVFRegistration().get_params()) == {
        "kernel_sigma",
        "weight",
        "squarings",
        "max_iters",
        "tol",
    }


def test_transform_requires_fit():
    X = np.zeros((8, 8))
    for est in (LDDMMRegistration(), ShootingRegistration(), SVFRegistration()):
        with pytest.raises(NotFittedError):
            est.transform(X)
        with pytest.raises(NotFittedError):
            est.predict(X)


def test_fit_input_validation():
    good = np.zeros((8, 8))
    with pytest.raises(GridMismatchError):
        LDDMMRegistration().fit(good, np.zeros((8, 10)))
    with pytest.raises(ValueError):
        ShootingRegistration().fit(np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        SVFRegistration().fit(np.array([["a"] * 8] * 8), good)
    with pytest.raises(ValueError):
        LDDMMRegistration().fit(np.zeros(64), np.zeros(64))


def test_lddmm_estimator(images):
    X, y = images
    est = LDDMMRegistration(kernel_sigma=2.0, sigma=0.1, steps=8, max_iters=40).fit(X, y)
    assert est.image_shape_ == (32, 32)
    assert est.displacement_.shape == (32, 32, 2)
    assert est.warped_.shape == (32, 32)
    assert est.energy_ == est.kinetic_ + est.data_
    assert est.n_iter_ >= 1
    assert est.diffeomorphic_
    # the stored map is exactly what produced warped_
    out = est.transform(X)
    assert np.array_equal(out, est.warped_)
    assert np.array_equal(est.predict(X), out)
    # the fit moved the image most of the way onto the target
    assert np.linalg.norm(est.warped_ - y) < 0.5 * np.linalg.norm(X - y)
    with pytest.raises(GridMismatchError):
        est.transform(np.zeros((16, 16)))


def test_shooting_estimator(images):
    X, y = images
    est = ShootingRegistration(
        kernel_sigma=2.0, weight=100.0, steps=16, max_iters=12
    ).fit(X, y)
    assert est.initial_momentum_.shape == (32, 32)
    assert est.energy_ == pytest.approx(est.kinetic_ + 100.0 * est.data_, rel=1e-12)
    assert np.linalg.norm(est.warped_ - y) < 0.5 * np.linalg.norm(X - y)
    # warped_ comes from advecting the image; transform pushes it through the
    # integrated flow map — two discretizations of the same transport, so they
    # agree closely but not bitwise
    out = est.transform(X)
    assert not np.array_equal(out, est.warped_)
    gap = np.max(np.abs(out - est.warped_)) / np.max(np.abs(est.warped_))
    assert gap < 0.1


def test_svf_estimator(images):
    X, y = images
    est = SVFRegistration(kernel_sigma=2.0, weight=100.0, max_iters=60).fit(X, y)
    assert est.velocity_.shape == (32, 32, 2)
    assert est.energy_ == pytest.approx(est.kinetic_ + est.data_, rel=1e-12)
    assert np.array_equal(est.transform(X), est.warped_)
    assert np.linalg.norm(est.warped_ - y) < 0.5 * np.linalg.norm(X - y)

    # a fixed scaling depth reproduces the auto-selected map to resampling error
    fixed = SVFRegistration(
        kernel_sigma=2.0, weight=100.0, squarings=6, max_iters=60
    ).fit(X, y)
    assert np.max(np.abs(fixed.displacement_ - est.displacement_)) < 1e-3
    assert np.array_equal(fixed.velocity_, est.velocity_)
