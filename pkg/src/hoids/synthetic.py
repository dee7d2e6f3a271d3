"""Synthetic stand-ins for the KDD99 and gas-pipeline ICS datasets.

Neither public dataset ships with this package.  These generators keep the
properties the experiments depend on (class proportions, constant and
collinear feature groups, rare attack classes) so every workflow can run
end to end without downloads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ColumnMeta, Dataset, LabelSpace

KDD_SAMPLED_TRAIN = {"normal": 800, "smurf": 2320, "neptune": 800, "others": 80}
KDD_SAMPLED_TEST = {"normal": 1000, "smurf": 2900, "neptune": 1000, "others": 100}

ICS_CLASSES = ("good", "address_scan", "func_code_scan", "illegal_setpoint", "pid_modification")
ICS_COUNTS = {"good": 28086, "address_scan": 2, "func_code_scan": 9,
              "illegal_setpoint": 198, "pid_modification": 49}
ICS_FEATURES = (
    "F1_invalid_function_code", "F2_pump_state", "F3_pid_cycle_time", "F4_pid_deadband",
    "F5_pid_gain", "F6_pid_rate", "F7_pid_reset", "F8_pipeline_psi", "F9_solenoid_state",
    "F10_setpoint", "F11_delta_pid_cycle_time", "F12_delta_pid_deadband",
    "F13_delta_pid_gain", "F14_delta_pid_rate", "F15_delta_pid_reset",
    "F16_delta_pipeline_psi", "F17_crc_rate",
)


@dataclass(frozen=True)
class GaussianSurrogate:
    """Classes share one covariance, so the Bayes-optimal rule is linear."""

    means: np.ndarray  # K x M
    cov: np.ndarray
    priors: np.ndarray
    labels: LabelSpace

    def sample(self, counts: dict[str, int], rng: np.random.Generator) -> Dataset:
        L = np.linalg.cholesky(self.cov)
        X, y = [], []
        for name, n in counts.items():
            k = self.labels.index(name)
            X.append(self.means[k] + rng.standard_normal((n, self.cov.shape[0])) @ L.T)
            y.append(np.full(n, k))
        X, y = np.vstack(X), np.concatenate(y)
        perm = rng.permutation(y.size)
        cols = [ColumnMeta(f"x{j}") for j in range(X.shape[1])]
        return Dataset(X[perm], y[perm], cols, self.labels)

    def bayes_predict(self, X: np.ndarray) -> np.ndarray:
        P = np.linalg.inv(self.cov)
        lin = self.means @ P  # K x M
        const = -0.5 * np.einsum("km,km->k", lin, self.means) + np.log(self.priors)
        return np.argmax(X @ lin.T + const, axis=1)


def kdd_sampled_surrogate(seed: int = 0, dim: int = 38, separation: float = 3.2):
    """Four-class Gaussian mimicking the sampled Normal/Smurf/Neptune/Others task.

    Returns ``(train, test, surrogate)`` with the 4000/5000 stratified counts.
    """
    rng = np.random.default_rng(seed)
    labels = LabelSpace(tuple(KDD_SAMPLED_TRAIN))
    A = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    cov = A @ A.T + 0.5 * np.eye(dim)
    directions = rng.standard_normal((4, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions @ np.linalg.cholesky(cov).T
    counts = np.array(list(KDD_SAMPLED_TRAIN.values()), dtype=float)
    sur = GaussianSurrogate(means, cov, counts / counts.sum(), labels)
    return sur.sample(KDD_SAMPLED_TRAIN, rng), sur.sample(KDD_SAMPLED_TEST, rng), sur


def ics_command_injection(seed: int = 0, counts: dict[str, int] | None = None,
                          with_address: bool = True) -> Dataset:
    """Gas-pipeline command-injection surrogate.

    Layout: ``address`` followed by the 17 numeric features ``F1``..``F17``.
    F6, F8, F14, F16 are constant; {F3, F4, F5, F7} and {F11, F12, F13, F15}
    are near-collinear groups; F2, F9, F17 carry no class information.
    """
    rng = np.random.default_rng(seed)
    counts = dict(ICS_COUNTS if counts is None else counts)
    labels = LabelSpace(ICS_CLASSES)
    blocks, ys = [], []
    for name, n in counts.items():
        k = labels.index(name)
        f = np.zeros((n, 18))
        f[:, 0] = np.where(rng.random(n) < 0.995, 4.0, rng.integers(1, 8, n))
        f[:, 1] = (rng.random(n) < 0.0002).astype(float)
        f[:, 2] = rng.integers(0, 2, n)
        pid = rng.standard_normal(n)
        dpid = np.where(rng.random(n) < 0.95, 0.0, 0.5 * rng.standard_normal(n))
        setpoint = rng.normal(20.0, 2.0, n)
        if name == "address_scan":
            f[:, 0] = rng.choice([9.0, 17.0, 33.0, 65.0], n)
        elif name == "func_code_scan":
            f[:, 1] = (rng.random(n) < 0.9).astype(float)
        elif name == "illegal_setpoint":
            setpoint = np.where(rng.random(n) < 0.8, rng.uniform(35.0, 90.0, n), setpoint)
        elif name == "pid_modification":
            pid = rng.normal(3.5, 1.5, n)
            dpid = np.where(rng.random(n) < 0.7, rng.normal(3.0, 1.0, n), 0.0)
        tiny = lambda: 1e-3 * rng.standard_normal(n)  # noqa: E731
        f[:, 3] = 10.0 + 2.0 * pid + tiny()
        f[:, 4] = 0.5 + 0.1 * pid + tiny() * 0.1
        f[:, 5] = 1.0 + 0.3 * pid + tiny() * 0.3
        f[:, 6] = 1.0
        f[:, 7] = 0.2 + 0.05 * pid + tiny() * 0.05
        f[:, 8] = 0.0
        f[:, 9] = rng.integers(0, 2, n)
        f[:, 10] = setpoint
        f[:, 11] = 2.0 * dpid + tiny()
        f[:, 12] = 0.1 * dpid + tiny() * 0.1
        f[:, 13] = 0.3 * dpid + tiny() * 0.3
        f[:, 14] = 0.0
        f[:, 15] = 0.05 * dpid + tiny() * 0.05
        f[:, 16] = 0.0
        f[:, 17] = rng.standard_normal(n)
        blocks.append(f)
        ys.append(np.full(n, k))
    X, y = np.vstack(blocks), np.concatenate(ys)
    perm = rng.permutation(y.size)
    names = ("address",) + ICS_FEATURES
    ds = Dataset(X[perm], y[perm], [ColumnMeta(n) for n in names], labels)
    return ds if with_address else ds.select_columns(list(ICS_FEATURES))


__all__ = ["GaussianSurrogate", "ICS_CLASSES", "ICS_COUNTS", "ICS_FEATURES",
           "KDD_SAMPLED_TEST", "KDD_SAMPLED_TRAIN", "ics_command_injection",
           "kdd_sampled_surrogate"]
