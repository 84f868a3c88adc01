"""Constant-velocity Kalman filter for the UAV position fed back by the cameras.

State ``[x, y, z, vx, vy, vz]``; only the position is measured. Outlying
measurements are rejected by a chi-square gate on the normalised
innovation, which stands in for a full robust filter.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.stats import chi2

GATE_99_9 = float(chi2.ppf(0.999, df=3))


def _spd(P, tol=1e-10):
    P = np.array(P, dtype=float)
    if P.shape != (6, 6):
        raise ValueError("covariance must be 6x6")
    if np.max(np.abs(P - P.T)) > tol * max(1.0, np.max(np.abs(P))):
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(0.5 * (P + P.T))[0] <= -tol:
        raise ValueError("covariance must be positive semidefinite")
    return P


@dataclass(frozen=True)
class TargetState:
    """Mean and covariance of the target; ``rejected`` flags a gated-out update."""

    mean: np.ndarray
    cov: np.ndarray
    rejected: bool = False

    def __post_init__(self):
        m = np.array(self.mean, dtype=float).reshape(6)
        if not np.all(np.isfinite(m)):
            raise ValueError("target mean must be finite")
        P = _spd(self.cov)
        m.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)

    @classmethod
    def initial(cls, position, pos_std: float = 1.0, vel_std: float = 1.0) -> "TargetState":
        mean = np.concatenate((np.asarray(position, dtype=float).reshape(3), np.zeros(3)))
        return cls(mean, np.diag([pos_std ** 2] * 3 + [vel_std ** 2] * 3))

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[3:]


@dataclass(frozen=True)
class FilterModel:
    """Transition ``D``, measurement ``F`` and noise covariances ``Q_S``, ``Q_M``."""

    D: np.ndarray
    F: np.ndarray
    Q_S: np.ndarray
    Q_M: np.ndarray
    dt: float
    gate: float = GATE_99_9

    @classmethod
    def constant_velocity(cls, dt: float = 0.01, sigma_s: float = 1.0,
                          sigma_m: float = 0.02, gate: float = GATE_99_9,
                          dt_scaled_measurement: bool = False) -> "FilterModel":
        """Block model with ``Q_S = sigma_s^2 [dt^3 I, dt^2 I; dt^2 I, dt I]``.

        ``Q_M = sigma_m^2 I_3`` so that ``sigma_m`` is the standard deviation
        of a single position fix. ``dt_scaled_measurement=True`` gives the
        ``sigma_m^2 dt I_3`` variant instead, which treats ``sigma_m`` as a
        noise density; with a 0.02 m sensor it is far too confident and the
        gate then rejects most fixes.
        """
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        I = np.eye(3)
        Z = np.zeros((3, 3))
        D = np.block([[I, dt * I], [Z, I]])
        F = np.hstack((I, Z))
        Q_S = sigma_s ** 2 * np.block([[dt ** 3 * I, dt ** 2 * I], [dt ** 2 * I, dt * I]])
        Q_M = sigma_m ** 2 * (dt if dt_scaled_measurement else 1.0) * I
        return cls(D, F, Q_S, Q_M, dt, gate)


def predict(state: TargetState, model: FilterModel) -> TargetState:
    m = model.D @ state.mean
    P = model.D @ state.cov @ model.D.T + model.Q_S
    return TargetState(m, 0.5 * (P + P.T))


def update(state: TargetState, z, model: FilterModel) -> TargetState:
    """Measurement update in Joseph form.

    A measurement whose normalised innovation squared exceeds
    ``model.gate`` is dropped: the input state is returned with
    ``rejected=True``.
    """
    z = np.asarray(z, dtype=float).reshape(3)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    F = model.F
    nu = z - F @ state.mean
    S = F @ state.cov @ F.T + model.Q_M
    try:
        Sinv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        # noise-free model with a fully determined state: S is singular, and
        # an innovation outside its range is impossible under the model
        Sinv = np.linalg.pinv(S)
        if np.linalg.norm(nu - S @ (Sinv @ nu)) > 1e-12 * max(1.0, np.linalg.norm(nu)):
            return replace(state, rejected=True)
    if float(nu @ Sinv @ nu) > model.gate:
        return replace(state, rejected=True)
    K = state.cov @ F.T @ Sinv
    A = np.eye(6) - K @ F
    P = A @ state.cov @ A.T + K @ model.Q_M @ K.T
    return TargetState(state.mean + K @ nu, 0.5 * (P + P.T))


def step(state: TargetState, z, model: FilterModel) -> TargetState:
    """Predict, then update with ``z`` (skip the update when ``z`` is ``None``)."""
    pred = predict(state, model)
    return pred if z is None else update(pred, z, model)


def read_measurements(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``t,x,y,z`` CSV; returns times ``(n,)`` and positions ``(n, 3)``."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t", "x", "y", "z"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = [(float(r["t"]), float(r["x"]), float(r["y"]), float(r["z"])) for r in reader]
    if not rows:
        raise ValueError(f"{path}: no measurements")
    arr = np.array(rows)
    if np.any(np.diff(arr[:, 0]) < 0.0):
        raise ValueError(f"{path}: timestamps must be non-decreasing")
    return arr[:, 0], arr[:, 1:]
