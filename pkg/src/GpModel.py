from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger

from src.utils import save_to_csv

DATASET_COLUMNS = ["z1", "z2", "z3", "z4", "y"]


class KernelParams:
    """Squared-exponential kernel hyperparameters: prior std sigma_d, diagonal length scales L_d and jitter."""

    def __init__(self, sigma_d: float, length_scales, jitter: float = 1e-6) -> None:
        length_scales = np.asarray(length_scales, dtype=float)

        if sigma_d <= 0:
            raise ValueError("Invalid sigma_d. Must be positive.")
        if length_scales.shape != (4,) or np.any(length_scales <= 0):
            raise ValueError("Invalid length scales. Must be four positive entries.")
        if jitter <= 0:
            raise ValueError("Invalid jitter. Must be positive.")

        self.sigma_d: float = float(sigma_d)
        self.length_scales: np.ndarray = length_scales
        self.jitter: float = float(jitter)

    @classmethod
    def from_config(cls, gp_config) -> "KernelParams":
        return cls(gp_config.sigma_d, gp_config.length_scales, gp_config.jitter)


class GpDataset:
    """
    Regressors z_k = x_k and observed Agent-2 accelerations y_k.

    Appending is unbounded unless a capacity is given, in which case the oldest pair is evicted first.
    """

    def __init__(self, capacity: Optional[int] = None) -> None:
        if capacity is not None and capacity < 1:
            raise ValueError("Invalid capacity. Must be None or a positive integer.")

        self.capacity: Optional[int] = capacity
        self.Z: list[np.ndarray] = []
        self.y: list[float] = []
        self.evicted: int = 0

    @property
    def n_D(self) -> int:
        return len(self.y)

    def append(self, z, y: float) -> None:
        self.Z.append(np.asarray(z, dtype=float).copy())
        self.y.append(float(y))

        if self.capacity is not None and len(self.y) > self.capacity:
            self.Z.pop(0)
            self.y.pop(0)
            self.evicted += 1

    def inputs(self) -> np.ndarray:
        return np.array(self.Z).reshape(-1, 4)

    def targets(self) -> np.ndarray:
        return np.array(self.y, dtype=float)

    def save_dataset_to_csv(self, filepath: str) -> None:
        data = np.column_stack([self.inputs(), self.targets()]) if self.n_D else np.empty((0, 5))
        save_to_csv(pd.DataFrame(data, columns=DATASET_COLUMNS), filepath,
                    f"GP dataset with {self.n_D} observations saved to {filepath}.")

    @classmethod
    def load_dataset_from_csv(cls, filepath: str, capacity: Optional[int] = None) -> "GpDataset":
        try:
            df = pd.read_csv(filepath, float_precision="round_trip")
        except (OSError, pd.errors.ParserError) as e:
            logger.error(f"Failed to load GP dataset from {filepath}: {e}")
            raise

        if list(df.columns) != DATASET_COLUMNS:
            raise ValueError(f"Invalid dataset header {list(df.columns)}. Must be {DATASET_COLUMNS}.")

        dataset = cls(capacity)
        for row in df.to_numpy(dtype=float):
            dataset.append(row[:4], row[4])
        logger.info(f"Loaded {dataset.n_D} GP observations from {filepath}.")
        return dataset


class GpPosterior:
    """
    Cached posterior of the Agent-2 acceleration GP.

    The mean is always k(z, support) @ weights. The variance is
    k(z, z) - |chol^-1 k|^2 (+ |chol_b^-1 chol^-1 k|^2 in sparse mode).
    """

    def __init__(self, params: KernelParams, mode: str, support: np.ndarray, weights: np.ndarray,
                 chol: Optional[np.ndarray] = None, chol_b: Optional[np.ndarray] = None) -> None:
        if mode not in ("prior", "exact", "sparse"):
            raise ValueError("Invalid mode. Must be 'prior', 'exact' or 'sparse'.")

        self.params: KernelParams = params
        self.mode: str = mode
        self.support: np.ndarray = np.asarray(support, dtype=float).reshape(-1, 4)
        self.weights: np.ndarray = np.asarray(weights, dtype=float)
        self.chol: Optional[np.ndarray] = chol
        self.chol_b: Optional[np.ndarray] = chol_b

        # Numerical event counters
        self.variance_evaluations: int = 0
        self.variance_clamps: int = 0
        self.psd_projections: int = 0

    @property
    def clamp_fraction(self) -> float:
        if self.variance_evaluations == 0:
            return 0.0
        return self.variance_clamps / self.variance_evaluations


class JointCovariance:
    """Joint covariance of the predicted state and the GP output at one step of the performance horizon."""

    def __init__(self, Sigma_x, Sigma_xd, Sigma_d: float) -> None:
        self.Sigma_x: np.ndarray = np.asarray(Sigma_x, dtype=float).reshape(4, 4)
        self.Sigma_xd: np.ndarray = np.asarray(Sigma_xd, dtype=float).reshape(4)
        self.Sigma_d: float = float(Sigma_d)

    def matrix(self) -> np.ndarray:
        joint = np.zeros((5, 5))
        joint[:4, :4] = self.Sigma_x
        joint[:4, 4] = self.Sigma_xd
        joint[4, :4] = self.Sigma_xd
        joint[4, 4] = self.Sigma_d
        return joint

    def is_psd(self, tol: float = 1e-10) -> bool:
        joint = self.matrix()
        if not np.allclose(joint, joint.T, atol=tol):
            return False
        return bool(np.linalg.eigvalsh(joint).min() >= -tol)
