import numpy as np
import scipy.linalg
from loguru import logger
from scipy.spatial.distance import cdist

from src.GpModel import GpDataset, GpPosterior, JointCovariance, KernelParams
from src.LinearModel import DV, LinearModel
from src.exceptions import FactorizationFailure

# Eigenvalue tolerance below which a propagated covariance is projected back onto the PSD cone
PSD_TOL = 1e-10

# Distance below which a training input counts as one of the inducing inputs
COVER_TOL = 1e-12


def kernel_matrix(Z1: np.ndarray, Z2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Squared-exponential Gram block between the rows of Z1 and Z2."""
    scaled_1 = np.atleast_2d(Z1) / params.length_scales
    scaled_2 = np.atleast_2d(Z2) / params.length_scales
    sq_dist = np.sum((scaled_1[:, None, :] - scaled_2[None, :, :]) ** 2, axis=2)
    return params.sigma_d ** 2 * np.exp(-0.5 * sq_dist)


def kernel(z, z_prime, params: KernelParams) -> float:
    return float(kernel_matrix(np.asarray(z, dtype=float), np.asarray(z_prime, dtype=float), params)[0, 0])


def observe(x_k: np.ndarray, u1: float, x_next: np.ndarray, model: LinearModel) -> float:
    """Recover the Agent-2 acceleration from a measured transition (the delta_v row of the pseudo-inverse of B2)."""
    return float((x_next[DV] - x_k[DV] + model.Ts * u1) / model.Ts)


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(matrix, lower=True)
    except np.linalg.LinAlgError as e:
        logger.error(f"Cholesky factorization of the {what} failed: {e}")
        raise FactorizationFailure(f"The {what} is not positive definite after jitter.") from e


def fit(dataset: GpDataset, params: KernelParams) -> GpPosterior:
    """Exact posterior; an empty dataset gives the zero-mean prior."""
    if dataset.n_D == 0:
        return GpPosterior(params, "prior", np.empty((0, 4)), np.empty(0))

    Z = dataset.inputs()
    gram = kernel_matrix(Z, Z, params) + params.jitter * np.eye(dataset.n_D)
    chol = _cholesky(gram, "Gram matrix")
    weights = scipy.linalg.cho_solve((chol, True), dataset.targets())

    return GpPosterior(params, "exact", Z, weights, chol=chol)


def fit_sparse(dataset: GpDataset, inducing, params: KernelParams, sparse_threshold: int = 0) -> GpPosterior:
    """
    Pseudo-input (FITC) approximation with the given inducing inputs.

    Datasets with at most ``sparse_threshold`` points, or whose inputs are all inducing inputs, use the exact
    posterior instead.
    """
    if dataset.n_D == 0 or dataset.n_D <= sparse_threshold:
        return fit(dataset, params)

    U = np.asarray(inducing, dtype=float).reshape(-1, 4)
    if U.shape[0] == 0:
        raise ValueError("Invalid inducing set. At least one inducing input is required.")

    Z = dataset.inputs()
    if np.all(cdist(Z, U).min(axis=1) <= COVER_TOL):
        # every training input is an inducing input, where the approximation is the exact posterior
        return fit(dataset, params)

    y = dataset.targets()
    jitter = params.jitter

    chol_uu = _cholesky(kernel_matrix(U, U, params) + jitter * np.eye(U.shape[0]), "inducing Gram matrix")
    V = scipy.linalg.solve_triangular(chol_uu, kernel_matrix(U, Z, params), lower=True)

    # FITC diagonal correction; floor at jitter keeps it invertible
    lam = params.sigma_d ** 2 - np.sum(V ** 2, axis=0) + jitter
    lam = np.maximum(lam, jitter)

    V_scaled = V / lam
    chol_b = _cholesky(np.eye(U.shape[0]) + V_scaled @ V.T, "FITC B matrix")

    inner = scipy.linalg.cho_solve((chol_b, True), V_scaled @ y)
    weights = scipy.linalg.solve_triangular(chol_uu.T, inner, lower=False)

    return GpPosterior(params, "sparse", U, weights, chol=chol_uu, chol_b=chol_b)


def fit_auto(dataset: GpDataset, params: KernelParams, inducing, sparse_threshold: int) -> GpPosterior:
    """Exact posterior up to the threshold, sparse above it."""
    if dataset.n_D > sparse_threshold:
        return fit_sparse(dataset, inducing, params, sparse_threshold)
    return fit(dataset, params)


def posterior_mean(gp: GpPosterior, z) -> float:
    if gp.mode == "prior":
        return 0.0
    k = kernel_matrix(np.asarray(z, dtype=float), gp.support, gp.params)[0]
    return float(k @ gp.weights)


def posterior_var(gp: GpPosterior, z) -> float:
    """Predictive variance, clamped at zero from below (clamps are counted on the posterior)."""
    gp.variance_evaluations += 1
    prior = gp.params.sigma_d ** 2
    if gp.mode == "prior":
        return prior

    k = kernel_matrix(np.asarray(z, dtype=float), gp.support, gp.params)[0]
    projected = scipy.linalg.solve_triangular(gp.chol, k, lower=True)
    var = prior - float(projected @ projected)
    if gp.mode == "sparse":
        correction = scipy.linalg.solve_triangular(gp.chol_b, projected, lower=True)
        var += float(correction @ correction)

    if var < 0.0:
        gp.variance_clamps += 1
        logger.debug(f"Negative GP variance {var:.3e} clamped to zero.")
        var = 0.0
    return var


def posterior_mean_grad(gp: GpPosterior, z) -> np.ndarray:
    """Gradient of the posterior mean: sum_i w_i k(z, z_i) L^-2 (z_i - z)."""
    if gp.mode == "prior":
        return np.zeros(4)

    z = np.asarray(z, dtype=float)
    k = kernel_matrix(z, gp.support, gp.params)[0]
    diff = (gp.support - z) / gp.params.length_scales ** 2
    return (k * gp.weights) @ diff


def select_inducing(trajectory, M: int) -> np.ndarray:
    """M states at equally spaced time indices of a predicted trajectory (midpoint for M = 1)."""
    if M < 1:
        raise ValueError("Invalid inducing count. M must be at least 1.")

    trajectory = np.asarray(trajectory, dtype=float).reshape(-1, 4)
    n_states = trajectory.shape[0]
    last = n_states - 1

    if M >= n_states:
        return trajectory.copy()
    if M == 1:
        return trajectory[[last // 2]]

    indices = [min(int(np.floor(j * last / (M - 1) + 0.5)), last) for j in range(M)]
    return trajectory[indices]


def assemble_joint(gp: GpPosterior, z: np.ndarray, Sigma_x: np.ndarray) -> JointCovariance:
    """First-order Taylor joint covariance of (x, d(x)) around the mean z."""
    gradient = posterior_mean_grad(gp, z)
    Sigma_xd = Sigma_x @ gradient
    Sigma_d = float(gradient @ Sigma_x @ gradient) + posterior_var(gp, z)
    return JointCovariance(Sigma_x, Sigma_xd, Sigma_d)


def _project_psd(gp: GpPosterior, Sigma: np.ndarray) -> np.ndarray:
    Sigma = 0.5 * (Sigma + Sigma.T)
    eigenvalues, eigenvectors = np.linalg.eigh(Sigma)
    if eigenvalues.min() < -PSD_TOL:
        gp.psd_projections += 1
        logger.warning(f"Propagated covariance projected onto the PSD cone (min eigenvalue {eigenvalues.min():.3e}).")
        Sigma = (eigenvectors * np.maximum(eigenvalues, 0.0)) @ eigenvectors.T
        Sigma = 0.5 * (Sigma + Sigma.T)
    return Sigma


def propagate(gp: GpPosterior, x_hat: np.ndarray, joint: JointCovariance, u1: float,
              model: LinearModel) -> tuple[np.ndarray, JointCovariance]:
    """
    One step of mean and covariance propagation through the GP-augmented model.

    ``joint`` must be assembled at x_hat; the returned joint is assembled at the new mean.
    """
    mean_next = model.A @ x_hat + model.B1 * u1 + model.B2 * posterior_mean(gp, x_hat)

    A, B2 = model.A, model.B2
    cross = np.outer(A @ joint.Sigma_xd, B2)
    Sigma_next = A @ joint.Sigma_x @ A.T + cross + cross.T + joint.Sigma_d * np.outer(B2, B2)
    Sigma_next = _project_psd(gp, Sigma_next)

    return mean_next, assemble_joint(gp, mean_next, Sigma_next)


def propagate_horizon(gp: GpPosterior, x0: np.ndarray, inputs, model: LinearModel):
    """Means and joint covariances along the performance horizon, starting from a deterministic state."""
    x0 = np.asarray(x0, dtype=float)
    means = [x0]
    joints = [assemble_joint(gp, x0, np.zeros((4, 4)))]
    for u1 in inputs:
        mean_next, joint_next = propagate(gp, means[-1], joints[-1], u1, model)
        means.append(mean_next)
        joints.append(joint_next)
    return np.array(means), joints


def agent2_pos_std(joint: JointCovariance) -> float:
    """Std of s2 = delta_s + s1; s1 is deterministic so only the delta_s variance contributes."""
    return float(np.sqrt(max(joint.Sigma_x[0, 0], 0.0)))
