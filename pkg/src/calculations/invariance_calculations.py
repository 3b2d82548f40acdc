import itertools
import time
from typing import Optional

import numpy as np
from loguru import logger
from scipy.optimize import linprog

from src.LinearModel import DS, DV, V1, LinearModel, DisturbanceSegment
from src.SafetyParams import SafetyParams
from src.TerminalSets import CertificateReport, HalfspaceSet, TerminalSets
from src.calculations.sets_calculations import propagate_disturbance_margins
from src.exceptions import CertificationFailure

# Tolerance for grid states to count as members of the set being verified
MEMBERSHIP_TOL = 1e-9


def horizon_gain(model: LinearModel, N: int) -> np.ndarray:
    """
    A^N B2: how one Agent-2 acceleration moves the nominal terminal state when the plan is shifted by a step.
    """
    return model.matrix_power_B2(N)


def omega_behind(p: SafetyParams, v_max: float, e_N: float, r1: float, kappa1: float, dv1: float) -> HalfspaceSet:
    """
    Merge-behind set: Agent 2 ahead by the headway gap plus the terminal tube e_N, and by enough extra gap to
    absorb a closing speed above dv1 over kappa1 seconds.
    """
    gap = p.d_min + p.safety_margin + e_N + r1
    normals = [[1.0, 0.0, 0.0, -p.tau],
               [1.0, kappa1, 0.0, -p.tau],
               [0.0, 0.0, 0.0, 1.0],
               [0.0, 0.0, 0.0, -1.0]]
    offsets = [gap, gap + kappa1 * dv1, 0.0, -v_max]
    labels = ["headway", "closing_headway", "v1_min", "v1_max"]
    return HalfspaceSet("behind", normals, offsets, labels)


def front_gap(p: SafetyParams, v_max: float, e_N: float, r2: float) -> float:
    return p.d_min + p.safety_margin + p.tau * v_max + e_N + r2


def omega_front(p: SafetyParams, v_max: float, e_N: float, r2: float, s_front: float, lam: float) -> HalfspaceSet:
    """
    Merge-in-front set: Agent 1 ahead and at least as fast as Agent 2, with a lead that covers the front gap
    plus lam seconds of Agent 2 speeding up to v_max.

    The lead row reads -delta_s + lam * v2 >= gap + lam * v_max with v2 = delta_v + v1.
    """
    gap = front_gap(p, v_max, e_N, r2)
    normals = [[-1.0, lam, 0.0, lam],
               [0.0, -1.0, 0.0, 0.0],
               [0.0, 0.0, 1.0, 0.0],
               [0.0, 0.0, 0.0, 1.0],
               [0.0, 0.0, 0.0, -1.0]]
    offsets = [gap + lam * v_max, 0.0, s_front, 0.0, -v_max]
    labels = ["lead", "not_closing", "s1_front", "v1_min", "v1_max"]
    return HalfspaceSet("front", normals, offsets, labels)


def omega_front_pass(p: SafetyParams, v_max: float, e_N: float, r2: float, s_front: float, lam: float,
                     model: LinearModel, disturbance: DisturbanceSegment, N: int) -> HalfspaceSet:
    """
    Passing set: Agent 1 ahead and pulling away by at least the horizon's worth of Agent-2 acceleration.

    Not invariant on its own. A state either stays (Agent 1 matches the worst acceleration of Agent 2) or,
    once Agent 1 is capped at v_max, enters omega_front.
    """
    Ts = model.Ts
    gain = horizon_gain(model, N)[DS]
    w_max = disturbance.u2_max
    pull = Ts * N * w_max
    lead = front_gap(p, v_max, e_N, r2) + gain * w_max + (lam - Ts) * (pull + Ts * w_max)
    normals = [[-1.0, 0.0, 0.0, 0.0],
               [0.0, -1.0, 0.0, 0.0],
               [0.0, 0.0, 1.0, 0.0],
               [0.0, 0.0, 0.0, 1.0],
               [0.0, 0.0, 0.0, -1.0]]
    offsets = [lead, pull, s_front, 0.0, -v_max]
    labels = ["lead", "pulling_away", "s1_front", "v1_min", "v1_max"]
    return HalfspaceSet("front_pass", normals, offsets, labels)


def terminal_pieces(p: SafetyParams, model: LinearModel, disturbance: DisturbanceSegment, model_config,
                    terminal_config, N: int, r1: float, r2: float, kappa1: float, dv1: float) -> tuple[dict, dict]:
    """The terminal set pieces for a horizon N with their handover targets (every piece lists itself first)."""
    e_N = propagate_disturbance_margins(model, disturbance, N)[N][DS]
    lam = horizon_gain(model, N)[DS] / model.Ts
    v_max = model_config.v_max

    pieces = {"behind": omega_behind(p, v_max, e_N, r1, kappa1, dv1),
              "front": omega_front(p, v_max, e_N, r2, terminal_config.s_front, lam)}
    handover = {"behind": ["behind"], "front": ["front"]}
    if terminal_config.passing:
        pieces["front_pass"] = omega_front_pass(p, v_max, e_N, r2, terminal_config.s_front, lam, model,
                                                disturbance, N)
        handover["front_pass"] = ["front_pass", "front"]
    return pieces, handover


def disturbance_extremes(v2, model: LinearModel, disturbance: DisturbanceSegment, model_config) -> np.ndarray:
    """
    Realisable extremes of u2 given the Agent-2 speed bounds [v2_min, v_max], shape (..., 2).

    Falls back to the full segment when v2 itself is out of bounds.
    """
    v2 = np.asarray(v2, dtype=float)
    low = np.maximum(disturbance.u2_min, (model_config.v2_min - v2) / model.Ts)
    high = np.minimum(disturbance.u2_max, (model_config.v_max - v2) / model.Ts)
    invalid = low > high
    low = np.where(invalid, disturbance.u2_min, low)
    high = np.where(invalid, disturbance.u2_max, high)
    return np.stack([low, high], axis=-1)


def _affine_slacks(states: np.ndarray, halfspaces: HalfspaceSet, model: LinearModel,
                   offsets: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Successor slacks as affine functions c + d * u of the Agent-1 input, shapes (n_states, n_rows) each.

    ``offsets`` (n_states, n_rows) adds the disturbance part of every row; one call per disturbance extreme.
    """
    constants = states @ model.A.T @ halfspaces.normals.T - halfspaces.offsets
    if offsets is not None:
        constants = constants + offsets
    slopes = np.broadcast_to(halfspaces.normals @ model.B1, constants.shape)
    return constants, slopes


def _max_min_affine(constants: np.ndarray, slopes: np.ndarray, low: float, high: float) -> tuple[np.ndarray,
                                                                                                  np.ndarray]:
    """
    Exact max over u in [low, high] of min_k (c_k + d_k u), row by row.

    The optimum of a concave piecewise-affine function sits at an end of the interval or where two pieces cross.
    """
    n, k = constants.shape
    first, second = np.triu_indices(k, 1)
    dc = constants[:, first] - constants[:, second]
    dd = slopes[:, second] - slopes[:, first]
    with np.errstate(divide="ignore", invalid="ignore"):
        crossings = np.where(np.abs(dd) > 1e-15, dc / dd, low)
    crossings = np.clip(crossings, low, high)
    candidates = np.concatenate([np.full((n, 1), low), np.full((n, 1), high), crossings], axis=1)

    values = (constants[:, None, :] + candidates[:, :, None] * slopes[:, None, :]).min(axis=2)
    best = np.argmax(values, axis=1)
    rows = np.arange(n)
    return values[rows, best], candidates[rows, best]


def robust_input(states, halfspaces: HalfspaceSet, model: LinearModel, disturbance: DisturbanceSegment,
                 model_config, gain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Best worst-case successor slack and the input attaining it for x+ = A x + B1 u + gain * u2, over both
    realisable extremes of u2 (the successor is affine in u2).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    extremes = disturbance_extremes(states[:, DV] + states[:, V1], model, disturbance, model_config)
    projection = halfspaces.normals @ gain
    blocks = [_affine_slacks(states, halfspaces, model, extremes[:, [i]] * projection[None, :]) for i in range(2)]
    constants = np.concatenate([block[0] for block in blocks], axis=1)
    slopes = np.concatenate([block[1] for block in blocks], axis=1)
    return _max_min_affine(constants, slopes, model_config.u1_min, model_config.u1_max)


def terminal_control_input(halfspaces: HalfspaceSet, x, model: LinearModel, model_config) -> float:
    """The input that keeps the known successor A x + B1 u deepest inside the set (the terminal control law)."""
    if halfspaces.size == 0:
        return 0.0
    constants, slopes = _affine_slacks(np.asarray(x, dtype=float).reshape(1, 4), halfspaces, model)
    _, inputs = _max_min_affine(constants, slopes, model_config.u1_min, model_config.u1_max)
    return float(inputs[0])


def _grid(verify_config, model_config) -> np.ndarray:
    density = verify_config.grid_density
    v1_range = verify_config.v1_range or [0.0, model_config.v_max]
    axes = [np.linspace(*verify_config.ds_range, density), np.linspace(*verify_config.dv_range, density),
            np.linspace(*verify_config.s1_range, density), np.linspace(*v1_range, density)]
    return np.array(list(itertools.product(*axes)))


def _snap_axis(normal: np.ndarray) -> int:
    return int(np.flatnonzero(normal)[0])


def sample_states(halfspaces: HalfspaceSet, model_config, verify_config) -> np.ndarray:
    """
    Grid states of the set plus their projections onto every boundary facet and every pair of facets.

    Only states with a physically admissible Agent-2 speed are kept.
    """
    grid = _grid(verify_config, model_config)
    batches = [grid]

    for i in range(halfspaces.size):
        normal, offset = halfspaces.normals[i], halfspaces.offsets[i]
        axis = _snap_axis(normal)
        snapped = grid.copy()
        snapped[:, axis] += (offset - snapped @ normal) / normal[axis]
        batches.append(snapped)

    for i, j in itertools.combinations(range(halfspaces.size), 2):
        axes = [_snap_axis(halfspaces.normals[i]), _snap_axis(halfspaces.normals[j])]
        if axes[0] == axes[1]:
            continue
        block = halfspaces.normals[[i, j]][:, axes]
        if abs(np.linalg.det(block)) < 1e-12:
            continue
        snapped = grid.copy()
        residual = halfspaces.offsets[[i, j]] - snapped @ halfspaces.normals[[i, j]].T
        snapped[:, axes] += np.linalg.solve(block, residual.T).T
        batches.append(snapped)

    states = np.unique(np.vstack(batches), axis=0)
    if halfspaces.size:
        states = states[np.min(halfspaces.slacks(states), axis=1) >= -MEMBERSHIP_TOL]

    v2 = states[:, DV] + states[:, V1]
    admissible = (v2 >= model_config.v2_min - MEMBERSHIP_TOL) & (v2 <= model_config.v_max + MEMBERSHIP_TOL)
    return states[admissible]


def verify_rci(halfspaces: HalfspaceSet, model: LinearModel, disturbance: DisturbanceSegment, model_config,
               verify_config, N: int = 1, targets: Optional[list] = None) -> CertificateReport:
    """
    Check robust control invariance on sampled states: for each one some input must move the nominal terminal
    state into one of the target sets for both realisable disturbance extremes, the disturbance entering with
    the horizon gain A^N B2 (N = 1 is the plain one-step successor).

    Without targets the set must map into itself.
    """
    start = time.perf_counter()
    targets = targets or [halfspaces]
    details = {"grid_density": verify_config.grid_density, "horizon": N, "halfspaces": halfspaces.describe(),
               "targets": [target.name for target in targets]}

    if halfspaces.size == 0:
        return CertificateReport(halfspaces.name, True, np.inf, details={**details, "states_checked": 0})

    gain = horizon_gain(model, N)
    states = sample_states(halfspaces, model_config, verify_config)

    worst_slack = np.inf
    counterexample = None
    chunk = verify_config.chunk_size
    for begin in range(0, states.shape[0], chunk):
        batch = states[begin:begin + chunk]
        best = np.max([robust_input(batch, target, model, disturbance, model_config, gain)[0]
                       for target in targets], axis=0)
        index = int(np.argmin(best))
        if best[index] < worst_slack:
            worst_slack = float(best[index])
            counterexample = batch[index]

    certified = worst_slack >= -verify_config.slack_tol
    details["states_checked"] = int(states.shape[0])
    elapsed_ms = (time.perf_counter() - start) * 1000
    logger.info(f"Invariance check of {halfspaces.name}: {states.shape[0]} states, worst slack "
                f"{worst_slack:.4e}, certified={certified} ({elapsed_ms:.1f} ms).")

    return CertificateReport(halfspaces.name, certified, worst_slack,
                             None if certified else counterexample, details)


def check_disjoint(first: HalfspaceSet, second: HalfspaceSet) -> bool:
    """True when the intersection LP is infeasible."""
    normals = np.vstack([first.normals, second.normals])
    offsets = np.concatenate([first.offsets, second.offsets])
    result = linprog(np.zeros(4), A_ub=-normals, b_ub=-offsets, bounds=[(None, None)] * 4, method="highs")
    return result.status == 2


def certify_pieces(pieces: dict, handover: dict, model: LinearModel, disturbance: DisturbanceSegment,
                   model_config, verify_config, N: int) -> tuple[list[CertificateReport], bool]:
    """Invariance report per piece (into its handover targets) and whether behind is disjoint from the rest."""
    reports = [verify_rci(piece, model, disturbance, model_config, verify_config, N,
                          [pieces[name] for name in handover[key]])
               for key, piece in pieces.items()]
    disjoint = all(check_disjoint(pieces["behind"], piece) for key, piece in pieces.items() if key != "behind")
    return reports, disjoint


def build_terminal_sets(model: LinearModel, disturbance: DisturbanceSegment, p: SafetyParams, model_config,
                        terminal_config, verify_config, N: int) -> TerminalSets:
    """
    Build the terminal set pieces the solver imposes for horizon N and certify them against the shifted plan;
    on failure the buffers are inflated and the check repeated.

    Raises CertificationFailure with the last failing report once the inflation budget is exhausted.
    """
    r1, r2 = terminal_config.r1, terminal_config.r2
    kappa1, dv1 = terminal_config.kappa1, terminal_config.dv1

    last_report = None
    for attempt in range(terminal_config.max_inflations + 1):
        pieces, handover = terminal_pieces(p, model, disturbance, model_config, terminal_config, N, r1, r2,
                                           kappa1, dv1)
        reports, disjoint = certify_pieces(pieces, handover, model, disturbance, model_config, verify_config, N)

        if all(report.certified for report in reports) and disjoint:
            buffers = {"r1": r1, "r2": r2, "kappa1": kappa1, "dv1": dv1, "s_front": terminal_config.s_front,
                       "inflations": attempt}
            logger.success(f"Terminal sets for N={N} certified after {attempt} inflation(s): {buffers}.")
            return TerminalSets(pieces, handover, N, buffers, reports)

        failing = [report for report in reports if not report.certified]
        last_report = failing[0] if failing else CertificateReport("disjointness", False, 0.0)
        logger.warning(f"Terminal set certification attempt {attempt} failed ({last_report}); inflating buffers.")

        kappa1 += terminal_config.kappa_step
        dv1 += terminal_config.dv1_step
        r1 += terminal_config.r_step
        r2 += terminal_config.r_step

    raise CertificationFailure("No terminal set buffers within the inflation budget certify invariance.",
                               last_report)
