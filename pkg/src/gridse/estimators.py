"""WLS problem assembly and solvers.

Nonlinear formulations (conventional, simultaneous polar/rect) iterate
Gauss-Newton on the gain system J^T R^-1 J dx = J^T R^-1 r with the
slack column eliminated, so 2N-1 unknowns are solved.  The DC and
rectangular-phasor formulations have constant Jacobians and solve the
normal equations once.

Plain Gauss-Newton, no damping or line search: the problem is mildly
nonlinear around operating states and divergence is reported as a
non-converged result instead of being masked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix, issparse

from .errors import (
    EmptyMeasurementSet,
    FlatStartSingularity,
    InputError,
    SingularGain,
    UnsupportedKind,
)
from .functions import dc_rows, evaluate_row, evaluate_value, linear_rows_rectstate
from .measurements import (
    ANGLE_KINDS,
    DC_KINDS,
    LEGACY_KINDS,
    PHASOR_POLAR_KINDS,
    PHASOR_RECT_KINDS,
    CovarianceModel,
    MeasurementSet,
)
from .network import AdmittanceMatrix, NetworkModel, assemble_admittance
from .states import POLAR, RECTANGULAR, StateVector, wrap_angles

log = logging.getLogger(__name__)


class Formulation(str, Enum):
    CONVENTIONAL = "conventional"
    SIMULTANEOUS_POLAR = "simultaneous_polar"
    SIMULTANEOUS_RECT = "simultaneous_rect"
    LINEAR_RECT = "linear_rect"
    DC = "dc"

    def __str__(self):
        return self.value


ADMISSIBLE_KINDS = {
    Formulation.CONVENTIONAL: LEGACY_KINDS,
    Formulation.SIMULTANEOUS_POLAR: LEGACY_KINDS | PHASOR_POLAR_KINDS,
    Formulation.SIMULTANEOUS_RECT: LEGACY_KINDS | PHASOR_RECT_KINDS,
    Formulation.LINEAR_RECT: PHASOR_RECT_KINDS,
    Formulation.DC: DC_KINDS,
}

GAUSS_NEWTON_FORMULATIONS = (
    Formulation.CONVENTIONAL,
    Formulation.SIMULTANEOUS_POLAR,
    Formulation.SIMULTANEOUS_RECT,
)

NORMAL = "normal"
ORTHOGONAL = "orthogonal"


@dataclass
class SolverConfig:
    max_iterations: int = 50
    step_tolerance: float = 1e-8
    linear_system_method: str = NORMAL
    neglect_phasor_covariance: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.step_tolerance <= 0.0:
            raise ValueError("step_tolerance must be > 0")
        if self.linear_system_method not in (NORMAL, ORTHOGONAL):
            raise ValueError(
                f"linear_system_method must be {NORMAL!r} or {ORTHOGONAL!r}")


@dataclass
class EstimationResult:
    """Solution plus convergence diagnostics.

    x_hat is the full StateVector for problem-level solves and the raw
    unknown vector for bare linear_wls systems.  iterations counts the
    Gauss-Newton updates larger than the step tolerance; the final
    sub-tolerance increment is applied but not counted, so a linear
    model reports exactly one iteration.
    """
    x_hat: object
    converged: bool
    iterations: int
    objective_trace: list = field(default_factory=list)
    max_step_trace: list = field(default_factory=list)
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class GainSystem:
    """One linearization of the WLS problem: rows, covariance, residuals.

    j spans the solved (slack-eliminated) unknowns.  Observable problems
    yield a symmetric positive definite gain matrix j^T R^-1 j; a failed
    factorization surfaces as SingularGain.
    """
    j: object
    covariance: CovarianceModel
    r: np.ndarray

    def solve(self, method: str = NORMAL) -> np.ndarray:
        """State increment from the gain system (or the one-shot WLS
        solution when r holds plain measurement values)."""
        if method == ORTHOGONAL:
            return _solve_orthogonal(self.j, self.covariance.whitener(), self.r)
        return _solve_normal(self.j, self.covariance.inverse(), self.r)


class EstimationProblem:
    """A measurement set bound to a network under one formulation.

    Exposes h(x), the Jacobian rows, wrapped residuals, and the free
    (slack-eliminated) column set that the solvers work with.
    """

    def __init__(self, net: NetworkModel, y: AdmittanceMatrix,
                 mset: MeasurementSet, formulation: Formulation,
                 covariance: CovarianceModel):
        self.net = net
        self.y = y
        self.mset = mset
        self.formulation = formulation
        self.covariance = covariance
        n = net.n_buses
        self._angle_rows = np.array(
            [m.kind in ANGLE_KINDS for m in mset], dtype=bool)
        if formulation == Formulation.DC:
            self.full_dim = n
            fixed = net.slack_bus - 1
            self.fixed_value = net.slack_angle
            self.h_matrix = dc_rows(net, mset)
        elif formulation == Formulation.LINEAR_RECT:
            if net.slack_angle != 0.0:
                raise InputError(
                    "the rectangular-state formulation anchors the slack "
                    "imaginary part and needs a zero slack angle")
            self.full_dim = 2 * n
            fixed = n + net.slack_bus - 1
            self.fixed_value = 0.0
            self.h_matrix = linear_rows_rectstate(net, mset)
        else:
            self.full_dim = 2 * n
            fixed = net.slack_bus - 1
            self.fixed_value = net.slack_angle
            self.h_matrix = None
        self.fixed_index = fixed
        self.free_indices = np.array(
            [k for k in range(self.full_dim) if k != fixed], dtype=int)

    @property
    def m(self) -> int:
        return len(self.mset)

    @property
    def n(self) -> int:
        """Number of solved unknowns (slack eliminated)."""
        return self.full_dim - 1

    @property
    def is_linear(self) -> bool:
        return self.h_matrix is not None

    def initial_state(self) -> StateVector:
        """Flat start in the formulation's coordinates."""
        coords = RECTANGULAR if self.formulation == Formulation.LINEAR_RECT else POLAR
        slack_value = 0.0 if coords == RECTANGULAR else self.net.slack_angle
        return StateVector.flat(self.net.n_buses, self.net.slack_bus,
                                slack_value, coords)

    def _state_columns(self, x: StateVector) -> np.ndarray:
        if self.formulation == Formulation.DC:
            return x.angles
        return x.values

    def values(self, x: StateVector) -> np.ndarray:
        """h(x) for every row; never raises on flat-singular currents."""
        if self.is_linear:
            return self.h_matrix @ self._state_columns(x)
        return np.array([
            evaluate_value(self.net, self.y, x, m.kind, m.at) for m in self.mset
        ])

    def residuals(self, x: StateVector) -> np.ndarray:
        """z - h(x), with angle rows wrapped to the principal branch."""
        r = self.mset.values() - self.values(x)
        if self._angle_rows.any():
            r[self._angle_rows] = wrap_angles(r[self._angle_rows])
        return r

    def rows(self, x: StateVector):
        """(h, J, active) for one Gauss-Newton iteration.

        J spans the full column set; rows whose gradient is undefined at
        x (flat-start current singularities) come back inactive with
        their value still filled in.
        """
        h = np.empty(self.m)
        active = np.ones(self.m, dtype=bool)
        rows, cols, data = [], [], []
        for r, m in enumerate(self.mset):
            try:
                fr = evaluate_row(self.net, self.y, x, m.kind, m.at)
            except FlatStartSingularity:
                h[r] = evaluate_value(self.net, self.y, x, m.kind, m.at)
                active[r] = False
                continue
            h[r] = fr.value
            for c, v in fr.gradient.items():
                rows.append(r)
                cols.append(c)
                data.append(v)
        j = coo_matrix((data, (rows, cols)), shape=(self.m, self.full_dim)).tocsr()
        return h, j, active


def assemble_problem(net: NetworkModel, mset: MeasurementSet,
                     formulation: Formulation, *,
                     neglect_phasor_covariance: bool = False,
                     y: AdmittanceMatrix | None = None) -> EstimationProblem:
    """Bind a network and measurement set under a formulation.

    Rejects measurement kinds outside the formulation's family and
    empty sets; builds the covariance as a diagonal of the recorded
    variances, keeping the 2x2 rectangular-phasor blocks unless they
    are explicitly neglected.
    """
    formulation = Formulation(formulation)
    if len(mset) == 0:
        raise EmptyMeasurementSet("cannot estimate from an empty measurement set")
    allowed = ADMISSIBLE_KINDS[formulation]
    for m in mset:
        if m.kind not in allowed:
            raise UnsupportedKind(
                f"{m.kind} is not admissible in the {formulation} formulation")
    mset.validate_against(net)
    if neglect_phasor_covariance:
        blocks = ()
    else:
        blocks = tuple((c.rows[0], c.rows[1], c.cov) for c in mset.correlations)
    covariance = CovarianceModel(mset.variances(), blocks)
    if y is None:
        y = assemble_admittance(net)
    return EstimationProblem(net, y, mset, formulation, covariance)


def objective(problem: EstimationProblem, x: StateVector) -> float:
    """WLS objective r^T R^-1 r at a state (all rows, wrapped angles)."""
    r = problem.residuals(x)
    return float(r @ (problem.covariance.inverse() @ r))


def _solve_normal(a, rinv, r):
    """Solve (A^T R^-1 A) dx = A^T R^-1 r via symmetric factorization."""
    g = (a.T @ rinv @ a)
    if issparse(g):
        g = g.toarray()
    rhs = a.T @ (rinv @ r)
    try:
        factor = scipy.linalg.cho_factor(g)
    except scipy.linalg.LinAlgError as exc:
        raise SingularGain(f"gain matrix factorization failed: {exc}") from exc
    return scipy.linalg.cho_solve(factor, rhs)


def _solve_orthogonal(a, whitener, r):
    """Solve the whitened least-squares system by QR factorization."""
    aw = whitener @ a
    if issparse(aw):
        aw = aw.toarray()
    bw = whitener @ r
    q, rr = np.linalg.qr(aw)
    diag = np.abs(np.diag(rr))
    if aw.shape[0] < aw.shape[1] or diag.min() <= aw.shape[1] * np.finfo(float).eps * max(diag.max(), 1.0):
        raise SingularGain("whitened Jacobian is rank deficient")
    return scipy.linalg.solve_triangular(rr, q.T @ bw)


def _increment(a, covariance, r, active, method):
    if not np.all(active):
        a = a[active]
        r = r[active]
        covariance = covariance.restrict(active)
    return GainSystem(a, covariance, r).solve(method)


def gauss_newton(problem: EstimationProblem, x0: StateVector | None = None,
                 cfg: SolverConfig | None = None) -> EstimationResult:
    """Iterate the gain system until the state increment stalls.

    Rows with undefined gradients (flat-start current singularities)
    are dropped for the affected iteration only, with a logged warning;
    if any were dropped at the converging iterate the result is marked
    not converged.  A singular gain raises SingularGain; hitting the
    iteration cap returns the partial result with converged=False.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    x = (x0 if x0 is not None else problem.initial_state()).copy()
    expect = RECTANGULAR if problem.formulation == Formulation.LINEAR_RECT else POLAR
    if x.coordinates != expect:
        raise InputError(
            f"{problem.formulation} needs a {expect} start, got {x.coordinates}")
    if x.slack_bus != problem.net.slack_bus:
        raise InputError("start state pins a different slack bus than the network")
    x.values[x.slack_index] = x.slack_value
    z = problem.mset.values()
    free = problem.free_indices
    converged = False
    iterations = 0
    objective_trace: list[float] = []
    max_step_trace: list[float] = []
    dropped_at_last = False
    for _ in range(cfg.max_iterations):
        if problem.is_linear:
            h = problem.h_matrix @ problem._state_columns(x)
            j = problem.h_matrix
            active = np.ones(problem.m, dtype=bool)
        else:
            h, j, active = problem.rows(x)
        dropped_at_last = not active.all()
        if dropped_at_last:
            log.warning("dropping %d flat-singular row(s) for this iteration",
                        int((~active).sum()))
        r = z - h
        if problem._angle_rows.any():
            r[problem._angle_rows] = wrap_angles(r[problem._angle_rows])
        a = j[:, free]
        dx = _increment(a, problem.covariance, r, active, cfg.linear_system_method)
        if problem.formulation == Formulation.DC:
            x.angles[free] += dx
        else:
            x.values[free] += dx
        step = float(np.max(np.abs(dx))) if dx.size else 0.0
        max_step_trace.append(step)
        obj = objective(problem, x)
        objective_trace.append(obj)
        if len(objective_trace) > 1 and obj > objective_trace[-2]:
            log.debug("objective increased from %.6e to %.6e",
                      objective_trace[-2], obj)
        if step <= cfg.step_tolerance:
            converged = not dropped_at_last
            break
        iterations += 1
    return EstimationResult(
        x_hat=x,
        converged=converged,
        iterations=iterations,
        objective_trace=objective_trace,
        max_step_trace=max_step_trace,
        residuals=problem.residuals(x),
    )


def linear_wls(h, r_model, z, method: str = NORMAL) -> EstimationResult:
    """One-shot WLS solve of (H^T R^-1 H) x = H^T R^-1 z.

    h is the constant Jacobian over the solved unknowns (already
    slack-reduced), r_model a CovarianceModel or plain variance vector,
    z the measurement values.  Returns the raw solution vector in
    x_hat with converged=True and iterations=1.
    """
    if not isinstance(r_model, CovarianceModel):
        r_model = CovarianceModel(np.asarray(r_model, dtype=float))
    z = np.asarray(z, dtype=float)
    if not issparse(h):
        h = np.asarray(h, dtype=float)
    active = np.ones(z.size, dtype=bool)
    x = _increment(h, r_model, z, active, method)
    resid = z - h @ x
    obj = float(resid @ (r_model.inverse() @ resid))
    return EstimationResult(
        x_hat=x,
        converged=True,
        iterations=1,
        objective_trace=[obj],
        max_step_trace=[],
        residuals=resid,
    )


def _solve_linear_problem(problem: EstimationProblem,
                          cfg: SolverConfig) -> EstimationResult:
    """Non-iterative solve for the DC and rectangular-state families."""
    z = problem.mset.values()
    h_full = problem.h_matrix
    fixed_col = h_full[:, [problem.fixed_index]].toarray().ravel()
    z_adj = z - fixed_col * problem.fixed_value
    reduced = h_full[:, problem.free_indices]
    raw = linear_wls(reduced, problem.covariance, z_adj,
                     method=cfg.linear_system_method)
    full = np.empty(problem.full_dim)
    full[problem.free_indices] = raw.x_hat
    full[problem.fixed_index] = problem.fixed_value
    n = problem.net.n_buses
    if problem.formulation == Formulation.DC:
        values = np.concatenate([full, np.ones(n)])
        state = StateVector(POLAR, values, problem.net.slack_bus,
                            problem.net.slack_angle)
    else:
        state = StateVector(RECTANGULAR, full, problem.net.slack_bus, 0.0)
    return EstimationResult(
        x_hat=state,
        converged=True,
        iterations=1,
        objective_trace=[objective(problem, state)],
        max_step_trace=[],
        residuals=problem.residuals(state),
    )


def solve(problem: EstimationProblem, cfg: SolverConfig | None = None,
          x0: StateVector | None = None) -> EstimationResult:
    """Dispatch to Gauss-Newton or the one-shot linear solve."""
    cfg = cfg if cfg is not None else SolverConfig()
    if problem.formulation in GAUSS_NEWTON_FORMULATIONS:
        return gauss_newton(problem, x0, cfg)
    return _solve_linear_problem(problem, cfg)


def result_to_dict(problem: EstimationProblem, result: EstimationResult) -> dict:
    """Result-file document: per-bus state plus per-row residuals."""
    state: StateVector = result.x_hat
    if state.coordinates == POLAR:
        theta = state.angles
        vmag = state.magnitudes
        re = vmag * np.cos(theta)
        im = vmag * np.sin(theta)
    else:
        re, im = state.re, state.im
        vmag = np.hypot(re, im)
        theta = np.arctan2(im, re)
    h = problem.values(state)
    z = problem.mset.values()
    sigmas = np.sqrt(problem.mset.variances())
    rows = []
    for k, m in enumerate(problem.mset):
        rows.append({
            "kind": m.kind.value,
            "at": list(m.at),
            "z": float(z[k]),
            "h": float(h[k]),
            "residual": float(result.residuals[k]),
            "normalized_residual": float(result.residuals[k] / sigmas[k]),
        })
    return {
        "formulation": problem.formulation.value,
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "objective_trace": [float(v) for v in result.objective_trace],
        "max_step_trace": [float(v) for v in result.max_step_trace],
        "state": {
            "buses": [
                {"id": i + 1, "V": float(vmag[i]), "theta": float(theta[i]),
                 "re": float(re[i]), "im": float(im[i])}
                for i in range(state.n_buses)
            ],
        },
        "residuals": rows,
    }
