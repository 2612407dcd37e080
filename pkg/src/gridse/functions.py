"""Measurement functions h_i(x) and their analytic Jacobian rows.

Four families share this kernel:

* legacy rows over a polar state (power flows, injections, current
  magnitude, voltage magnitude),
* phasor rows in polar coordinates over a polar state (voltage and
  current magnitude/angle pairs),
* phasor rows in rectangular coordinates over a polar state (indirect
  real/imaginary measurements),
* constant-Jacobian rows: rectangular phasors over a rectangular state
  and the angle-only DC family.

State indexing convention: for an N-bus polar state, the angle of bus k
is column k-1 and its magnitude column N+k-1; rectangular states use
the same split for real/imaginary parts; the DC family uses N angle
columns.  Gradients are sparse maps from column index to partial.

Current magnitude and current angle rows divide by the current
magnitude; below ``CURRENT_GUARD`` the value is still defined but the
partials are not, and gradient evaluation raises FlatStartSingularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .errors import FlatStartSingularity, InputError, UnsupportedKind
from .measurements import MeasurementKind, MeasurementSet
from .network import AdmittanceMatrix, NetworkModel, branch_end
from .states import POLAR, StateVector

# Below this current magnitude (p.u.) the magnitude/angle partials are
# treated as undefined; the classic hazard is a flat start across a
# branch with no shunts.
CURRENT_GUARD = 1e-9


@dataclass(frozen=True)
class BranchCoefficients:
    """Directed-end coefficients for current magnitude/angle rows.

    The *_a set describes the current phasor as a linear map of the end
    voltages; the *_c set is its quadratic counterpart for the squared
    magnitude.  They satisfy a_c = a_a**2 + b_a**2, b_c = c_a**2 +
    d_a**2, c_c = a_a*c_a + b_a*d_a and d_c = c_a*b_a - d_a*a_a.
    """
    a_a: float
    b_a: float
    c_a: float
    d_a: float
    a_c: float
    b_c: float
    c_c: float
    d_c: float

    @classmethod
    def from_params(cls, g: float, b: float, gs: float, bs: float) -> "BranchCoefficients":
        a_a, b_a = g + gs, b + bs
        c_a, d_a = g, b
        return cls(
            a_a=a_a, b_a=b_a, c_a=c_a, d_a=d_a,
            a_c=a_a * a_a + b_a * b_a,
            b_c=c_a * c_a + d_a * d_a,
            c_c=a_a * c_a + b_a * d_a,
            d_c=c_a * b_a - d_a * a_a,
        )


@dataclass
class FunctionRow:
    """Scalar measurement function value and its sparse gradient."""
    value: float
    gradient: dict[int, float]


def _oriented(net: NetworkModel, i: int, j: int):
    br, rev = net.branch_between(i, j)
    return branch_end(br, rev)


def _coeffs(net: NetworkModel, i: int, j: int) -> BranchCoefficients:
    g, b, gs, bs = _oriented(net, i, j)
    return BranchCoefficients.from_params(g, b, gs, bs)


def _polar(x: StateVector):
    if x.coordinates != POLAR:
        raise InputError("this measurement function needs a polar state")
    n = x.n_buses
    return x.values[:n], x.values[n:], n


# ---------------------------------------------------------------------------
# legacy rows, polar state

def h_p_flow(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
             i: int, j: int) -> FunctionRow:
    """Active power flow i -> j."""
    th, v, n = _polar(x)
    g, b, gs, _ = _oriented(net, i, j)
    vi, vj = v[i - 1], v[j - 1]
    tij = th[i - 1] - th[j - 1]
    c, s = math.cos(tij), math.sin(tij)
    value = vi * vi * (g + gs) - vi * vj * (g * c + b * s)
    d_ti = vi * vj * (g * s - b * c)
    return FunctionRow(value, {
        i - 1: d_ti,
        j - 1: -d_ti,
        n + i - 1: -vj * (g * c + b * s) + 2.0 * vi * (g + gs),
        n + j - 1: -vi * (g * c + b * s),
    })


def h_q_flow(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
             i: int, j: int) -> FunctionRow:
    """Reactive power flow i -> j."""
    th, v, n = _polar(x)
    g, b, _, bs = _oriented(net, i, j)
    vi, vj = v[i - 1], v[j - 1]
    tij = th[i - 1] - th[j - 1]
    c, s = math.cos(tij), math.sin(tij)
    value = -vi * vi * (b + bs) - vi * vj * (g * s - b * c)
    d_ti = -vi * vj * (g * c + b * s)
    return FunctionRow(value, {
        i - 1: d_ti,
        j - 1: -d_ti,
        n + i - 1: -vj * (g * s - b * c) - 2.0 * vi * (b + bs),
        n + j - 1: -vi * (g * s - b * c),
    })


def i_mag_value(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                i: int, j: int) -> float:
    """Current magnitude on branch end i -> j (never raises)."""
    th, v, _ = _polar(x)
    k = _coeffs(net, i, j)
    vi, vj = v[i - 1], v[j - 1]
    tij = th[i - 1] - th[j - 1]
    c, s = math.cos(tij), math.sin(tij)
    sq = k.a_c * vi * vi + k.b_c * vj * vj - 2.0 * vi * vj * (k.c_c * c - k.d_c * s)
    return math.sqrt(max(sq, 0.0))


def h_i_mag(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
            i: int, j: int) -> FunctionRow:
    """Current magnitude on branch end i -> j.

    Raises FlatStartSingularity when the magnitude is below the guard;
    every partial divides by the value.
    """
    th, v, n = _polar(x)
    k = _coeffs(net, i, j)
    vi, vj = v[i - 1], v[j - 1]
    tij = th[i - 1] - th[j - 1]
    c, s = math.cos(tij), math.sin(tij)
    value = i_mag_value(net, y, x, i, j)
    if value < CURRENT_GUARD:
        raise FlatStartSingularity(
            f"current magnitude {value:.3e} on branch {i}-{j} leaves the "
            "Jacobian row undefined")
    d_ti = vi * vj * (k.d_c * c + k.c_c * s) / value
    return FunctionRow(value, {
        i - 1: d_ti,
        j - 1: -d_ti,
        n + i - 1: (vj * (k.d_c * s - k.c_c * c) + k.a_c * vi) / value,
        n + j - 1: (vi * (k.d_c * s - k.c_c * c) + k.b_c * vj) / value,
    })


def h_p_inj(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
            i: int) -> FunctionRow:
    """Active power injection at bus i, evaluated from the Y row."""
    th, v, n = _polar(x)
    ids, vals = y.row(i)
    vi, ti = v[i - 1], th[i - 1]
    value = 0.0
    d_ti = 0.0
    d_vi = 0.0
    grad: dict[int, float] = {}
    for bus, yij in zip(ids, vals):
        gij, bij = yij.real, yij.imag
        if bus == i:
            value += vi * vi * gij
            d_vi += 2.0 * vi * gij
            continue
        vj, tij = v[bus - 1], ti - th[bus - 1]
        c, s = math.cos(tij), math.sin(tij)
        value += vi * vj * (gij * c + bij * s)
        d_ti += vi * vj * (-gij * s + bij * c)
        d_vi += vj * (gij * c + bij * s)
        grad[bus - 1] = vi * vj * (gij * s - bij * c)
        grad[n + bus - 1] = vi * (gij * c + bij * s)
    grad[i - 1] = d_ti
    grad[n + i - 1] = d_vi
    return FunctionRow(value, grad)


def h_q_inj(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
            i: int) -> FunctionRow:
    """Reactive power injection at bus i, evaluated from the Y row."""
    th, v, n = _polar(x)
    ids, vals = y.row(i)
    vi, ti = v[i - 1], th[i - 1]
    value = 0.0
    d_ti = 0.0
    d_vi = 0.0
    grad: dict[int, float] = {}
    for bus, yij in zip(ids, vals):
        gij, bij = yij.real, yij.imag
        if bus == i:
            value -= vi * vi * bij
            d_vi -= 2.0 * vi * bij
            continue
        vj, tij = v[bus - 1], ti - th[bus - 1]
        c, s = math.cos(tij), math.sin(tij)
        value += vi * vj * (gij * s - bij * c)
        d_ti += vi * vj * (gij * c + bij * s)
        d_vi += vj * (gij * s - bij * c)
        grad[bus - 1] = -vi * vj * (gij * c + bij * s)
        grad[n + bus - 1] = vi * (gij * s - bij * c)
    grad[i - 1] = d_ti
    grad[n + i - 1] = d_vi
    return FunctionRow(value, grad)


def h_v_mag(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
            i: int) -> FunctionRow:
    _, v, n = _polar(x)
    return FunctionRow(v[i - 1], {n + i - 1: 1.0})


def h_v_ang(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
            i: int) -> FunctionRow:
    th, _, _ = _polar(x)
    return FunctionRow(th[i - 1], {i - 1: 1.0})


# ---------------------------------------------------------------------------
# current phasor components, polar state

def _current_rect(net, x, i, j):
    th, v, _ = _polar(x)
    k = _coeffs(net, i, j)
    vi, vj = v[i - 1], v[j - 1]
    ti, tj = th[i - 1], th[j - 1]
    re = vi * (k.a_a * math.cos(ti) - k.b_a * math.sin(ti)) \
        - vj * (k.c_a * math.cos(tj) - k.d_a * math.sin(tj))
    im = vi * (k.a_a * math.sin(ti) + k.b_a * math.cos(ti)) \
        - vj * (k.c_a * math.sin(tj) + k.d_a * math.cos(tj))
    return k, re, im


def i_ang_value(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                i: int, j: int) -> float:
    """Current phasor angle on branch end i -> j via the four-quadrant
    arctangent (never raises; 0 for an exactly zero current)."""
    _, re, im = _current_rect(net, x, i, j)
    return math.atan2(im, re)


def h_i_ang(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
            i: int, j: int) -> FunctionRow:
    """Current phasor angle on branch end i -> j.

    Partials divide by the squared current magnitude (an arctangent
    derivative), which also makes the two angle partials sum to one:
    rotating both end voltages must rotate the current with them.
    """
    th, v, n = _polar(x)
    k, re, im = _current_rect(net, x, i, j)
    sq = re * re + im * im
    value = math.atan2(im, re)
    if math.sqrt(sq) < CURRENT_GUARD:
        raise FlatStartSingularity(
            f"current magnitude {math.sqrt(sq):.3e} on branch {i}-{j} leaves "
            "the angle row undefined")
    vi, vj = v[i - 1], v[j - 1]
    tij = th[i - 1] - th[j - 1]
    c, s = math.cos(tij), math.sin(tij)
    cross = k.d_c * s - k.c_c * c
    return FunctionRow(value, {
        i - 1: (k.a_c * vi * vi + cross * vi * vj) / sq,
        j - 1: (k.b_c * vj * vj + cross * vi * vj) / sq,
        n + i - 1: -vj * (k.c_c * s + k.d_c * c) / sq,
        n + j - 1: vi * (k.c_c * s + k.d_c * c) / sq,
    })


# ---------------------------------------------------------------------------
# rectangular phasor rows over a polar state (indirect measurements)

def h_v_re_polarstate(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                      i: int) -> FunctionRow:
    th, v, n = _polar(x)
    c, s = math.cos(th[i - 1]), math.sin(th[i - 1])
    return FunctionRow(v[i - 1] * c, {i - 1: -v[i - 1] * s, n + i - 1: c})


def h_v_im_polarstate(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                      i: int) -> FunctionRow:
    th, v, n = _polar(x)
    c, s = math.cos(th[i - 1]), math.sin(th[i - 1])
    return FunctionRow(v[i - 1] * s, {i - 1: v[i - 1] * c, n + i - 1: s})


def h_i_re_polarstate(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                      i: int, j: int) -> FunctionRow:
    th, v, n = _polar(x)
    k, re, _ = _current_rect(net, x, i, j)
    vi, vj = v[i - 1], v[j - 1]
    ci, si = math.cos(th[i - 1]), math.sin(th[i - 1])
    cj, sj = math.cos(th[j - 1]), math.sin(th[j - 1])
    return FunctionRow(re, {
        i - 1: -vi * (k.a_a * si + k.b_a * ci),
        j - 1: vj * (k.c_a * sj + k.d_a * cj),
        n + i - 1: k.a_a * ci - k.b_a * si,
        n + j - 1: -k.c_a * cj + k.d_a * sj,
    })


def h_i_im_polarstate(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                      i: int, j: int) -> FunctionRow:
    th, v, n = _polar(x)
    k, _, im = _current_rect(net, x, i, j)
    vi, vj = v[i - 1], v[j - 1]
    ci, si = math.cos(th[i - 1]), math.sin(th[i - 1])
    cj, sj = math.cos(th[j - 1]), math.sin(th[j - 1])
    return FunctionRow(im, {
        i - 1: vi * (k.a_a * ci - k.b_a * si),
        j - 1: -vj * (k.c_a * cj - k.d_a * sj),
        n + i - 1: k.a_a * si + k.b_a * ci,
        n + j - 1: -k.c_a * sj - k.d_a * cj,
    })


# ---------------------------------------------------------------------------
# constant-Jacobian families

def linear_rows_rectstate(net: NetworkModel, mset: MeasurementSet) -> csr_matrix:
    """Constant Jacobian H over the 2N rectangular state columns.

    Only rectangular phasor kinds are admissible; h(x) = H @ x holds
    exactly for every state, so the rows double as the value map.
    """
    n = net.n_buses
    rows, cols, data = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        data.append(v)

    for r, m in enumerate(mset):
        if m.kind == MeasurementKind.V_RE:
            put(r, m.at[0] - 1, 1.0)
        elif m.kind == MeasurementKind.V_IM:
            put(r, n + m.at[0] - 1, 1.0)
        elif m.kind in (MeasurementKind.I_RE, MeasurementKind.I_IM):
            i, j = m.at
            g, b, gs, bs = _oriented(net, i, j)
            if m.kind == MeasurementKind.I_RE:
                put(r, i - 1, g + gs)
                put(r, n + i - 1, -(b + bs))
                put(r, j - 1, -g)
                put(r, n + j - 1, b)
            else:
                put(r, i - 1, b + bs)
                put(r, n + i - 1, g + gs)
                put(r, j - 1, -b)
                put(r, n + j - 1, -g)
        else:
            raise UnsupportedKind(
                f"{m.kind} is not linear in the rectangular state")
    return coo_matrix((data, (rows, cols)), shape=(len(mset), 2 * n)).tocsr()


def dc_susceptance(net: NetworkModel, br) -> float:
    """Series susceptance used by the DC family: resistance neglected,
    so b = -1/x."""
    if br.x == 0.0:
        raise InputError(
            f"branch {br.from_bus}-{br.to_bus} has zero reactance; the DC "
            "model cannot represent it")
    return -1.0 / br.x


def dc_rows(net: NetworkModel, mset: MeasurementSet) -> csr_matrix:
    """Constant Jacobian H over the N angle columns of the DC family."""
    n = net.n_buses
    rows, cols, data = [], [], []
    for r, m in enumerate(mset):
        if m.kind == MeasurementKind.P_FLOW_DC:
            i, j = m.at
            br, _ = net.branch_between(i, j)
            b = dc_susceptance(net, br)
            rows += [r, r]
            cols += [i - 1, j - 1]
            data += [-b, b]
        elif m.kind == MeasurementKind.P_INJ_DC:
            i = m.at[0]
            bsum = 0.0
            for br, rev in net.branches_at(i):
                b = dc_susceptance(net, br)
                jbus = br.from_bus if rev else br.to_bus
                rows.append(r)
                cols.append(jbus - 1)
                data.append(b)
                bsum += b
            rows.append(r)
            cols.append(i - 1)
            data.append(-bsum)
        elif m.kind == MeasurementKind.THETA:
            rows.append(r)
            cols.append(m.at[0] - 1)
            data.append(1.0)
        else:
            raise UnsupportedKind(f"{m.kind} does not belong to the DC family")
    return coo_matrix((data, (rows, cols)), shape=(len(mset), n)).tocsr()


# ---------------------------------------------------------------------------
# dispatch

_POLAR_ROWS = {
    MeasurementKind.P_FLOW: h_p_flow,
    MeasurementKind.Q_FLOW: h_q_flow,
    MeasurementKind.I_MAG: h_i_mag,
    MeasurementKind.P_INJ: h_p_inj,
    MeasurementKind.Q_INJ: h_q_inj,
    MeasurementKind.V_MAG: h_v_mag,
    MeasurementKind.V_MAG_PMU: h_v_mag,
    MeasurementKind.V_ANG_PMU: h_v_ang,
    MeasurementKind.I_MAG_PMU: h_i_mag,
    MeasurementKind.I_ANG_PMU: h_i_ang,
    MeasurementKind.V_RE: h_v_re_polarstate,
    MeasurementKind.V_IM: h_v_im_polarstate,
    MeasurementKind.I_RE: h_i_re_polarstate,
    MeasurementKind.I_IM: h_i_im_polarstate,
}


def evaluate_row(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                 kind: MeasurementKind, at: tuple[int, ...]) -> FunctionRow:
    """Value plus gradient of one polar-state measurement function."""
    try:
        fn = _POLAR_ROWS[kind]
    except KeyError:
        raise UnsupportedKind(f"{kind} has no polar-state row") from None
    return fn(net, y, x, *at)


def evaluate_value(net: NetworkModel, y: AdmittanceMatrix, x: StateVector,
                   kind: MeasurementKind, at: tuple[int, ...]) -> float:
    """Value of any measurement function at a polar state.

    DC kinds are evaluated with the DC (linearized) functions on the
    state angles; current magnitude/angle values never raise here.
    """
    if x.coordinates != POLAR:
        raise InputError("evaluate_value expects a polar state")
    th = x.angles
    if kind == MeasurementKind.I_MAG or kind == MeasurementKind.I_MAG_PMU:
        return i_mag_value(net, y, x, *at)
    if kind == MeasurementKind.I_ANG_PMU:
        return i_ang_value(net, y, x, *at)
    if kind == MeasurementKind.P_FLOW_DC:
        i, j = at
        br, _ = net.branch_between(i, j)
        return -dc_susceptance(net, br) * (th[i - 1] - th[j - 1])
    if kind == MeasurementKind.P_INJ_DC:
        i = at[0]
        total = 0.0
        for br, rev in net.branches_at(i):
            jbus = br.from_bus if rev else br.to_bus
            total -= dc_susceptance(net, br) * (th[i - 1] - th[jbus - 1])
        return total
    if kind == MeasurementKind.THETA:
        return th[at[0] - 1]
    return evaluate_row(net, y, x, kind, at).value
