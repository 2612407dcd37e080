"""Bus/branch grid model and nodal admittance matrix assembly.

Branches follow the two-port pi model: a series admittance obtained by
inverting r + jx, plus independent shunt admittances at each end.  Bus
shunts add to the matrix diagonal only.  All quantities are per-unit on
a common system base; the base MVA is carried for reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .errors import (
    DimensionMismatch,
    InputError,
    NotConnected,
    ZeroImpedance,
)


@dataclass(frozen=True)
class Bus:
    id: int
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    is_slack: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    gs_from: float = 0.0
    bs_from: float = 0.0
    gs_to: float = 0.0
    bs_to: float = 0.0


def branch_admittance(r: float, x: float) -> tuple[float, float]:
    """Series admittance g + jb of a branch from its impedance r + jx."""
    if r == 0.0 and x == 0.0:
        raise ZeroImpedance("branch with r = x = 0 has no finite admittance")
    d = r * r + x * x
    return r / d, -x / d


class AdmittanceMatrix:
    """Sparse complex nodal matrix Y with 1-based bus accessors."""

    def __init__(self, matrix: csr_matrix):
        m = matrix.tocsr()
        m.sum_duplicates()
        self._m = m

    @property
    def n(self) -> int:
        return self._m.shape[0]

    @property
    def nnz(self) -> int:
        return self._m.nnz

    def entry(self, i: int, j: int) -> complex:
        """Y[i, j] for 1-based bus ids (zero when not stored)."""
        return complex(self._m[i - 1, j - 1])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Stored row i as (1-based bus ids, complex values)."""
        m = self._m
        lo, hi = m.indptr[i - 1], m.indptr[i]
        return m.indices[lo:hi] + 1, m.data[lo:hi]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._m @ v

    def toarray(self) -> np.ndarray:
        return self._m.toarray()


class NetworkModel:
    """Validated, immutable bus/branch model.

    Buses must carry contiguous ids 1..N with exactly one slack bus,
    branches must join distinct existing buses with invertible series
    impedance, and the undirected graph must be connected.
    """

    def __init__(self, buses, branches, base_mva: float = 100.0, slack_angle: float = 0.0):
        buses = tuple(sorted(buses, key=lambda b: b.id))
        branches = tuple(branches)
        n = len(buses)
        if n == 0:
            raise InputError("network has no buses")
        ids = [b.id for b in buses]
        if ids != list(range(1, n + 1)):
            raise InputError(f"bus ids must form a contiguous 1..{n} set, got {ids}")
        slacks = [b.id for b in buses if b.is_slack]
        if len(slacks) != 1:
            raise InputError(f"exactly one slack bus required, found {len(slacks)}")
        for br in branches:
            if br.from_bus == br.to_bus:
                raise InputError(f"branch {br.from_bus}-{br.to_bus} joins a bus to itself")
            if not (1 <= br.from_bus <= n and 1 <= br.to_bus <= n):
                raise InputError(f"branch {br.from_bus}-{br.to_bus} references a missing bus")
            if br.r == 0.0 and br.x == 0.0:
                raise ZeroImpedance(f"branch {br.from_bus}-{br.to_bus} has r = x = 0")
        self.buses = buses
        self.branches = branches
        self.base_mva = float(base_mva)
        self.slack_bus = slacks[0]
        self.slack_angle = float(slack_angle)
        self._check_connected()
        self._ends: dict[tuple[int, int], list[int]] = {}
        for k, br in enumerate(branches):
            self._ends.setdefault((br.from_bus, br.to_bus), []).append(k)
            self._ends.setdefault((br.to_bus, br.from_bus), []).append(k)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def _check_connected(self):
        # Union-find over the undirected branch graph.
        parent = list(range(self.n_buses + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for br in self.branches:
            ra, rb = find(br.from_bus), find(br.to_bus)
            if ra != rb:
                parent[ra] = rb
        roots = {find(i) for i in range(1, self.n_buses + 1)}
        if len(roots) != 1:
            raise NotConnected(f"network not connected: {len(roots)} islands")

    def branch_between(self, i: int, j: int) -> tuple[Branch, bool]:
        """The unique branch joining buses i and j.

        Returns (branch, reversed) where reversed means the request was
        (to, from) relative to the stored orientation.  Parallel
        branches make a branch-attached measurement ambiguous and are
        rejected here; the admittance matrix still sums them.
        """
        ks = self._ends.get((i, j))
        if not ks:
            raise InputError(f"no branch between buses {i} and {j}")
        if len(ks) > 1:
            raise InputError(f"buses {i} and {j} are joined by {len(ks)} parallel "
                             "branches; branch measurements are ambiguous")
        br = self.branches[ks[0]]
        return br, br.from_bus != i

    def branches_at(self, i: int):
        """Branches incident to bus i, each oriented away from i.

        Yields (branch, reversed) pairs covering every incident end,
        parallel branches included.
        """
        seen = set()
        for (a, b), ks in self._ends.items():
            if a != i:
                continue
            for k in ks:
                if k in seen:
                    continue
                seen.add(k)
                br = self.branches[k]
                yield br, br.from_bus != i


def branch_end(br: Branch, reverse: bool) -> tuple[float, float, float, float]:
    """Series (g, b) plus the shunt (gs, bs) at the sending end."""
    g, b = branch_admittance(br.r, br.x)
    if reverse:
        return g, b, br.gs_to, br.bs_to
    return g, b, br.gs_from, br.bs_from


def assemble_admittance(net: NetworkModel) -> AdmittanceMatrix:
    """Build the nodal admittance matrix of the network.

    Coordinate-list assembly with duplicate entries summed, so parallel
    branches accumulate on the off-diagonals.  Each branch adds its
    series-plus-shunt admittance to both end diagonals and minus the
    series admittance to both off-diagonal positions; bus shunts add to
    the diagonal last.
    """
    rows, cols, data = [], [], []

    def add(i, j, y):
        rows.append(i - 1)
        cols.append(j - 1)
        data.append(y)

    for br in net.branches:
        g, b = branch_admittance(br.r, br.x)
        y = complex(g, b)
        f, t = br.from_bus, br.to_bus
        add(f, f, y + complex(br.gs_from, br.bs_from))
        add(t, t, y + complex(br.gs_to, br.bs_to))
        add(f, t, -y)
        add(t, f, -y)
    for bus in net.buses:
        if bus.shunt_g != 0.0 or bus.shunt_b != 0.0:
            add(bus.id, bus.id, complex(bus.shunt_g, bus.shunt_b))
    n = net.n_buses
    coo = coo_matrix((data, (rows, cols)), shape=(n, n), dtype=complex)
    return AdmittanceMatrix(coo.tocsr())


def injected_current(net: NetworkModel, y: AdmittanceMatrix, v: np.ndarray) -> np.ndarray:
    """Complex injection currents Y @ v for a full voltage vector."""
    v = np.asarray(v, dtype=complex)
    if v.shape != (net.n_buses,):
        raise DimensionMismatch(f"expected {net.n_buses} voltages, got {v.shape}")
    return y.matvec(v)


_NETWORK_KEYS = {"base_mva", "buses", "branches", "slack_angle"}
_BUS_KEYS = {"id", "shunt_g", "shunt_b", "slack"}
_BRANCH_KEYS = {"from", "to", "r", "x", "gs_from", "bs_from", "gs_to", "bs_to"}


def network_from_dict(doc: dict) -> NetworkModel:
    """Build a NetworkModel from the JSON document schema.

    Unknown keys are rejected at every level; absent shunt fields
    default to zero.  The optional top-level slack_angle (radians)
    overrides the default slack anchoring of zero.
    """
    if not isinstance(doc, dict):
        raise InputError("network document must be a JSON object")
    unknown = set(doc) - _NETWORK_KEYS
    if unknown:
        raise InputError(f"unknown network keys: {sorted(unknown)}")
    if "buses" not in doc or "branches" not in doc:
        raise InputError("network document needs 'buses' and 'branches'")
    buses = []
    for entry in doc["buses"]:
        bad = set(entry) - _BUS_KEYS
        if bad:
            raise InputError(f"unknown bus keys: {sorted(bad)}")
        if "id" not in entry:
            raise InputError("bus entry missing 'id'")
        buses.append(Bus(
            id=int(entry["id"]),
            shunt_g=float(entry.get("shunt_g", 0.0)),
            shunt_b=float(entry.get("shunt_b", 0.0)),
            is_slack=bool(entry.get("slack", False)),
        ))
    branches = []
    for entry in doc["branches"]:
        bad = set(entry) - _BRANCH_KEYS
        if bad:
            raise InputError(f"unknown branch keys: {sorted(bad)}")
        for key in ("from", "to", "r", "x"):
            if key not in entry:
                raise InputError(f"branch entry missing {key!r}")
        branches.append(Branch(
            from_bus=int(entry["from"]),
            to_bus=int(entry["to"]),
            r=float(entry["r"]),
            x=float(entry["x"]),
            gs_from=float(entry.get("gs_from", 0.0)),
            bs_from=float(entry.get("bs_from", 0.0)),
            gs_to=float(entry.get("gs_to", 0.0)),
            bs_to=float(entry.get("bs_to", 0.0)),
        ))
    return NetworkModel(
        buses, branches,
        base_mva=float(doc.get("base_mva", 100.0)),
        slack_angle=float(doc.get("slack_angle", 0.0)),
    )


def load_network(path) -> NetworkModel:
    """Load and validate a network JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read network file {path}: {exc}") from exc
    return network_from_dict(doc)
