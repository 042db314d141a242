"""Linear programming for transportation-style matching problems.

Solves the capacity-constrained placement LP with a revised primal simplex
(dense basis inverse, sparse columns) and extracts element-wise maximal or
minimal optimal dual prices on the capacity rows via a second LP over the
optimal-dual face.  The second LP is solved in its transposed orientation so
the row count stays at (#cases + #capacities) instead of (#pairs).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .model import CapacityProfile, Incompatible

EQ, LE, GE = 0, 1, 2

OPT_TOL = 1e-9
PIVOT_TOL = 1e-8
FEAS_TOL = 1e-7
# Slack when pinning the dual objective to its optimum.  The slack leaks into
# the extremal prices at a rate of roughly face_tol/(capacity), so it is kept
# well below the 1e-6 reporting tolerance and widened only on failure.
FACE_TOLS = (1e-9, 1e-7)
DEGEN_LIMIT = 64
REFACTOR_EVERY = 512

STATUS_OPTIMAL = 0
STATUS_ITER_LIMIT = 1
STATUS_UNBOUNDED = 2
STATUS_BAD_START = 3


class LpError(RuntimeError):
    pass


class LpInfeasible(LpError):
    pass


class LpUnbounded(LpError):
    pass


class LpNumericalFailure(LpError):
    """Iteration limit or unstable basis without convergence."""


def _identity_decorator(*args, **kwargs):
    def wrap(fn):
        return fn

    return wrap


if os.environ.get("DYNMATCH_DISABLE_JIT") == "1":
    njit = _identity_decorator
else:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        njit = _identity_decorator


@njit(cache=True)
def _refactorize(indptr, indices, data, c, b, basis):
    """Fresh basis inverse, basic solution, and duals for the given basis."""
    m = b.shape[0]
    B = np.zeros((m, m))
    for i in range(m):
        j = basis[i]
        for k in range(indptr[j], indptr[j + 1]):
            B[indices[k], i] = data[k]
    Binv = np.linalg.inv(B)
    xB = np.dot(Binv, b)
    cB = np.empty(m)
    for i in range(m):
        cB[i] = c[basis[i]]
    y = np.dot(cB, Binv)
    return Binv, xB, y


@njit(cache=True)
def _simplex_kernel(indptr, indices, data, c, b, basis, allowed, maxiter, degen_limit):
    """Primal simplex on max c'x s.t. Ax = b, x >= 0 from a feasible basis.

    Dantzig pricing with first-index tie-breaking; falls back to Bland's rule
    after `degen_limit` consecutive degenerate pivots.  Returns
    (status, iterations, xB, y, basis).
    """
    m = b.shape[0]
    n = c.shape[0]

    Binv, xB, y = _refactorize(indptr, indices, data, c, b, basis)
    for i in range(m):
        if xB[i] < -1e-6:
            return STATUS_BAD_START, 0, xB, y, basis
        if xB[i] < 0.0:
            xB[i] = 0.0

    in_basis = np.zeros(n, dtype=np.uint8)
    for i in range(m):
        in_basis[basis[i]] = 1

    iters = 0
    degen_streak = 0
    status = STATUS_ITER_LIMIT
    since_refactor = 0

    while iters < maxiter:
        iters += 1
        since_refactor += 1

        if since_refactor >= REFACTOR_EVERY:
            since_refactor = 0
            Binv, xB, y = _refactorize(indptr, indices, data, c, b, basis)
            for i in range(m):
                if xB[i] < 0.0:
                    xB[i] = 0.0

        # pricing
        q = -1
        rc_q = 0.0
        if degen_streak >= degen_limit:
            for j in range(n):
                if in_basis[j] == 1 or allowed[j] == 0:
                    continue
                rc = c[j]
                for k in range(indptr[j], indptr[j + 1]):
                    rc -= y[indices[k]] * data[k]
                if rc > OPT_TOL:
                    q = j
                    rc_q = rc
                    break
        else:
            best = OPT_TOL
            for j in range(n):
                if in_basis[j] == 1 or allowed[j] == 0:
                    continue
                rc = c[j]
                for k in range(indptr[j], indptr[j + 1]):
                    rc -= y[indices[k]] * data[k]
                if rc > best:
                    best = rc
                    q = j
            rc_q = best
        if q == -1:
            # candidate optimum: accept only if the basic reduced costs are
            # still consistent, otherwise refresh the factorization and retry
            err = 0.0
            for i in range(m):
                j = basis[i]
                rc = c[j]
                for k in range(indptr[j], indptr[j + 1]):
                    rc -= y[indices[k]] * data[k]
                if abs(rc) > err:
                    err = abs(rc)
            if err > 1e-9 and since_refactor > 0:
                since_refactor = 0
                Binv, xB, y = _refactorize(indptr, indices, data, c, b, basis)
                for i in range(m):
                    if xB[i] < 0.0:
                        xB[i] = 0.0
                continue
            status = STATUS_OPTIMAL
            break

        # ftran: d = Binv @ a_q
        d = np.zeros(m)
        for k in range(indptr[q], indptr[q + 1]):
            col = indices[k]
            v = data[k]
            for i in range(m):
                d[i] += Binv[i, col] * v

        # ratio test, ties to the smallest basis column index
        min_ratio = np.inf
        for i in range(m):
            if d[i] > PIVOT_TOL:
                ratio = xB[i] / d[i]
                if ratio < min_ratio:
                    min_ratio = ratio
        if min_ratio == np.inf:
            status = STATUS_UNBOUNDED
            break
        r = -1
        leave = np.int64(2 ** 62)
        for i in range(m):
            if d[i] > PIVOT_TOL:
                ratio = xB[i] / d[i]
                if ratio <= min_ratio + 1e-10 and basis[i] < leave:
                    r = i
                    leave = basis[i]
        theta = xB[r] / d[r]
        if theta < 0.0:
            theta = 0.0

        # dual update uses row r of the *old* inverse
        coef = rc_q / d[r]
        for j in range(m):
            y[j] += coef * Binv[r, j]

        for i in range(m):
            xB[i] -= theta * d[i]
            if xB[i] < 0.0:
                xB[i] = 0.0
        xB[r] = theta

        piv = d[r]
        for j in range(m):
            Binv[r, j] /= piv
        for i in range(m):
            if i != r:
                di = d[i]
                if di != 0.0:
                    for j in range(m):
                        Binv[i, j] -= di * Binv[r, j]

        in_basis[basis[r]] = 0
        in_basis[q] = 1
        basis[r] = q

        if theta <= 1e-11:
            degen_streak += 1
        else:
            degen_streak = 0

    return status, iters, xB, y, basis


class ColumnBuilder:
    """Accumulates sparse columns and emits CSC arrays for the kernel."""

    def __init__(self) -> None:
        self.rows: list[int] = []
        self.vals: list[float] = []
        self.ptr: list[int] = [0]
        self.cost: list[float] = []

    def add(self, rows: list[int], vals: list[float], cost: float) -> int:
        self.rows.extend(rows)
        self.vals.extend(vals)
        self.ptr.append(len(self.rows))
        self.cost.append(cost)
        return len(self.cost) - 1

    @property
    def ncols(self) -> int:
        return len(self.cost)

    def emit(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.asarray(self.ptr, dtype=np.int64),
            np.asarray(self.rows, dtype=np.int64),
            np.asarray(self.vals, dtype=np.float64),
            np.asarray(self.cost, dtype=np.float64),
        )


@dataclass
class SimplexResult:
    status: int
    value: float
    x: np.ndarray  # full column space, structural + slacks
    y: np.ndarray  # row duals
    basis: np.ndarray
    iterations: int


def solve_canonical(
    builder: ColumnBuilder,
    b: np.ndarray,
    senses: np.ndarray,
    *,
    crash_basis: list[int] | None = None,
    maxiter: int | None = None,
) -> SimplexResult:
    """Solve max c'x s.t. (Ax sense b), x >= 0.

    `crash_basis` entries index structural columns; slack columns are created
    here for non-equality rows and may be referenced as -(row+1).
    """
    m = b.shape[0]
    nstruct = builder.ncols
    if m == 0:
        return SimplexResult(STATUS_OPTIMAL, 0.0, np.zeros(nstruct), np.zeros(0), np.zeros(0, dtype=np.int64), 0)

    ptr, rows, vals, cost = builder.emit()
    slack_of_row = np.full(m, -1, dtype=np.int64)
    ext_rows = [rows]
    ext_vals = [vals]
    ext_ptr = list(ptr)
    ext_cost = [cost]
    ncols = nstruct
    for i in range(m):
        if senses[i] == EQ:
            continue
        ext_rows.append(np.asarray([i], dtype=np.int64))
        ext_vals.append(np.asarray([1.0 if senses[i] == LE else -1.0]))
        ext_ptr.append(ext_ptr[-1] + 1)
        ext_cost.append(np.asarray([0.0]))
        slack_of_row[i] = ncols
        ncols += 1

    def assemble(extra_rows=None, extra_vals=None, extra_cost=None):
        r = ext_rows + (extra_rows or [])
        v = ext_vals + (extra_vals or [])
        p = list(ext_ptr)
        for er in extra_rows or []:
            p.append(p[-1] + len(er))
        cst = ext_cost + (extra_cost or [])
        return (
            np.asarray(p, dtype=np.int64),
            np.concatenate(r) if r else np.zeros(0, dtype=np.int64),
            np.concatenate(v) if v else np.zeros(0),
            np.concatenate(cst) if cst else np.zeros(0),
        )

    if maxiter is None:
        maxiter = min(300_000, 60 * m + 2 * ncols + 2000)

    b64 = np.asarray(b, dtype=np.float64)

    if crash_basis is not None:
        basis = np.asarray(
            [j if j >= 0 else slack_of_row[-j - 1] for j in crash_basis], dtype=np.int64
        )
        if len(basis) != m or np.any(basis < 0):
            raise LpError("crash basis does not cover every row")
        iptr, iidx, idat, ic = assemble()
        allowed = np.ones(ncols, dtype=np.uint8)
        status, iters, xB, y, basis = _simplex_kernel(
            iptr, iidx, idat, ic, b64, basis.copy(), allowed, maxiter, DEGEN_LIMIT
        )
        if status != STATUS_BAD_START:
            return _finish(status, iters, xB, y, basis, ic, nstruct, ncols)
        # fall through to two-phase if the hint was infeasible

    # phase 1: artificial columns for rows a slack cannot start
    art_rows: list[np.ndarray] = []
    art_vals: list[np.ndarray] = []
    art_cost: list[np.ndarray] = []
    basis_list: list[int] = []
    n_art = 0
    for i in range(m):
        if senses[i] == LE and b[i] >= 0:
            basis_list.append(slack_of_row[i])
        elif senses[i] == GE and b[i] <= 0:
            basis_list.append(slack_of_row[i])
        else:
            art_rows.append(np.asarray([i], dtype=np.int64))
            art_vals.append(np.asarray([1.0 if b[i] >= 0 else -1.0]))
            art_cost.append(np.asarray([0.0]))
            basis_list.append(ncols + n_art)
            n_art += 1

    if n_art > 0:
        iptr, iidx, idat, _ = assemble(art_rows, art_vals, art_cost)
        total = ncols + n_art
        c1 = np.zeros(total)
        c1[ncols:] = -1.0
        allowed = np.ones(total, dtype=np.uint8)
        basis = np.asarray(basis_list, dtype=np.int64)
        status, it1, xB, y, basis = _simplex_kernel(
            iptr, iidx, idat, c1, b64, basis.copy(), allowed, maxiter, DEGEN_LIMIT
        )
        if status == STATUS_ITER_LIMIT:
            raise LpNumericalFailure(f"phase 1 hit the iteration limit ({maxiter})")
        art_sum = sum(xB[i] for i in range(m) if basis[i] >= ncols)
        if art_sum > 1e-6:
            raise LpInfeasible(f"phase 1 left artificial mass {art_sum:.3g}")
        # real costs for structural + slack columns, artificials pinned at 0
        c2 = np.zeros(total)
        c2[:ncols] = np.concatenate(ext_cost)
        allowed[ncols:] = 0
        status, it2, xB, y, basis = _simplex_kernel(
            iptr, iidx, idat, c2, b64, basis.copy(), allowed, maxiter, DEGEN_LIMIT
        )
        return _finish(status, it1 + it2, xB, y, basis, c2, nstruct, ncols)

    iptr, iidx, idat, ic = assemble()
    allowed = np.ones(ncols, dtype=np.uint8)
    basis = np.asarray(basis_list, dtype=np.int64)
    status, iters, xB, y, basis = _simplex_kernel(
        iptr, iidx, idat, ic, b64, basis.copy(), allowed, maxiter, DEGEN_LIMIT
    )
    return _finish(status, iters, xB, y, basis, ic, nstruct, ncols)


def _finish(status, iters, xB, y, basis, cost, nstruct, ncols) -> SimplexResult:
    if status == STATUS_ITER_LIMIT:
        raise LpNumericalFailure(f"simplex hit the iteration limit after {iters} pivots")
    if status == STATUS_UNBOUNDED:
        raise LpUnbounded("objective is unbounded above")
    if status == STATUS_BAD_START:
        raise LpError("crash basis was infeasible")
    x = np.zeros(ncols)
    value = 0.0
    for i in range(len(basis)):
        j = basis[i]
        if j < ncols:
            x[j] = xB[i]
            value += cost[j] * xB[i]
    return SimplexResult(status, value, x, y, np.asarray(basis), iters)


# ---------------------------------------------------------------------------
# Matching LP
# ---------------------------------------------------------------------------


@dataclass
class MatchLpSpec:
    """Column/row layout of one matching LP.

    Case rows are equality rows (aggregated identical cases share a row with
    multiplicity `counts`); finite, positive capacities get knapsack rows.
    Affiliates with infinite capacity have no row, which forces their price
    to zero structurally; affiliates with zero remaining capacity are dropped
    (their price is reported as 0 by convention and they can never receive a
    case).
    """

    row_case_ids: list[list[str]]  # member case ids per case row
    sizes: np.ndarray
    counts: np.ndarray
    cap_ids: list[str]
    caps: np.ndarray
    col_case: np.ndarray  # case row per structural column
    col_cap: np.ndarray  # capacity row per structural column, -1 if none
    col_u: np.ndarray
    col_aff_id: list[str]
    sink_id: str
    all_affiliates: list[str]
    sink_col_of_row: np.ndarray = field(default=None, repr=False)
    pair_col: dict = field(default=None, repr=False)  # (case row, affiliate id) -> column

    @property
    def n_case_rows(self) -> int:
        return len(self.row_case_ids)

    @property
    def n_cap_rows(self) -> int:
        return len(self.cap_ids)


def build_match_lp(
    cases,
    caps: CapacityProfile,
    sink_id: str,
    *,
    dedupe: bool = False,
    potentials: dict[str, float] | None = None,
    epsilon: float = 0.0,
) -> MatchLpSpec:
    """Lay out the matching LP for `cases` under remaining capacities.

    With `potentials`/`epsilon`, objective coefficients become the adjusted
    scores u - s*p + eps*s (eps only on non-sink columns).
    """
    cap_ids = sorted(
        a for a, c in caps.remaining.items() if c != np.inf and c > 0 and a != sink_id
    )
    cap_row = {a: i for i, a in enumerate(cap_ids)}
    zero_or_inf = {a for a, c in caps.remaining.items() if c == np.inf or c <= 0}

    groups: list[tuple[list, int]] = []  # (member cases, row index)
    if dedupe:
        by_sig: dict[tuple, int] = {}
        members: list[list] = []
        for case in cases:
            sig = case.characteristics()
            if sig in by_sig:
                members[by_sig[sig]].append(case)
            else:
                by_sig[sig] = len(members)
                members.append([case])
        groups = [(ms, i) for i, ms in enumerate(members)]
    else:
        groups = [([case], i) for i, case in enumerate(cases)]

    row_case_ids: list[list[str]] = []
    sizes = np.zeros(len(groups))
    counts = np.zeros(len(groups))
    col_case: list[int] = []
    col_cap: list[int] = []
    col_u: list[float] = []
    col_aff_id: list[str] = []
    sink_col_of_row = np.full(len(groups), -1, dtype=np.int64)

    p = potentials or {}
    for members_list, i in groups:
        rep = members_list[0]
        row_case_ids.append([c.id for c in members_list])
        sizes[i] = rep.size
        counts[i] = len(members_list)
        for aff_id in sorted(rep.scores):
            u = rep.scores[aff_id]
            if isinstance(u, Incompatible):
                continue
            if aff_id == sink_id:
                col_case.append(i)
                col_cap.append(-1)
                col_u.append(0.0)
                col_aff_id.append(aff_id)
                sink_col_of_row[i] = len(col_case) - 1
                continue
            if aff_id in zero_or_inf and aff_id not in cap_row:
                if caps.remaining.get(aff_id, 0) == np.inf:
                    adj = u - rep.size * p.get(aff_id, 0.0) + epsilon * rep.size
                    col_case.append(i)
                    col_cap.append(-1)
                    col_u.append(adj)
                    col_aff_id.append(aff_id)
                continue  # zero capacity: drop
            adj = u - rep.size * p.get(aff_id, 0.0) + epsilon * rep.size
            col_case.append(i)
            col_cap.append(cap_row[aff_id])
            col_u.append(adj)
            col_aff_id.append(aff_id)
        if sink_col_of_row[i] < 0:
            raise ValueError(f"case {rep.id!r} has no sink column; every case must allow {sink_id!r}")

    pair_col = {(int(i), a): j for j, (i, a) in enumerate(zip(col_case, col_aff_id))}
    return MatchLpSpec(
        row_case_ids=row_case_ids,
        sizes=sizes,
        counts=counts,
        cap_ids=cap_ids,
        caps=np.asarray([float(caps.remaining[a]) for a in cap_ids]),
        col_case=np.asarray(col_case, dtype=np.int64),
        col_cap=np.asarray(col_cap, dtype=np.int64),
        col_u=np.asarray(col_u, dtype=np.float64),
        col_aff_id=col_aff_id,
        sink_id=sink_id,
        all_affiliates=sorted(caps.remaining),
        sink_col_of_row=sink_col_of_row,
        pair_col=pair_col,
    )


def _primal_builder(spec: MatchLpSpec) -> tuple[ColumnBuilder, np.ndarray, np.ndarray]:
    nc = spec.n_case_rows
    builder = ColumnBuilder()
    for j in range(len(spec.col_case)):
        i = spec.col_case[j]
        rows = [int(i)]
        vals = [1.0]
        if spec.col_cap[j] >= 0:
            rows.append(nc + int(spec.col_cap[j]))
            vals.append(float(spec.sizes[i]))
        builder.add(rows, vals, float(spec.col_u[j]))
    b = np.concatenate([spec.counts, spec.caps])
    senses = np.concatenate(
        [np.full(nc, EQ, dtype=np.int64), np.full(spec.n_cap_rows, LE, dtype=np.int64)]
    )
    return builder, b, senses


@dataclass
class _PreparedLp:
    """Assembled kernel arrays of a matching LP, reusable across solves that
    differ only in the right-hand side (fixed cases, consumed capacity)."""

    iptr: np.ndarray
    iidx: np.ndarray
    idat: np.ndarray
    cost: np.ndarray
    nstruct: int
    ncols: int
    slack_col: np.ndarray  # per capacity row


def _prepare(spec: MatchLpSpec) -> _PreparedLp:
    prep = getattr(spec, "_prepared", None)
    if prep is not None:
        return prep
    nc = spec.n_case_rows
    ncap = spec.n_cap_rows
    nnz = int(len(spec.col_case) + np.count_nonzero(spec.col_cap >= 0) + ncap)
    nstruct = len(spec.col_case)
    ncols = nstruct + ncap
    iptr = np.zeros(ncols + 1, dtype=np.int64)
    iidx = np.empty(nnz, dtype=np.int64)
    idat = np.empty(nnz, dtype=np.float64)
    cost = np.zeros(ncols, dtype=np.float64)
    pos = 0
    for j in range(nstruct):
        i = int(spec.col_case[j])
        iidx[pos] = i
        idat[pos] = 1.0
        pos += 1
        if spec.col_cap[j] >= 0:
            iidx[pos] = nc + int(spec.col_cap[j])
            idat[pos] = float(spec.sizes[i])
            pos += 1
        iptr[j + 1] = pos
        cost[j] = float(spec.col_u[j])
    slack_col = np.empty(ncap, dtype=np.int64)
    for t in range(ncap):
        iidx[pos] = nc + t
        idat[pos] = 1.0
        pos += 1
        iptr[nstruct + t + 1] = pos
        slack_col[t] = nstruct + t
    prep = _PreparedLp(iptr, iidx, idat, cost, nstruct, ncols, slack_col)
    object.__setattr__(spec, "_prepared", prep)
    return prep


@dataclass
class LpSolution:
    value: float
    x: np.ndarray  # structural columns of the spec
    spec: MatchLpSpec
    result: SimplexResult

    def assignment(self) -> dict[tuple[str, str], float]:
        """Per-case fractional weights, splitting any aggregated row evenly."""
        out: dict[tuple[str, str], float] = {}
        for j, w in enumerate(self.x):
            if w <= 1e-12:
                continue
            i = self.spec.col_case[j]
            share = w / self.spec.counts[i]
            for cid in self.spec.row_case_ids[i]:
                out[(cid, self.spec.col_aff_id[j])] = out.get((cid, self.spec.col_aff_id[j]), 0.0) + share
        return out


def solve_lp(
    spec: MatchLpSpec,
    warm_cols: dict[int, int] | None = None,
    b_case: np.ndarray | None = None,
    b_cap: np.ndarray | None = None,
) -> LpSolution:
    """Optimal basic solution of the LP relaxation.

    `warm_cols` optionally maps case rows to a starting column (one per row,
    jointly capacity-feasible); rows not named start at the sink.  `b_case`
    and `b_cap` override the right-hand side, which lets a search fix cases
    (row set to 0) and consume capacity without rebuilding the matrix.
    """
    prep = _prepare(spec)
    nc = spec.n_case_rows
    b = np.concatenate(
        [
            spec.counts if b_case is None else np.asarray(b_case, dtype=np.float64),
            spec.caps if b_cap is None else np.asarray(b_cap, dtype=np.float64),
        ]
    )
    m = b.shape[0]
    if m == 0 or prep.ncols == 0:
        res = SimplexResult(STATUS_OPTIMAL, 0.0, np.zeros(prep.ncols), np.zeros(m),
                            np.zeros(0, dtype=np.int64), 0)
        return LpSolution(0.0, res.x[: prep.nstruct], spec, res)
    basis = np.empty(m, dtype=np.int64)
    for i in range(nc):
        basis[i] = warm_cols.get(i, spec.sink_col_of_row[i]) if warm_cols else spec.sink_col_of_row[i]
    basis[nc:] = prep.slack_col
    maxiter = min(300_000, 60 * m + 2 * prep.ncols + 2000)
    allowed = np.ones(prep.ncols, dtype=np.uint8)
    status, iters, xB, y, basis = _simplex_kernel(
        prep.iptr, prep.iidx, prep.idat, prep.cost, b, basis.copy(), allowed, maxiter, DEGEN_LIMIT
    )
    res = _finish(status, iters, xB, y, basis, prep.cost, prep.nstruct, prep.ncols)
    return LpSolution(res.value, res.x[: prep.nstruct], spec, res)


@dataclass
class DualSolution:
    """Optimal dual prices on capacities plus per-case duals.

    `extremality` records whether the price vector is the element-wise
    maximal or minimal point of the optimal-dual face.
    """

    prices: dict[str, float]
    case_duals: dict[str, float]
    extremality: str
    primal_value: float

    def price_vector(self, affiliate_ids: list[str]) -> np.ndarray:
        return np.asarray([self.prices.get(a, 0.0) for a in affiliate_ids])


def extremal_duals(
    spec: MatchLpSpec,
    sense: str,
    *,
    verify_elementwise: bool = False,
    _objective_mask: np.ndarray | None = None,
) -> DualSolution:
    """Two-stage extremal dual extraction.

    Stage 1 solves the primal LP for its optimal value; stage 2 re-optimizes
    the sum of capacity prices over the optimal-dual face, maximizing for
    `sense="maximal"` and minimizing for `sense="minimal"`.  The face LP is
    solved in transposed orientation, so the requested prices appear as the
    row duals of its capacity rows.
    """
    if sense not in ("maximal", "minimal"):
        raise ValueError(f"sense must be 'maximal' or 'minimal', got {sense!r}")
    primal = solve_lp(spec)
    value = primal.value

    zero_prices = {a: 0.0 for a in spec.all_affiliates}
    if spec.n_cap_rows == 0:
        y = {cid: float(primal.result.y[i]) for i in range(spec.n_case_rows) for cid in spec.row_case_ids[i]}
        return DualSolution(zero_prices, y, sense, value)

    sigma = 1.0 if sense == "maximal" else -1.0
    d = np.ones(spec.n_cap_rows) if _objective_mask is None else _objective_mask
    y_rows, p_rows = _face_with_retry(spec, value, sigma, d)

    prices = dict(zero_prices)
    for i, a in enumerate(spec.cap_ids):
        prices[a] = max(0.0, float(p_rows[i]))
    case_duals = {
        cid: float(y_rows[i]) for i in range(spec.n_case_rows) for cid in spec.row_case_ids[i]
    }

    if verify_elementwise and _objective_mask is None:
        coord = np.empty(spec.n_cap_rows)
        for i in range(spec.n_cap_rows):
            mask = np.zeros(spec.n_cap_rows)
            mask[i] = 1.0
            _, p_i = _face_with_retry(spec, value, sigma, mask)
            coord[i] = max(0.0, p_i[i])
        current = np.asarray([prices[a] for a in spec.cap_ids])
        if np.max(np.abs(coord - current)) > 1e-7:
            # degenerate tie beyond tolerance: fall back to the per-coordinate
            # extremum and rebuild consistent case duals
            for i, a in enumerate(spec.cap_ids):
                prices[a] = float(coord[i])
            case_duals = _support_duals(spec, prices)

    return DualSolution(prices, case_duals, sense, value)


def _face_with_retry(
    spec: MatchLpSpec, value: float, sigma: float, d: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    last: LpError | None = None
    for tol in FACE_TOLS:
        try:
            return _solve_face_transposed(spec, value, sigma, d, tol)
        except (LpUnbounded, LpInfeasible) as exc:  # face empty at this slack
            last = exc
    raise LpNumericalFailure(f"dual face optimization failed: {last}")


def _solve_face_transposed(
    spec: MatchLpSpec, value: float, sigma: float, d: np.ndarray, face_tol: float
) -> tuple[np.ndarray, np.ndarray]:
    """Optimize sigma * (d . p) over the optimal-dual face.

    Works on the LP  max sum(u x) - V~ lam  s.t.
      sum_l x_(i,l) - n_i lam = 0        (case rows, =)
      sum_i s_i x_(i,l) - c_l lam <= -sigma d_l   (capacity rows)
    whose row duals are exactly the face-optimal (y, p).
    """
    nc = spec.n_case_rows
    ncap = spec.n_cap_rows
    v_hat = value + face_tol * (1.0 + abs(value))

    builder = ColumnBuilder()
    for j in range(len(spec.col_case)):
        i = spec.col_case[j]
        rows = [int(i)]
        vals = [1.0]
        if spec.col_cap[j] >= 0:
            rows.append(nc + int(spec.col_cap[j]))
            vals.append(float(spec.sizes[i]))
        builder.add(rows, vals, float(spec.col_u[j]))
    lam_rows = list(range(nc)) + [nc + i for i in range(ncap)]
    lam_vals = [-float(spec.counts[i]) for i in range(nc)] + [-float(c) for c in spec.caps]
    lam_col = builder.add(lam_rows, lam_vals, -v_hat)

    b = np.concatenate([np.zeros(nc), -sigma * d])
    senses = np.concatenate([np.full(nc, EQ, dtype=np.int64), np.full(ncap, LE, dtype=np.int64)])

    if sigma > 0:
        active = [i for i in range(ncap) if d[i] > 0]
        r_star = min(active, key=lambda i: spec.caps[i] / d[i])
        crash = [int(spec.sink_col_of_row[i]) for i in range(nc)]
        crash.append(lam_col)
        crash += [-(nc + i + 1) for i in range(ncap) if i != r_star]
    else:
        crash = [int(spec.sink_col_of_row[i]) for i in range(nc)]
        crash += [-(nc + i + 1) for i in range(ncap)]

    res = solve_canonical(builder, b, senses, crash_basis=crash)
    y = res.y[:nc].copy()
    p = res.y[nc:].copy()
    return y, p


def _support_duals(spec: MatchLpSpec, prices: dict[str, float]) -> dict[str, float]:
    """Smallest feasible case duals for a fixed price vector."""
    best = np.zeros(spec.n_case_rows)
    for j in range(len(spec.col_case)):
        i = spec.col_case[j]
        aff = spec.col_aff_id[j]
        margin = spec.col_u[j] - spec.sizes[i] * prices.get(aff, 0.0)
        if margin > best[i]:
            best[i] = margin
    return {cid: float(best[i]) for i in range(spec.n_case_rows) for cid in spec.row_case_ids[i]}
