"""Reduced basis additive Schwarz solvers and PCG baselines.

The reduced solver keeps one orthonormal basis per subdomain and solves
the Galerkin system over the coarse space plus the lifted local bases.
Whenever the reduced solution is not accurate enough, subdomains whose
local residual energy exceeds an adaptive threshold are enriched by one
Schwarz correction each, the affected reduced blocks are recomputed,
and the reduced system is solved again. Between consecutive systems of
a sequence the bases are either reset to the previous initial basis
plus the local piece of the converged solution, or kept in full.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .decomposition import (
    LocalOperators,
    apply_as_preconditioner,
    build_geneo_coarse,
    build_partition_of_unity,
    detect_changed_subdomains,
)
from .fem import assemble_local_neumann
from .linalg import ConvergenceFailure, IndefiniteMatrixError, factorize

STRATEGIES = ("pcg", "pcg-guess", "lrbas")


class LocalBasis:
    """Orthonormal basis of a subdomain's search space."""

    def __init__(self, n, vectors=None):
        self.n = n
        if vectors is None:
            vectors = np.zeros((n, 0))
        if vectors.shape[0] != n:
            raise ValueError("vector length does not match subdomain size")
        self.vectors = vectors

    @property
    def dim(self):
        return self.vectors.shape[1]

    def copy(self):
        return LocalBasis(self.n, self.vectors.copy())

    def append(self, y, drop_tol=1e-10):
        """Orthonormalize y against the basis and append it.

        Re-orthogonalized Gram-Schmidt; returns False and leaves the
        basis unchanged when the remainder falls below drop_tol times
        the input norm (the vector is numerically dependent).
        """
        y = np.asarray(y, dtype=np.float64)
        nrm0 = np.linalg.norm(y)
        if nrm0 == 0.0:
            return False
        v = y
        for _ in range(2):
            v = v - self.vectors @ (self.vectors.T @ v)
        nrm = np.linalg.norm(v)
        if nrm <= drop_tol * nrm0:
            return False
        self.vectors = np.hstack([self.vectors, (v / nrm)[:, None]])
        return True


class ReducedSystem:
    """Galerkin system over coarse space plus lifted local bases.

    Off-diagonal blocks exist only between neighboring subdomains; all
    blocks are kept separately so that enriching a subdomain recomputes
    exactly the blocks in its row and column.
    """

    def __init__(self, system, dec, coarse, bases, pivot_tol=1e-12):
        if len(bases) != dec.n_subdomains:
            raise ValueError("one basis per subdomain required")
        self.system = system
        self.dec = dec
        self.coarse = coarse
        self.bases = bases
        self.pivot_tol = pivot_tol
        csr = system.A.to_scipy()
        # sparse couplings A[idx_i, idx_j] for neighbor pairs, i <= j
        self.pairs = {}
        for i, nbs in enumerate(dec.neighbors):
            rows = csr[dec.subdomains[i].indices]
            for j in nbs:
                if i <= j:
                    self.pairs[(i, j)] = rows[:, dec.subdomains[j].indices].tocsr()
        self.blocks = {}
        self.coarse_blocks = [None] * dec.n_subdomains
        self.rhs_local = [None] * dec.n_subdomains
        self._coarse_coarse()
        for i in range(dec.n_subdomains):
            self._recompute_row(i)

    def _pair(self, i, j):
        """A[idx_i, idx_j] as something supporting @ with a dense matrix."""
        return self.pairs[(i, j)] if i <= j else self.pairs[(j, i)].T

    def _coarse_coarse(self):
        n0 = self.coarse.n0
        A00 = np.zeros((n0, n0))
        rhs0 = np.zeros(n0)
        off = self.coarse.offsets
        for s in range(self.dec.n_subdomains):
            Cs = self.coarse.blocks[s]
            if Cs.shape[1] == 0:
                continue
            rhs0[off[s]:off[s + 1]] = Cs.T @ self.system.f[self.dec.subdomains[s].indices]
            for t in self.dec.neighbors[s]:
                Ct = self.coarse.blocks[t]
                if t < s or Ct.shape[1] == 0:
                    continue
                blk = Cs.T @ (self._pair(s, t) @ Ct)
                A00[off[s]:off[s + 1], off[t]:off[t + 1]] = blk
                if t != s:
                    A00[off[t]:off[t + 1], off[s]:off[s + 1]] = blk.T
        self.A00 = 0.5 * (A00 + A00.T)
        self.rhs0 = rhs0

    def _recompute_row(self, i):
        """Recompute all blocks coupling subdomain i (basis of i changed)."""
        Bi = self.bases[i].vectors
        idx = self.dec.subdomains[i].indices
        self.rhs_local[i] = Bi.T @ self.system.f[idx]
        off = self.coarse.offsets
        cb = np.zeros((self.coarse.n0, Bi.shape[1]))
        for s in self.dec.neighbors[i]:
            Cs = self.coarse.blocks[s]
            if Cs.shape[1]:
                cb[off[s]:off[s + 1], :] = Cs.T @ (self._pair(s, i) @ Bi)
        self.coarse_blocks[i] = cb
        for j in self.dec.neighbors[i]:
            Bj = self.bases[j].vectors
            a, b = min(i, j), max(i, j)
            blk = self.bases[a].vectors.T @ (self._pair(a, b) @ self.bases[b].vectors)
            if a == b:
                blk = 0.5 * (blk + blk.T)
            self.blocks[(a, b)] = blk

    def update(self, enriched):
        """Refresh the blocks touched by the enriched subdomains."""
        for i in np.asarray(enriched, dtype=np.int64).ravel():
            self._recompute_row(int(i))
        return self

    def dimensions(self):
        dims = [self.coarse.n0] + [b.dim for b in self.bases]
        return np.array(dims, dtype=np.int64)

    def assemble_dense(self):
        dims = self.dimensions()
        off = np.concatenate([[0], np.cumsum(dims)])
        nred = int(off[-1])
        M = np.zeros((nred, nred))
        rhs = np.zeros(nred)
        M[: dims[0], : dims[0]] = self.A00
        rhs[: dims[0]] = self.rhs0
        for i in range(self.dec.n_subdomains):
            si = slice(off[i + 1], off[i + 2])
            rhs[si] = self.rhs_local[i]
            cb = self.coarse_blocks[i]
            M[: dims[0], si] = cb
            M[si, : dims[0]] = cb.T
            for j in self.dec.neighbors[i]:
                if j < i:
                    continue
                blk = self.blocks[(i, j)]
                sj = slice(off[j + 1], off[j + 2])
                M[si, sj] = blk
                if j != i:
                    M[sj, si] = blk.T
        return M, rhs, off

    def solve(self):
        """Solve the reduced system; returns the global iterate and coefficients."""
        M, rhs, off = self.assemble_dense()
        if M.shape[0] == 0:
            return np.zeros(self.dec.grid.n_free), _Coefficients(np.zeros(0), [np.zeros(0)] * self.dec.n_subdomains)
        try:
            F = factorize(M, self.pivot_tol)
        except IndefiniteMatrixError as exc:
            raise IndefiniteMatrixError(f"reduced system not positive semidefinite: {exc}") from exc
        c = F.solve(rhs)
        # Iterative refinement restores the Galerkin identity when basis
        # vectors of different subdomains are nearly dependent and the
        # assembled system is ill conditioned. Dropped directions stay
        # zero, so only the retained rows are measured.
        kept = F.perm[: F.rank]
        nrm = np.linalg.norm(rhs)
        for _ in range(3):
            res = rhs - M @ c
            if np.linalg.norm(res[kept]) <= 1e-13 * nrm:
                break
            c += F.solve(res)
        c0 = c[: off[1]]
        parts = [c[off[i + 1]:off[i + 2]] for i in range(self.dec.n_subdomains)]
        x = np.zeros(self.dec.grid.n_free)
        if self.coarse.n0:
            x += self.coarse.prolong(c0)
        for i, ci in enumerate(parts):
            if len(ci):
                x[self.dec.subdomains[i].indices] += self.bases[i].vectors @ ci
        return x, _Coefficients(c0, parts)


@dataclass
class _Coefficients:
    coarse: np.ndarray
    local: list


def local_residual_norms(r, dec):
    """Euclidean norms of the residual restricted to each index set."""
    return np.array([np.linalg.norm(r[s.indices]) for s in dec.subdomains])


def select_enrichment(r, dec, eps_loc):
    """Subdomains whose local residual energy passes the adaptive test.

    Subdomain i is selected when ||R_i r||^2 > eps_loc / I * ||r||^2
    with I the number of subdomains; eps_loc = 0 selects every
    subdomain with a nonzero local residual.
    """
    if eps_loc < 0:
        raise ValueError("eps_loc must be nonnegative")
    loc = local_residual_norms(r, dec) ** 2
    thr = eps_loc / dec.n_subdomains * float(r @ r)
    return np.flatnonzero(loc > thr)


@dataclass
class SolverOptions:
    strategy: str = "lrbas"
    eps: float = 1e-6
    eps_loc: float = 0.25
    keep_full_bases: bool = False
    max_iter: int = 200
    tau: float = 0.5
    pivot_tol: float = 1e-12
    drop_tol: float = 1e-10
    trace: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.eps <= 0 or self.eps_loc < 0 or self.max_iter < 1:
            raise ValueError("eps must be positive, eps_loc nonnegative, max_iter at least 1")


@dataclass
class Trace:
    """Per-step debugging record, filled when tracing is enabled."""

    iterates: list = dc_field(default_factory=list)  # global iterate per reduced solve
    residuals: list = dc_field(default_factory=list)  # residual vector per reduced solve
    selections: list = dc_field(default_factory=list)  # enriched subdomain ids per sweep
    raw_vectors: list = dc_field(default_factory=list)  # dict i -> correction before GS, per sweep
    reduced_dims: list = dc_field(default_factory=list)


@dataclass
class StepReport:
    k: int
    strategy: str
    iterations: int
    corrections: np.ndarray  # local solves per subdomain
    coarse_solves: int
    residual_history: list  # relative residual per (reduced) solve, first entry initial
    final_relative_residual: float
    geneo_counts: np.ndarray
    solution: np.ndarray
    trace: Trace | None = None

    @property
    def total_corrections(self):
        return int(self.corrections.sum())


@dataclass
class SolveReport:
    strategy: str
    options: SolverOptions
    layout: int
    entries: list = dc_field(default_factory=list)

    @property
    def total_iterations(self):
        return sum(e.iterations for e in self.entries)

    @property
    def total_corrections(self):
        return sum(e.total_corrections for e in self.entries)

    @property
    def total_coarse_solves(self):
        return sum(e.coarse_solves for e in self.entries)


def lrbas_solve_one(system, dec, ops, coarse, bases, opts, trace=None):
    """One reduced basis solve with adaptive enrichment.

    Mutates ``bases`` (appends enrichment vectors). Returns the final
    iterate, the reduced coefficients of the last solve, the iteration
    count, per-subdomain correction counts, and the residual history.
    """
    f = system.f
    nf = np.linalg.norm(f)
    rs = ReducedSystem(system, dec, coarse, bases, opts.pivot_tol)
    x, coeff = rs.solve()
    r = f - system.A.matvec(x)
    history = [np.linalg.norm(r) / nf if nf else 0.0]
    corrections = np.zeros(dec.n_subdomains, dtype=np.int64)
    iterations = 0
    if trace is not None:
        trace.iterates.append(x.copy())
        trace.residuals.append(r.copy())
        trace.reduced_dims.append(rs.dimensions().sum())
    while history[-1] > opts.eps:
        if iterations >= opts.max_iter:
            raise ConvergenceFailure(
                f"reduced solve stalled at relative residual {history[-1]:.3e} "
                f"after {iterations} iterations",
                report=(iterations, corrections, history, x),
            )
        selected = select_enrichment(r, dec, opts.eps_loc)
        appended = []
        raw = {}
        for i in selected:
            y = ops.factors[i].solve(r[dec.subdomains[i].indices])
            corrections[i] += 1
            if trace is not None:
                raw[int(i)] = y.copy()
            if bases[i].append(y, opts.drop_tol):
                appended.append(i)
        rs.update(appended)
        x, coeff = rs.solve()
        r = f - system.A.matvec(x)
        history.append(np.linalg.norm(r) / nf if nf else 0.0)
        iterations += 1
        if trace is not None:
            trace.selections.append(np.asarray(selected))
            trace.raw_vectors.append(raw)
            trace.iterates.append(x.copy())
            trace.residuals.append(r.copy())
            trace.reduced_dims.append(rs.dimensions().sum())
    return x, coeff, iterations, corrections, history


def transition_bases(initial, final, coeff, keep_full):
    """Bases carried into the next step of the sequence.

    A basis that was enriched is reset to its initial part plus the
    local piece of the converged solution (orthonormalized, possibly
    dropped as dependent); an unchanged basis is carried as is. With
    ``keep_full`` the entire final basis is carried instead.
    """
    out = []
    for b0, b1, ci in zip(initial, final, coeff.local):
        if keep_full or b1.dim == b0.dim:
            out.append(b1.copy())
            continue
        nxt = b0.copy()
        nxt.append(b1.vectors @ ci)
        out.append(nxt)
    return out


def pcg(system, ops, x0, eps, max_iter, version=None):
    """Preconditioned conjugate gradients with recomputed residuals.

    Returns (solution, iterations, relative residual history); the
    history starts with the residual of the initial guess. One
    preconditioner application happens per counted iteration.
    """
    f = system.f
    nf = np.linalg.norm(f)
    x = np.array(x0, dtype=np.float64, copy=True)
    r = f - system.A.matvec(x)
    history = [np.linalg.norm(r) / nf if nf else 0.0]
    if history[-1] <= eps:
        return x, 0, history
    z = apply_as_preconditioner(r, ops, version)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ap = system.A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteMatrixError("matrix not positive definite in pcg")
        x += (rz / pAp) * p
        r = f - system.A.matvec(x)
        history.append(np.linalg.norm(r) / nf if nf else 0.0)
        if history[-1] <= eps:
            return x, it, history
        z = apply_as_preconditioner(r, ops, version)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceFailure(
        f"pcg stalled at relative residual {history[-1]:.3e} after {max_iter} iterations",
        report=(max_iter, history, x),
    )


def pou_snapshot_guess(system, dec, pou, coarse, previous, pivot_tol=1e-12, drop_tol=1e-10):
    """Initial guess from partition-of-unity snapshots of previous solutions.

    Builds per-subdomain bases from D_i R_i x for every previous
    solution x and solves the Galerkin system over coarse plus
    snapshots. With no previous solutions this is the coarse-only
    Galerkin solution.
    """
    snaps = [LocalBasis(len(s.indices)) for s in dec.subdomains]
    for x in previous:
        for i, s in enumerate(dec.subdomains):
            snaps[i].append(pou.weight_of(i) * x[s.indices], drop_tol)
    rs = ReducedSystem(system, dec, coarse, snaps, pivot_tol)
    x0, _ = rs.solve()
    return x0


def run_sequence(problems, dec, pou=None, opts=None):
    """Drive a strategy over a sequence of locally modified systems.

    Refreshes local factorizations and the GenEO coarse space only for
    subdomains whose extended block meets the change set of each step;
    step 1 builds everything.
    """
    if opts is None:
        opts = SolverOptions()
    if pou is None:
        pou = build_partition_of_unity(dec)
    I = dec.n_subdomains
    bases = [LocalBasis(len(s.indices)) for s in dec.subdomains]
    previous_solutions = []
    ops = None
    coarse = None
    report = SolveReport(opts.strategy, opts, dec.layout)
    for k, prob in enumerate(problems, start=1):
        if k == 1:
            changed = np.arange(I)
        else:
            changed = detect_changed_subdomains(prob.changed_elements, dec)
        neumanns = {
            int(i): assemble_local_neumann(dec.grid, prob.coefficient, dec.extended_elements(int(i)))
            for i in changed
        }
        coarse = build_geneo_coarse(dec, pou, prob.system, neumanns, opts.tau, previous=coarse, recompute=changed)
        if ops is None:
            ops = LocalOperators.build(prob.system.A, dec.index_sets, coarse, version=k, pivot_tol=opts.pivot_tol)
        else:
            ops.refresh(prob.system.A, coarse, changed, version=k, pivot_tol=opts.pivot_tol)
        trace = Trace() if opts.trace else None
        try:
            if opts.strategy == "lrbas":
                initial = [b.copy() for b in bases]
                x, coeff, iters, corrections, history = lrbas_solve_one(
                    prob.system, dec, ops, coarse, bases, opts, trace
                )
                bases = transition_bases(initial, bases, coeff, opts.keep_full_bases)
                coarse_solves = iters + 1
            else:
                if opts.strategy == "pcg-guess":
                    x0 = pou_snapshot_guess(
                        prob.system, dec, pou, coarse, previous_solutions, opts.pivot_tol, opts.drop_tol
                    )
                    guess_solves = 1
                else:
                    x0 = np.zeros(prob.system.n)
                    guess_solves = 0
                x, iters, history = pcg(prob.system, ops, x0, opts.eps, opts.max_iter, version=k)
                previous_solutions.append(x)
                corrections = np.full(I, iters, dtype=np.int64)
                coarse_solves = iters + guess_solves
        except ConvergenceFailure as exc:
            raise ConvergenceFailure(f"step {k}: {exc}", report=report) from exc
        report.entries.append(
            StepReport(
                k=k,
                strategy=opts.strategy,
                iterations=iters,
                corrections=corrections,
                coarse_solves=coarse_solves,
                residual_history=history,
                final_relative_residual=history[-1],
                geneo_counts=coarse.counts.copy(),
                solution=x,
                trace=trace,
            )
        )
    return report
