"""Numerical integration of k-forms over embedded simplices and chains.

The standard k-simplex is split edgewise into ``h**k`` congruent cells
(volume ``1/(k! * h**k)`` each); on every cell the integrand is
approximated by the average of its vertex values.  Shared subdivision
vertices are merged, so a plan stores each quadrature node once with an
accumulated weight.  The rule is exact whenever the pulled-back
integrand is affine on each cell — in particular for constant
coefficient functions at any resolution — and is second-order accurate
for smooth integrands.

Integration matrices are evaluated with a single batched MLP call over
the union of simplices referenced by the chains; per-simplex integrals
are then combined linearly with the chain coefficients.  The cache
returned by the forward pass carries everything needed to push a loss
gradient back onto the MLP parameters (embeddings are fixed data and
receive no gradient).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .forms import NeuralKForm, affine_jacobian, epsilon_all
from .nn import GradientBuffer
from .simplicial import Chain, ChainTuple, Embedding, SimplicialComplex

__all__ = [
    "SimplexSubdivision",
    "QuadraturePlan",
    "IntegrationCache",
    "subdivide_simplex",
    "quadrature_plan",
    "embed_nodes",
    "evaluate_points",
    "integrate_simplex",
    "integrate_chain",
    "integration_matrix",
    "integration_matrix_forward",
    "integration_matrix_backward",
]

DEFAULT_STEPS = 5


@dataclass(frozen=True)
class SimplexSubdivision:
    """Edgewise subdivision of the standard k-simplex at resolution h.

    Cells are stored as integer vertices on the suffix-sum grid: a grid
    point ``y`` with ``h >= y[0] >= ... >= y[k-1] >= 0`` corresponds to
    the simplex point ``t[i] = (y[i] - y[i+1]) / h`` (``y[k] == 0``).
    All cells share the volume ``1/(k! * h**k)``.
    """

    k: int
    h: int
    cells: np.ndarray  # (h**k, k + 1, k) integer vertices

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def cell_volume(self) -> float:
        return 1.0 / (math.factorial(self.k) * self.h**self.k)

    def cell_vertices(self, i: int) -> np.ndarray:
        """Vertices of cell i in simplex coordinates, shape (k+1, k)."""
        return _grid_to_simplex(self.cells[i], self.h)


def _grid_to_simplex(y: np.ndarray, h: int) -> np.ndarray:
    t = y.astype(np.float64)
    t[..., :-1] -= y[..., 1:]
    return t / h


def subdivide_simplex(k: int, h: int) -> SimplexSubdivision:
    """Split the standard k-simplex into h**k equal-volume simplices.

    Each grid cube of side 1/h inside the descending-order region is cut
    into at most k! path simplices (one per coordinate insertion order);
    the ones whose vertices all satisfy the ordering survive.
    """
    if k < 1:
        raise ValueError(f"subdivision needs k >= 1, got {k}")
    if h < 1:
        raise ValueError(f"resolution must be a positive integer, got {h}")
    axes = [np.arange(h, dtype=np.intp)] * k
    corners = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    perms = list(itertools.permutations(range(k)))
    eye = np.eye(k, dtype=np.intp)
    kept, kept_keys = [], []
    for q, perm in enumerate(perms):
        offsets = np.zeros((k + 1, k), dtype=np.intp)
        offsets[1:] = np.cumsum(eye[list(perm)], axis=0)
        verts = corners[:, None, :] + offsets[None, :, :]
        ok = np.all(verts[:, :, :-1] >= verts[:, :, 1:], axis=(1, 2))
        kept.append(verts[ok])
        kept_keys.append(np.flatnonzero(ok) * len(perms) + q)
    cells = np.concatenate(kept)
    order = np.argsort(np.concatenate(kept_keys), kind="stable")
    cells = np.ascontiguousarray(cells[order])
    if cells.shape[0] != h**k:
        raise AssertionError(f"expected {h**k} cells for k={k}, h={h}, got {cells.shape[0]}")
    cells.setflags(write=False)
    return SimplexSubdivision(k, h, cells)


@dataclass(frozen=True)
class QuadraturePlan:
    """Deduplicated vertex-average rule on the standard k-simplex.

    Every cell spreads its volume equally over its k+1 vertices, and
    weights of coincident vertices are pooled.  ``nodes`` is (N, k) in
    simplex coordinates; ``weights`` is (N,) and sums to 1/k!.
    """

    subdivision: SimplexSubdivision
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def k(self) -> int:
        return self.subdivision.k

    @property
    def h(self) -> int:
        return self.subdivision.h

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]


@lru_cache(maxsize=None)
def quadrature_plan(k: int, h: int) -> QuadraturePlan:
    sub = subdivide_simplex(k, h)
    share = sub.cell_volume / (k + 1)
    flat = sub.cells.reshape(-1, k)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    weights = np.zeros(uniq.shape[0])
    np.add.at(weights, inverse.reshape(-1), share)
    nodes = _grid_to_simplex(uniq, h)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadraturePlan(sub, nodes, weights)


def embed_nodes(embedding: Embedding, simplex, nodes) -> np.ndarray:
    """Push (N, k) simplex coordinates through the affine embedding of
    the given simplex, yielding (N, n) ambient points."""
    simplex = tuple(simplex)
    D = affine_jacobian(embedding, simplex)
    return embedding.coords[simplex[0]] + np.asarray(nodes, dtype=np.float64) @ D.T


def evaluate_points(form: NeuralKForm, embedding: Embedding, vertices) -> np.ndarray:
    """Value of a 0-form tuple at embedded vertices: (len(vertices),
    num_forms).  The 0-form counterpart of integration."""
    if form.k != 0:
        raise ValueError(f"evaluate_points is for 0-forms, got k={form.k}")
    if embedding.ambient_dim != form.n:
        raise ValueError(f"embedding lives in R^{embedding.ambient_dim}, form in R^{form.n}")
    idx = [int(v) for v in vertices]
    return form.psi.forward(embedding.coords[idx])


def _check_setting(form: NeuralKForm, complex_: SimplicialComplex, embedding: Embedding) -> None:
    if embedding.ambient_dim != form.n:
        raise ValueError(f"embedding lives in R^{embedding.ambient_dim}, form in R^{form.n}")
    if embedding.num_vertices != complex_.num_vertices:
        raise ValueError(
            f"embedding has {embedding.num_vertices} vertices, complex has {complex_.num_vertices}"
        )


def integrate_simplex(
    form: NeuralKForm,
    j: int,
    complex_: SimplicialComplex,
    embedding: Embedding,
    simplex,
    h: int = DEFAULT_STEPS,
) -> float:
    """Integral of form j over one embedded k-simplex of the complex.

    The constant Jacobian and its column volumes are computed once; the
    MLP is evaluated on the quadrature nodes pushed into ambient space.
    """
    simplex = tuple(simplex)
    k = form.k
    if k == 0:
        raise ValueError("0-forms are evaluated, not integrated; use evaluate_points")
    if len(simplex) - 1 != k:
        raise ValueError(f"simplex {simplex} has dimension {len(simplex) - 1}, form has k={k}")
    _check_setting(form, complex_, embedding)
    if simplex not in complex_.simplices(k):
        raise ValueError(f"simplex {simplex} is not in the complex")
    if not 0 <= j < form.num_forms:
        raise ValueError(f"form index {j} out of range for {form.num_forms} forms")
    plan = quadrature_plan(k, h)
    eps = epsilon_all(affine_jacobian(embedding, simplex), form.table)
    scal = form.eval_scalings(embed_nodes(embedding, simplex, plan.nodes))  # (N, l, C)
    return float(np.einsum("t,tr,r->", plan.weights, scal[:, j, :], eps))


def integrate_chain(
    form: NeuralKForm,
    j: int,
    complex_: SimplicialComplex,
    embedding: Embedding,
    chain: Chain,
    h: int = DEFAULT_STEPS,
) -> float:
    """Integral of form j over a weighted chain: the coefficient-weighted
    sum of per-simplex integrals.  An empty chain integrates to 0."""
    X = integration_matrix(form, complex_, embedding, [chain], h)
    return float(X[0, j])


@dataclass
class IntegrationCache:
    """Intermediate state of one integration-matrix evaluation, enough
    to push a loss gradient back onto the form's MLP parameters."""

    lam: np.ndarray  # (m, S) chain coefficients over the used simplices
    weights: np.ndarray  # (N,) quadrature weights
    eps: np.ndarray  # (S, C) column volumes per simplex
    mlp_cache: tuple | None
    num_simplices: int
    nodes_per_simplex: int


def _gather(chains) -> list[Chain]:
    if isinstance(chains, ChainTuple):
        return list(chains.chains)
    out = list(chains)
    if not out:
        raise ValueError("need at least one chain")
    return out


def integration_matrix_forward(
    form: NeuralKForm,
    complex_: SimplicialComplex,
    embedding: Embedding,
    chains,
    h: int = DEFAULT_STEPS,
):
    """Integration matrix X with X[i, j] = integral of form j over chain
    i, plus a cache for the backward pass.

    Every simplex referenced by any chain is integrated exactly once on
    one batched MLP evaluation; X is the chain-coefficient matrix times
    the per-simplex integrals.  When the chains are exactly the standard
    basis the coefficient matrix is the identity and X *is* the table of
    per-simplex integrals (for k = 0: the MLP values at the vertices,
    unchanged bit for bit).
    """
    chain_list = _gather(chains)
    k = form.k
    for c in chain_list:
        if c.dim != k:
            raise ValueError(f"chain of dimension {c.dim} fed to a form with k={k}")
    _check_setting(form, complex_, embedding)

    sims = complex_.simplices(k)
    used = sorted({idx for c in chain_list for idx, _ in c.terms})
    m = len(chain_list)
    if used and used[-1] >= len(sims):
        raise ValueError(f"chain references simplex {used[-1]}, complex has {len(sims)}")
    if not used:
        # every chain is empty; the matrix is zero and carries no gradient
        cache = IntegrationCache(np.zeros((m, 0)), np.zeros(0), np.zeros((0, 0)), None, 0, 0)
        return np.zeros((m, form.num_forms)), cache

    slot = {s: i for i, s in enumerate(used)}
    S = len(used)
    lam = np.zeros((m, S))
    for i, c in enumerate(chain_list):
        for idx, coeff in c.terms:
            lam[i, slot[idx]] = coeff

    C = form.num_components
    if k == 0:
        weights = np.ones(1)
        eps = np.ones((S, 1))
        points = embedding.coords[[sims[idx][0] for idx in used]]
        N = 1
    else:
        plan = quadrature_plan(k, h)
        weights = plan.weights
        N = plan.num_nodes
        eps = np.empty((S, C))
        points = np.empty((S * N, form.n))
        for i, idx in enumerate(used):
            D = affine_jacobian(embedding, sims[idx])
            eps[i] = epsilon_all(D, form.table)
            points[i * N : (i + 1) * N] = embedding.coords[sims[idx][0]] + plan.nodes @ D.T

    out, mlp_cache = form.psi.forward_cached(points)
    if k == 0:
        per_simplex = out  # (S, l): evaluation, untouched
    else:
        scal = out.reshape(S, N, form.num_forms, C)
        per_simplex = np.einsum("t,stjr,sr->sj", weights, scal, eps)  # (S, l)
    if m == S and np.count_nonzero(lam) == S and (lam.diagonal() == 1.0).all():
        X = per_simplex.copy()
    else:
        X = lam @ per_simplex
    return X, IntegrationCache(lam, weights, eps, mlp_cache, S, N)


def integration_matrix(
    form: NeuralKForm,
    complex_: SimplicialComplex,
    embedding: Embedding,
    chains,
    h: int = DEFAULT_STEPS,
) -> np.ndarray:
    """X[i, j] = integral of form j over chain i, shape (m, num_forms)."""
    X, _ = integration_matrix_forward(form, complex_, embedding, chains, h)
    return X


def integration_matrix_backward(
    form: NeuralKForm, cache: IntegrationCache, upstream: np.ndarray
) -> GradientBuffer:
    """Gradient of sum(upstream * X) with respect to the MLP parameters.

    Geometry factors (quadrature weights, column volumes, chain
    coefficients) are constants; the gradient flows through the MLP
    values only.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if cache.mlp_cache is None:
        return GradientBuffer.zeros_for(form.psi)
    S, N = cache.num_simplices, cache.nodes_per_simplex
    G = cache.lam.T @ upstream  # (S, l)
    if form.k == 0:
        d_flat = G
    else:
        d_scal = np.einsum("t,sr,sj->stjr", cache.weights, cache.eps, G)
        d_flat = d_scal.reshape(S * N, -1)
    grads, _ = form.psi.backward(cache.mlp_cache, d_flat)
    return grads
