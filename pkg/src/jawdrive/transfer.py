"""Per-frame least-squares fit of blendshape weights to target deformation gradients.

Minimizes ``sum_j ||F_j(w) - T_j||_F^2 + lam * ||w||^2`` over the masked triangles.
Per triangle the blended frame is ``V_j + sum_k w_k D_jk`` with
``D_jk = frame(target_k) - frame(neutral)``, so ``F_j(w) = F_j(0) + sum_k w_k D_jk V_j^-1``
is affine in ``w``. Everything except the right-hand side is frame-invariant, so the
normal matrix ``A^T A + lam I`` is Cholesky-factorized once and each frame costs one
matrix-vector product plus two triangular solves.

Row layout of ``A`` and ``b``: triangles in mask order, each contributing the nine
entries of a 3x3 block in row-major order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geomcore import DEGENERACY_EPS, DegenerateTriangle
from .rig import BlendshapeRig, RegionMask, triangle_frames

COND_LIMIT = 1e12


class SingularSystem(np.linalg.LinAlgError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    """``lam`` is relative: the applied Tikhonov weight is ``lam * trace(A^T A) / K``.

    When ``A`` is identically zero the trace is zero and ``lam`` is used as is.
    """

    lam: float = 1e-6
    clamp: bool = True

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"lam must be finite and >= 0, got {self.lam}")


@dataclass(frozen=True)
class FrameSolution:
    w: np.ndarray
    residual_energy: float
    solve_time: float


@dataclass(frozen=True, eq=False)
class DtSystem:
    mask: np.ndarray  # (J,) triangle ids
    rest_frame_inv: np.ndarray  # (J, 3, 3)
    rest_gradients: np.ndarray  # (J, 3, 3)
    A: np.ndarray  # (9J, K)
    At: np.ndarray  # (K, 9J), contiguous copy for the per-frame product
    factor: tuple  # scipy cho_factor output for A^T A + lam I
    lam: float

    @property
    def num_shapes(self) -> int:
        return self.A.shape[1]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _masked_corners(rig: BlendshapeRig, mask: RegionMask) -> np.ndarray:
    return rig.neutral.vertices[rig.neutral.triangles[mask.triangle_indices]]


def build_system(rig: BlendshapeRig, mask: RegionMask, cfg: SolveConfig = SolveConfig()) -> DtSystem:
    mask.validate(rig.neutral)
    corners = _masked_corners(rig, mask)  # (J, 3, 3)
    c = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    bad = mask.triangle_indices[np.linalg.norm(c, axis=1) <= DEGENERACY_EPS]
    if bad.size:
        raise DegenerateTriangle(f"degenerate masked triangles: {bad.tolist()}")

    rest = triangle_frames(corners)
    rest_inv = np.linalg.inv(rest)
    rest_grad = rest @ rest_inv

    tri = rig.neutral.triangles[mask.triangle_indices]
    target_corners = corners[None] + rig.deltas[:, tri]  # (K, J, 3, 3)
    with np.errstate(invalid="ignore", divide="ignore"):
        target_frames = triangle_frames(target_corners)
    # a collapsed target triangle contributes edge differences only
    target_frames = np.nan_to_num(target_frames, nan=0.0, posinf=0.0, neginf=0.0)
    cols = (target_frames - rest[None]) @ rest_inv[None]  # (K, J, 3, 3)
    K, J = cols.shape[:2]
    A = cols.reshape(K, 9 * J).T

    AtA = A.T @ A
    tr = float(np.trace(AtA))
    lam = cfg.lam * tr / K if tr > 0.0 else cfg.lam
    N = AtA + lam * np.eye(K)
    if lam == 0.0 and np.linalg.cond(N) > COND_LIMIT:
        raise SingularSystem("normal matrix is singular; use lam > 0")
    try:
        factor = cho_factor(N, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    factor = (_readonly(factor[0]), factor[1])
    return DtSystem(
        mask=mask.triangle_indices,
        rest_frame_inv=_readonly(rest_inv),
        rest_gradients=_readonly(rest_grad),
        A=_readonly(A),
        At=_readonly(A.T),
        factor=factor,
        lam=lam,
    )


def target_rhs(system: DtSystem, T) -> np.ndarray:
    """Stack ``T_j - F_j(0)``; ``T`` is one 3x3 target for every triangle or a ``(J, 3, 3)`` stack."""
    T = np.asarray(T, dtype=float)
    if T.shape != (3, 3) and T.shape != system.rest_gradients.shape:
        raise DimensionMismatch(f"target must be (3, 3) or {system.rest_gradients.shape}, got {T.shape}")
    return (T - system.rest_gradients).reshape(-1)


def solve(system: DtSystem, b, cfg: SolveConfig = SolveConfig()) -> FrameSolution:
    """Weights for one frame; clamping (if enabled) happens after the unconstrained solve.

    ``residual_energy`` is the data term ``||A w - b||^2`` at the returned weights.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    if b.shape != (system.num_rows,):
        raise DimensionMismatch(f"rhs must have length {system.num_rows}, got shape {b.shape}")
    w = cho_solve(system.factor, system.At @ b, check_finite=False)
    if cfg.clamp:
        w = np.clip(w, 0.0, 1.0)
    r = system.A @ w - b
    residual = float(r @ r)
    return FrameSolution(w, residual, time.perf_counter() - t0)


def energy(rig: BlendshapeRig, mask: RegionMask, w, T, chunk: int = 50_000):
    """Direct evaluation of the masked transfer energy from blended meshes.

    Independent of :class:`DtSystem`: vertices are blended, triangle frames rebuilt
    and gradients formed from scratch, so this serves as the oracle for
    :func:`build_system` and :func:`solve`.

    ``w`` is one weight vector ``(K,)`` or a batch ``(n, K)``. ``T`` is a 3x3 target,
    a per-triangle ``(J, 3, 3)`` stack, or ``m`` such stacks ``(m, J, 3, 3)``; the
    last form scores every weight vector against every target set in one pass and
    returns an ``(n, m)`` array.
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    W = np.atleast_2d(w)
    if W.shape[1] != rig.num_shapes:
        raise DimensionMismatch(f"expected {rig.num_shapes} weights, got {W.shape[1]}")
    tri = rig.neutral.triangles[mask.triangle_indices]
    rest_corners = rig.neutral.vertices[tri]
    c = np.cross(rest_corners[:, 1] - rest_corners[:, 0], rest_corners[:, 2] - rest_corners[:, 0])
    if np.any(np.linalg.norm(c, axis=1) <= DEGENERACY_EPS):
        raise DegenerateTriangle("degenerate masked triangle in energy evaluation")
    rest_inv = np.linalg.inv(triangle_frames(rest_corners))
    deltas = rig.deltas[:, tri].reshape(rig.num_shapes, -1)
    T = np.asarray(T, dtype=float)
    multi = T.ndim == 4
    if multi:
        Tm = np.broadcast_to(T, (T.shape[0], len(tri), 3, 3)).reshape(T.shape[0], -1)
        t_sq = np.einsum("mi,mi->m", Tm, Tm)

    out = []
    for start in range(0, len(W), chunk):
        Wc = W[start : start + chunk]
        corners = rest_corners[None] + (Wc @ deltas).reshape(len(Wc), *rest_corners.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            frames = np.nan_to_num(triangle_frames(corners), nan=0.0, posinf=0.0, neginf=0.0)
        F = frames @ rest_inv[None]
        if multi:
            Ff = F.reshape(len(Wc), -1)
            out.append((Ff * Ff).sum(axis=1)[:, None] - 2.0 * Ff @ Tm.T + t_sq[None])
        else:
            diff = F - T
            out.append(np.einsum("njab,njab->n", diff, diff))
    E = np.concatenate(out)
    return float(E[0]) if single and not multi else E
