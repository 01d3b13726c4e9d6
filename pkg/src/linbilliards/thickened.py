"""Deterministic billiards on the thickened table and its minimization problem.

Thickening replaces each collision subspace by a solid cylinder of radius
sigma_L * r.  The dynamics on the complement is ordinary specular billiards
off the cylinder walls (away from corners, which are refused rather than
modelled).  The variational side constrains the chain vertices to the solid
cylinders: projected gradient plus projected Newton on the active cylinder
manifold, with minimizers classified as honest reflections or ghosts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .arrangement import Arrangement, Itinerary, Subspace, orthonormalize
from .errors import CornerCollision, InputError, MaxIterations, PreconditionError
from .solver import SolverOptions, _solve_spd, minimize
from .trajectory import TRANSVERSE_TOL, is_transverse

CORNER_TOL = 1e-9
GRAZING_DISC = 1e-14


@dataclass(frozen=True)
class ThickenedTable:
    arrangement: Arrangement
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise InputError("thickening radius must be positive")

    @property
    def radii(self) -> list[float]:
        return [s.sigma * self.r for s in self.arrangement.subspaces]

    def distance_to_wall(self, x) -> float:
        """Signed clearance: min over cylinders of dist(x, L) - rho_L."""
        return min(s.distance_to(x) - s.sigma * self.r
                   for s in self.arrangement.subspaces)

    def in_table(self, x, tol: float = 1e-9) -> bool:
        return self.distance_to_wall(x) >= -tol

    def project_cylinder(self, i: int, q) -> np.ndarray:
        """Exact convex projection onto the i-th solid cylinder."""
        sub = self.arrangement.subspaces[i]
        rho = sub.sigma * self.r
        par = sub.project(q)
        perp = np.asarray(q, dtype=float) - par
        norm = float(np.linalg.norm(perp))
        if norm <= rho:
            return np.asarray(q, dtype=float)
        return par + perp * (rho / norm)


@dataclass(frozen=True)
class Event:
    time: float
    label: str
    point: np.ndarray
    v_before: np.ndarray
    v_after: np.ndarray


@dataclass
class ThickenedPath:
    start_point: np.ndarray
    start_velocity: np.ndarray
    events: list[Event] = field(default_factory=list)
    end_time: float = 0.0
    end_point: np.ndarray | None = None
    end_velocity: np.ndarray | None = None
    status: str = "escaped"

    @property
    def itinerary_labels(self) -> list[str]:
        return [e.label for e in self.events]


def first_hit(table: ThickenedTable, p, v):
    """Earliest entering intersection of the ray p + t v with a cylinder wall.

    Returns (t, subspace index, hit point, outward normal) or None when the
    ray escapes.  Grazing rays (discriminant below 1e-14) do not count as
    hits; a hit point inside another cylinder's corner margin raises
    CornerCollision, since the dynamics there is deliberately undefined.
    """
    arr = table.arrangement
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if p.shape != (arr.dim,) or v.shape != (arr.dim,):
        raise InputError("point/velocity dimension mismatch")
    radii = table.radii
    for sub, rho in zip(arr.subspaces, radii):
        if sub.distance_to(p) < rho - 1e-9 * max(1.0, rho):
            raise PreconditionError(
                f"start point lies strictly inside cylinder around {sub.name}")
    t_eps = 1e-12 * max(1.0, float(np.linalg.norm(p)))
    best = None
    for i, (sub, rho) in enumerate(zip(arr.subspaces, radii)):
        w = sub.perp(p)
        u = sub.perp(v)
        a = float(np.dot(u, u))
        if a <= 1e-30:
            continue  # constant clearance along the ray
        t_star = -float(np.dot(w, u)) / a
        res = w + t_star * u
        gap2 = rho * rho - float(np.dot(res, res))
        if gap2 * a < GRAZING_DISC:
            continue
        t_enter = t_star - math.sqrt(gap2 / a)
        if t_enter <= t_eps:
            continue
        if best is None or t_enter < best[0]:
            best = (t_enter, i)
    if best is None:
        return None
    t, i = best
    x = p + t * v
    sub = arr.subspaces[i]
    perp = sub.perp(x)
    nu = perp / np.linalg.norm(perp)
    for j, (other, rho_j) in enumerate(zip(arr.subspaces, radii)):
        if j != i and other.distance_to(x) < rho_j + CORNER_TOL:
            raise CornerCollision(
                f"hit on {sub.name} lies in the corner margin of {other.name}")
    return t, i, x, nu


def simulate(table: ThickenedTable, p, v, max_events: int = 100,
             t_max: float = math.inf) -> ThickenedPath:
    """Event-driven specular billiard on the thickened table.

    Terminates on escape, the time horizon, or the event budget; a corner hit
    raises CornerCollision carrying the partial path.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise InputError("simulation velocity must be unit")
    if not table.in_table(p):
        raise PreconditionError("start point lies inside a cylinder")
    path = ThickenedPath(p.copy(), v.copy())
    t_now = 0.0
    for _ in range(max_events):
        try:
            hit = first_hit(table, p, v)
        except CornerCollision as exc:
            path.end_time = t_now
            path.end_point, path.end_velocity = p.copy(), v.copy()
            path.status = "corner"
            exc.path = path
            raise
        if hit is None:
            path.status = "escaped"
            break
        t, i, x, nu = hit
        if t_now + t > t_max:
            path.status = "t_max"
            p = p + (t_max - t_now) * v
            t_now = t_max
            break
        t_now += t
        v_after = v - 2.0 * float(np.dot(v, nu)) * nu
        path.events.append(Event(t_now, table.arrangement.subspaces[i].name,
                                 x.copy(), v.copy(), v_after.copy()))
        p, v = x, v_after
    else:
        path.status = "max_events"
    path.end_time = t_now
    path.end_point, path.end_velocity = p.copy(), v.copy()
    return path


def events_to_csv(path: ThickenedPath, out) -> None:
    dim = path.start_point.shape[0]
    header = (["time", "label"] + [f"x_{i}" for i in range(dim)]
              + [f"v_before_{i}" for i in range(dim)]
              + [f"v_after_{i}" for i in range(dim)])
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for e in path.events:
            writer.writerow([f"{e.time:.17g}", e.label]
                            + [f"{x:.17g}" for x in e.point]
                            + [f"{x:.17g}" for x in e.v_before]
                            + [f"{x:.17g}" for x in e.v_after])


# -- constrained minimization over the product of solid cylinders -----------


@dataclass(frozen=True)
class ThickenedMinimizeResult:
    points: np.ndarray          # (k, dim) vertices
    value: float
    honest: bool                # on-wall, direction-changing minimizer
    active: list[bool]          # vertex on its cylinder wall
    kkt_residual: float
    multipliers: list[float]    # outward-normal force at active vertices
    message: str = ""


def _ambient_gradient(A, points, B):
    pts = np.vstack([A[None, :], points, B[None, :]])
    diffs = np.diff(pts, axis=0)
    lens = np.linalg.norm(diffs, axis=1)
    units = diffs / lens[:, None]
    return units[:-1] - units[1:], lens  # (k, dim) per-vertex gradient


def _ambient_hessian(A, points, B):
    k, dim = points.shape
    pts = np.vstack([A[None, :], points, B[None, :]])
    diffs = np.diff(pts, axis=0)
    lens = np.linalg.norm(diffs, axis=1)
    units = diffs / lens[:, None]
    H = np.zeros((k * dim, k * dim))
    eye = np.eye(dim)
    for e in range(k + 1):
        W = (eye - np.outer(units[e], units[e])) / lens[e]
        left, right = e - 1, e
        if left >= 0:
            H[left * dim:(left + 1) * dim, left * dim:(left + 1) * dim] += W
        if right < k:
            H[right * dim:(right + 1) * dim, right * dim:(right + 1) * dim] += W
        if left >= 0 and right < k:
            H[left * dim:(left + 1) * dim, right * dim:(right + 1) * dim] -= W
            H[right * dim:(right + 1) * dim, left * dim:(left + 1) * dim] -= W
    return H


def _perp_basis(sub: Subspace, omega: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of the tangent to the perp sphere at omega:
    directions in L-perp orthogonal to omega."""
    n = sub.dim
    perp_proj = np.eye(n) - sub.basis.T @ sub.basis if sub.subdim else np.eye(n)
    rows = [row - np.dot(row, omega) * omega for row in perp_proj]
    return orthonormalize(np.array(rows), n)


def _path_value(A, points, B) -> float:
    pts = np.vstack([A[None, :], points, B[None, :]])
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def minimize_thickened(table: ThickenedTable, itinerary: Itinerary, A, B,
                       opts: SolverOptions = SolverOptions(),
                       max_phases: int = 40) -> ThickenedMinimizeResult:
    """Minimize the path length with each vertex confined to its solid cylinder.

    Projected gradient with backtracking makes global progress on the convex
    problem; once the active set (vertices pressed onto their cylinder walls)
    stabilizes, projected Newton on the wall manifold polishes to full
    accuracy.  The minimizer is honest when every vertex sits on its wall and
    the direction jumps there; otherwise it is a ghost (straight-through or
    tangential passage).
    """
    arr = table.arrangement
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    itinerary.validate_against(arr)
    for x, name in ((A, "A"), (B, "B")):
        if table.distance_to_wall(x) <= 1e-12:
            raise PreconditionError(f"anchor {name} must lie in the table interior")
    k = len(itinerary)
    subs = [arr.subspaces[i] for i in itinerary]
    radii = [s.sigma * table.r for s in subs]
    scale = max(float(np.linalg.norm(B - A)), table.r)

    # start from the projection of the straight chord into the cylinders
    points = np.array([
        table.project_cylinder(itinerary[j], A + (j + 1) / (k + 1) * (B - A))
        for j in range(k)
    ])
    value = _path_value(A, points, B)
    step = 1.0
    kkt = math.inf
    prev_kkt = math.inf
    for phase in range(max_phases):
        # -- projected gradient phase
        for _ in range(200):
            grad, lens = _ambient_gradient(A, points, B)
            trial_step = step
            moved = False
            for _ in range(60):
                cand = np.array([
                    table.project_cylinder(itinerary[j], points[j] - trial_step * grad[j])
                    for j in range(k)
                ])
                cand_val = _path_value(A, cand, B)
                decrease = value - cand_val
                move2 = float(np.sum((cand - points) ** 2))
                if decrease >= 1e-4 * move2 / max(trial_step, 1e-300):
                    if move2 > 0:
                        points, value, moved = cand, cand_val, True
                    break
                trial_step *= 0.5
            step = min(trial_step * 2.0, 1e3)
            mapping = float(np.sqrt(float(np.sum((np.array([
                table.project_cylinder(itinerary[j], points[j] - grad[j])
                for j in range(k)]) - points) ** 2))))
            if mapping <= 1e-8 * scale or not moved:
                break

        # -- active-set Newton phase
        active = [abs(subs[j].distance_to(points[j]) - radii[j]) <= 1e-6 * radii[j]
                  for j in range(k)]
        points, value, kkt, clean = _newton_on_walls(
            table, itinerary, A, points, B, active, opts)
        if clean and kkt <= max(opts.grad_tol, 1e-12) * max(1.0, value):
            break
        if clean and kkt >= prev_kkt * 0.99:
            break  # residual floor: successive phases no longer improve
        prev_kkt = kkt
    else:
        raise MaxIterations(f"thickened minimization stalled (kkt = {kkt:.3e})")

    grad, _ = _ambient_gradient(A, points, B)
    active = [abs(subs[j].distance_to(points[j]) - radii[j]) <= 1e-6 * radii[j]
              for j in range(k)]
    multipliers = []
    for j in range(k):
        if active[j]:
            perp = points[j] - subs[j].project(points[j])
            omega = perp / np.linalg.norm(perp)
            multipliers.append(-float(np.dot(grad[j], omega)))
        else:
            multipliers.append(0.0)
    jump = _direction_jumps(A, points, B)
    honest = all(active) and all(j > opts.transverse_tol for j in jump) \
        and all(m > 0 for m in multipliers)
    msg = "" if honest else "ghost: vertex off the wall or no direction change"
    return ThickenedMinimizeResult(points, value, honest, active, kkt,
                                   multipliers, msg)


def _direction_jumps(A, points, B):
    pts = np.vstack([A[None, :], points, B[None, :]])
    diffs = np.diff(pts, axis=0)
    units = diffs / np.linalg.norm(diffs, axis=1)[:, None]
    return [float(np.linalg.norm(units[j + 1] - units[j])) for j in range(len(points))]


def _newton_on_walls(table, itinerary, A, points, B, active, opts):
    """Newton polish with active vertices parameterized on their cylinder walls.

    Wall coordinates per active vertex: in-subspace coordinates plus tangent
    angles of the perp sphere; the sphere contributes the exact curvature term
    -rho <g, omega> I to the Hessian diagonal.  Returns (points, value, kkt
    residual, active-set-clean flag).
    """
    arr = table.arrangement
    subs = [arr.subspaces[i] for i in itinerary]
    radii = [s.sigma * table.r for s in subs]
    k, dim = points.shape
    points = points.copy()
    value = _path_value(A, points, B)

    def residual(pts):
        """(kkt blocks, jacobians, omegas, multipliers-clean) at given points."""
        grad, _ = _ambient_gradient(A, pts, B)
        blocks, jacs, omegas = [], [], []
        clean = True
        for j in range(k):
            if active[j]:
                perp = pts[j] - subs[j].project(pts[j])
                omega = perp / np.linalg.norm(perp)
                omegas.append(omega)
                V = _perp_basis(subs[j], omega)
                Jj = np.hstack([subs[j].basis.T, radii[j] * V.T]) if subs[j].subdim \
                    else radii[j] * V.T
                jacs.append(Jj)
                blocks.append(Jj.T @ grad[j])
                if -float(np.dot(grad[j], omega)) < -1e-10:
                    clean = False  # multiplier wants to release the vertex
            else:
                omegas.append(None)
                jacs.append(np.eye(dim))
                blocks.append(grad[j])
        return grad, blocks, jacs, omegas, clean

    kkt = math.inf
    for _ in range(60):
        grad, blocks, jac_blocks, omegas, clean = residual(points)
        kkt = float(np.linalg.norm(np.concatenate(blocks))) if blocks else 0.0
        if kkt <= max(opts.grad_tol, 1e-13) * max(1.0, value):
            return points, value, kkt, clean
        H = _ambient_hessian(A, points, B)
        sizes = [jb.shape[1] for jb in jac_blocks]
        offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        Hred = np.zeros((offs[-1], offs[-1]))
        for a in range(k):
            for b in range(k):
                Hab = H[a * dim:(a + 1) * dim, b * dim:(b + 1) * dim]
                Hred[offs[a]:offs[a + 1], offs[b]:offs[b + 1]] = \
                    jac_blocks[a].T @ Hab @ jac_blocks[b]
        for j in range(k):
            if active[j]:
                m = subs[j].subdim
                curv = -radii[j] * float(np.dot(grad[j], omegas[j]))
                for t in range(offs[j] + m, offs[j + 1]):
                    Hred[t, t] += curv
        g_red = np.concatenate(blocks)
        step = _solve_spd(Hred, g_red)
        if step is None:
            return points, value, kkt, False

        def apply_step(t):
            cand = points.copy()
            for j in range(k):
                delta = step[offs[j]:offs[j + 1]] * t
                if active[j]:
                    m = subs[j].subdim
                    y = subs[j].project(points[j]) + (subs[j].basis.T @ delta[:m]
                                                      if m else 0.0)
                    V = _perp_basis(subs[j], omegas[j])
                    w = omegas[j] + (V.T @ delta[m:]) / radii[j]
                    cand[j] = y + radii[j] * w / np.linalg.norm(w)
                else:
                    cand[j] = points[j] + delta
                    if subs[j].distance_to(cand[j]) > radii[j]:
                        return None
            return cand

        # local phase: full step accepted while it contracts the residual
        full = apply_step(1.0)
        if full is not None:
            _, blocks_f, _, _, _ = residual(full)
            kkt_f = float(np.linalg.norm(np.concatenate(blocks_f)))
            fval = _path_value(A, full, B)
            if kkt_f <= 0.5 * kkt and fval <= value + 1e-12 * max(1.0, value):
                points, value = full, fval
                continue
        # global phase: backtracking on the value
        t = 1.0
        slope = float(np.dot(g_red, step))
        moved = False
        while t >= opts.step_floor:
            cand = apply_step(t)
            if cand is not None:
                cand_val = _path_value(A, cand, B)
                if cand_val <= value + opts.armijo * t * slope:
                    points, value, moved = cand, cand_val, True
                    break
            t *= 0.5
        if not moved:
            # neither rule makes progress: residual floor of the arithmetic
            return points, value, kkt, True
    return points, value, kkt, False


def curve_shorten(table: ThickenedTable, A, chain_points, B):
    """Slide each vertex of a transverse chain outward onto its cylinder wall,
    strictly shortening the path at every replacement.

    Works in the plane of the vertex triangle: both incident edges exit the
    cylinder (their far endpoints must lie outside it), and the replacement
    point is taken on the wall along the bisecting chord, inside the triangle.
    Returns (new chain, list of path lengths after each replacement).
    """
    arr = table.arrangement
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    chain_points = np.asarray(chain_points, dtype=float)
    k = chain_points.shape[0]
    radii = table.radii
    traj_pts = np.vstack([A[None, :], chain_points, B[None, :]])
    diffs = np.diff(traj_pts, axis=0)
    units = diffs / np.linalg.norm(diffs, axis=1)[:, None]
    for j in range(k):
        if np.linalg.norm(units[j + 1] - units[j]) <= TRANSVERSE_TOL:
            raise PreconditionError(f"vertex {j + 1} is internal; chain must be transverse")

    current = traj_pts.copy()
    lengths = [float(np.sum(np.linalg.norm(np.diff(current, axis=0), axis=1)))]
    # the itinerary of the chain is implicit: vertex j sits on the subspace
    # nearest to it; resolve each vertex's subspace by exact membership
    labels = []
    for j in range(k):
        dists = [s.distance_to(chain_points[j]) for s in arr.subspaces]
        idx = int(np.argmin(dists))
        if dists[idx] > 1e-9 * max(1.0, float(np.linalg.norm(chain_points[j]))):
            raise PreconditionError(f"vertex {j + 1} lies on no subspace")
        labels.append(idx)

    for j in range(k):
        sub = arr.subspaces[labels[j]]
        rho = radii[labels[j]]
        q = current[j + 1]
        prev_pt, next_pt = current[j], current[j + 2]
        for neighbor in (prev_pt, next_pt):
            if sub.distance_to(neighbor) <= rho:
                raise PreconditionError(
                    "thickening too large: a neighbor vertex lies inside the cylinder")
        exits = []
        for target in (prev_pt, next_pt):
            leg = target - q
            perp_speed = float(np.linalg.norm(sub.perp(leg)))
            exits.append(q + (rho / perp_speed) * leg)
        mid = 0.5 * (exits[0] + exits[1])
        direction = mid - q
        perp_dir = float(np.linalg.norm(sub.perp(direction)))
        if perp_dir <= 1e-15:
            raise PreconditionError("degenerate triangle in the shortening step")
        replacement = q + (rho / perp_dir) * direction
        before = (np.linalg.norm(prev_pt - q) + np.linalg.norm(q - next_pt))
        after = (np.linalg.norm(prev_pt - replacement)
                 + np.linalg.norm(replacement - next_pt))
        if not after < before:
            raise PreconditionError(
                "thickening too large: replacement does not shorten the path")
        current[j + 1] = replacement
        lengths.append(float(np.sum(np.linalg.norm(np.diff(current, axis=0), axis=1))))
    return current[1:-1], lengths


@dataclass(frozen=True)
class RFamilyEntry:
    r: float
    result: ThickenedMinimizeResult | None
    deviation: float
    itinerary_match: bool
    error: str = ""


def r_family(arr: Arrangement, itinerary: Itinerary, A, B, r_list,
             opts: SolverOptions = SolverOptions()) -> list[RFamilyEntry]:
    """Thickened minimizers for a shrinking family of radii, compared against
    the transverse point billiard they converge to.

    The point problem must solve to a valid transverse trajectory; per-radius
    failures are recorded, not raised.
    """
    point_result = minimize(arr, itinerary, A, B, opts)
    if not point_result.is_valid:
        raise PreconditionError(
            f"point billiard solve is {point_result.classification}, not valid")
    if not is_transverse(point_result.trajectory, opts.transverse_tol):
        raise PreconditionError("point billiard trajectory is not transverse")
    reference = point_result.chain.points
    labels = itinerary.labels(arr)
    entries = []
    for r in r_list:
        table = ThickenedTable(arr, float(r))
        try:
            result = minimize_thickened(table, itinerary, A, B, opts)
            deviation = float(np.max(np.linalg.norm(result.points - reference, axis=1)))
            match = False
            if result.honest:
                replay = replay_honest(table, result, A, len(itinerary))
                match = replay.itinerary_labels == labels
            entries.append(RFamilyEntry(float(r), result, deviation, match))
        except (PreconditionError, MaxIterations, CornerCollision) as exc:
            entries.append(RFamilyEntry(float(r), None, math.nan, False, str(exc)))
    return entries


def replay_honest(table: ThickenedTable, result: ThickenedMinimizeResult,
                  A, n_events: int) -> ThickenedPath:
    """Re-run an honest thickened minimizer through the event simulator from
    its incoming ray (the converse clause of the minimization lemma)."""
    A = np.asarray(A, dtype=float)
    v0 = result.points[0] - A
    v0 = v0 / np.linalg.norm(v0)
    return simulate(table, A, v0, max_events=n_events)
