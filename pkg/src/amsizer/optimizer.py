"""Budgeted black-box optimizers over a ParameterSpace.

Two algorithms behind one request/result interface: Bayesian
optimization (GP surrogate with expected improvement) and differential
evolution.  Both run in the normalized unit cube (log-scaled dimensions
are normalized in log space), project every candidate through the
matching groups and bounds before evaluation, spend exactly the
requested simulation budget, and are deterministic under a fixed seed.

The objective is called with a real-valued parameter dict and returns a
figure of merit to maximize.  Objective exceptions score 0 for that
point: a non-convergent circuit is a valid bad outcome, not a crash.
With parallelism > 1, evaluations of a batch may run concurrently, but
evaluation order in the result (and in any on_evaluation callback) is
the deterministic submission order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .gp import GpError, GpHyper, gp_fit, gp_predict
from .netlist import MatchingGroup, ParameterSpace, apply_matching

ALGORITHMS = ("bo", "de")
EI_CANDIDATES = 1024
EI_REFINE_ITERS = 20
EI_REFINE_TOP = 4
DE_F_WEIGHT = 0.7
DE_CROSSOVER = 0.9
DE_MAX_POP = 16


@dataclass(frozen=True)
class Evaluation:
    point: dict[str, float]
    fom: float
    error: str | None = None


@dataclass(frozen=True)
class OptimizerResult:
    best_point: dict[str, float]
    best_fom: float
    evaluations: tuple[Evaluation, ...]
    budget_used: int


class _Codec:
    """Dict <-> unit-cube vector conversion for a ParameterSpace."""

    def __init__(self, space: ParameterSpace):
        self.space = space
        self.names = list(space.names)
        self.dim = len(self.names)
        self.index = {n: i for i, n in enumerate(self.names)}
        self.log = np.array([e.scale == "log" for e in space.entries])
        lo = np.array([e.lo for e in space.entries])
        hi = np.array([e.hi for e in space.entries])
        self.lo = np.where(self.log, np.log(np.where(self.log, lo, 1.0)), lo)
        self.hi = np.where(self.log, np.log(np.where(self.log, hi, 1.0)), hi)
        self.real_lo = lo
        self.real_hi = hi

    def decode_matrix(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        u = self.lo + z * (self.hi - self.lo)
        return np.where(self.log, np.exp(u), u)

    def encode_matrix(self, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(v)
        u = np.where(self.log, np.log(np.maximum(v, 1e-300)), v)
        return (u - self.lo) / (self.hi - self.lo)

    def to_dict(self, row: np.ndarray) -> dict[str, float]:
        return {n: float(row[i]) for i, n in enumerate(self.names)}

    def from_dict(self, point: dict[str, float]) -> np.ndarray:
        return np.array([float(point[n]) for n in self.names])


class _Projector:
    """Project real-valued points onto matching groups and bounds.

    Matching is applied by propagating each group leader, the leader is
    clamped into the effective range where every derived member stays in
    bounds, and free parameters are clamped directly, so the projected
    point is always a fixed point of apply_matching.
    """

    def __init__(self, codec: _Codec, matching: tuple[MatchingGroup, ...]):
        self.codec = codec
        self.matching = matching
        seen: set[str] = set()
        self.groups = []
        for g in matching:
            for m in g.members:
                if m not in codec.index:
                    raise ValueError(f"matching group member {m!r} not in the parameter space")
                if m in seen:
                    raise ValueError(f"parameter {m!r} appears in more than one matching group")
                seen.add(m)
            cols = [codec.index[m] for m in g.members]
            ratios = g.ratios if g.kind == "ratio" else tuple(1.0 for _ in g.members)
            lo_eff, hi_eff = -math.inf, math.inf
            for c, r in zip(cols, ratios):
                # leader value L makes member value L * r / r0
                scale = r / ratios[0]
                lo_eff = max(lo_eff, codec.real_lo[c] / scale)
                hi_eff = min(hi_eff, codec.real_hi[c] / scale)
            if lo_eff > hi_eff:
                raise ValueError(
                    f"matching group {list(g.members)} cannot be satisfied inside the bounds"
                )
            self.groups.append((cols, [r / ratios[0] for r in ratios], lo_eff, hi_eff))
        self.free_cols = np.array(
            [i for n, i in codec.index.items() if n not in seen], dtype=int
        )

    def project_matrix(self, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(v).copy()
        for cols, scales, lo_eff, hi_eff in self.groups:
            lead = np.clip(v[:, cols[0]], lo_eff, hi_eff)
            for c, s in zip(cols, scales):
                v[:, c] = lead * s
        if len(self.free_cols):
            fc = self.free_cols
            v[:, fc] = np.clip(
                v[:, fc], self.codec.real_lo[fc], self.codec.real_hi[fc]
            )
        return v

    def project_dict(self, point: dict[str, float]) -> dict[str, float]:
        row = self.project_matrix(self.codec.from_dict(point))[0]
        out = dict(point)
        out.update(self.codec.to_dict(row))
        return out


@dataclass(frozen=True)
class OptimizerRequest:
    space: ParameterSpace
    matching: tuple[MatchingGroup, ...] = ()
    initial_points: tuple[tuple[dict[str, float], float], ...] = ()
    budget: int = 20
    algorithm: str = "bo"
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        codec = _Codec(self.space)
        _Projector(codec, self.matching)  # validates the groups
        for point, fom in self.initial_points:
            missing = [n for n in self.space.names if n not in point]
            if missing:
                raise ValueError(f"initial point is missing parameters {missing}")
            projected = apply_matching(point, self.matching)
            for e in self.space.entries:
                v = projected[e.name]
                if not (e.lo <= v <= e.hi):
                    raise ValueError(
                        f"initial point leaves the space after matching: "
                        f"{e.name} = {v} outside [{e.lo}, {e.hi}]"
                    )
            if not math.isfinite(fom):
                raise ValueError("initial point fom must be finite")


class _BudgetedObjective:
    def __init__(self, objective, budget, parallelism, on_evaluation):
        self.objective = objective
        self.budget = budget
        self.parallelism = max(1, parallelism)
        self.on_evaluation = on_evaluation
        self.evaluations: list[Evaluation] = []

    @property
    def remaining(self) -> int:
        return self.budget - len(self.evaluations)

    def _call_one(self, point):
        try:
            fom = float(self.objective(point))
            if math.isnan(fom):
                return 0.0, "objective returned NaN"
            return fom, None
        except Exception as exc:
            return 0.0, f"{type(exc).__name__}: {exc}"

    def eval_batch(self, points: list[dict[str, float]]) -> list[float]:
        points = points[: self.remaining]
        if not points:
            return []
        if self.parallelism > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                outcomes = list(pool.map(self._call_one, points))
        else:
            outcomes = [self._call_one(p) for p in points]
        foms = []
        for point, (fom, error) in zip(points, outcomes):
            ev = Evaluation(point=dict(point), fom=fom, error=error)
            self.evaluations.append(ev)
            if self.on_evaluation is not None:
                self.on_evaluation(ev)
            foms.append(fom)
        return foms


def expected_improvement(
    mean: np.ndarray, var: np.ndarray, best_so_far: float
) -> np.ndarray:
    """EI for maximization; 0 when there is no variance and no gain."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    gain = mean - best_so_far
    ei = np.where(sigma > 0.0, 0.0, np.maximum(gain, 0.0))
    pos = sigma > 0.0
    if np.any(pos):
        z = gain[pos] / sigma[pos]
        ei_pos = gain[pos] * norm.cdf(z) + sigma[pos] * norm.pdf(z)
        ei = ei.copy()
        ei[pos] = ei_pos
    return np.maximum(ei, 0.0)


def de_step(
    population: np.ndarray,
    f_weight: float,
    crossover_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One DE/rand/1/bin trial generation in the unit cube, clipped."""
    pop = np.atleast_2d(population)
    n, d = pop.shape
    if n < 4:
        raise ValueError("differential evolution needs a population of at least 4")
    trials = pop.copy()
    for i in range(n):
        others = [j for j in range(n) if j != i]
        r1, r2, r3 = rng.choice(others, size=3, replace=False)
        mutant = pop[r1] + f_weight * (pop[r2] - pop[r3])
        cross = rng.random(d) < crossover_rate
        cross[rng.integers(d)] = True
        trials[i] = np.where(cross, mutant, pop[i])
    return np.clip(trials, 0.0, 1.0)


def optimize(
    req: OptimizerRequest,
    objective,
    parallelism: int = 1,
    on_evaluation=None,
) -> OptimizerResult:
    """Run the requested algorithm for exactly `req.budget` objective calls."""
    codec = _Codec(req.space)
    projector = _Projector(codec, req.matching)
    run = _BudgetedObjective(objective, req.budget, parallelism, on_evaluation)
    rng = np.random.default_rng(req.seed)

    init_pts = [
        (projector.project_dict(apply_matching(p, req.matching)), f)
        for p, f in req.initial_points
    ]
    if req.algorithm == "bo":
        _run_bo(req, run, codec, projector, rng, init_pts)
    else:
        _run_de(req, run, codec, projector, rng, init_pts)

    best_point: dict[str, float] | None = None
    best_fom = -math.inf
    for p, f in req.initial_points:
        if f > best_fom:
            best_point, best_fom = dict(p), f
    for ev in run.evaluations:
        if ev.fom > best_fom:
            best_point, best_fom = dict(ev.point), ev.fom
    assert best_point is not None
    return OptimizerResult(
        best_point=best_point,
        best_fom=best_fom,
        evaluations=tuple(run.evaluations),
        budget_used=len(run.evaluations),
    )


def _random_points(
    rng: np.random.Generator, n: int, codec: _Codec, projector: _Projector
) -> np.ndarray:
    return projector.project_matrix(codec.decode_matrix(rng.random((n, codec.dim))))


def _run_bo(req, run, codec, projector, rng, init_pts):
    xs: list[np.ndarray] = []
    ys: list[float] = []
    for p, f in init_pts:
        xs.append(codec.encode_matrix(codec.from_dict(p))[0])
        ys.append(f)
    if not xs and run.remaining > 0:
        n_seed = min(run.remaining, max(3, 2 * codec.dim))
        seeds = _random_points(rng, n_seed, codec, projector)
        foms = run.eval_batch([codec.to_dict(r) for r in seeds])
        for r, f in zip(codec.encode_matrix(seeds), foms):
            xs.append(r)
            ys.append(f)

    while run.remaining > 0:
        proposal_v = None
        try:
            # standardize targets so the fixed unit signal variance is
            # calibrated to the observed fom spread (EI ranking is
            # invariant under this affine rescale)
            y = np.array(ys)
            scale = float(np.std(y))
            if scale < 1e-9:
                scale = 1.0
            model = gp_fit(np.array(xs), y / scale, GpHyper())
            f_star = float(np.max(y)) / scale
            cand_v = _random_points(rng, EI_CANDIDATES, codec, projector)
            cand_z = codec.encode_matrix(cand_v)
            mean, var = gp_predict(model, cand_z)
            ei = expected_improvement(mean, var, f_star)
            top = np.argsort(-ei)[:EI_REFINE_TOP]
            best_z, best_ei = None, -1.0
            for idx in top:
                z, e = _refine_ei(cand_z[idx], model, f_star, codec, projector)
                if e > best_ei:
                    best_z, best_ei = z, e
            # a proposal on top of known data adds nothing: explore instead
            if xs and float(np.min(np.sum((np.array(xs) - best_z) ** 2, axis=1))) < 1e-16:
                proposal_v = _random_points(rng, 1, codec, projector)[0]
            else:
                proposal_v = projector.project_matrix(codec.decode_matrix(best_z))[0]
        except GpError:
            proposal_v = _random_points(rng, 1, codec, projector)[0]
        fom = run.eval_batch([codec.to_dict(proposal_v)])
        if not fom:
            break
        xs.append(codec.encode_matrix(proposal_v)[0])
        ys.append(fom[0])


def _refine_ei(z0, model, f_star, codec, projector):
    """Coordinate-descent polish of an EI candidate, derivative-free."""

    def ei_at(z):
        zp = codec.encode_matrix(projector.project_matrix(codec.decode_matrix(z)))[0]
        mean, var = gp_predict(model, zp)
        return float(expected_improvement(mean, var, f_star)[0]), zp

    cur_ei, z = ei_at(z0)
    step = 0.25
    d = codec.dim
    for it in range(EI_REFINE_ITERS):
        j = it % d
        improved = False
        for delta in (step, -step):
            z_try = z.copy()
            z_try[j] = min(max(z_try[j] + delta, 0.0), 1.0)
            e, zp = ei_at(z_try)
            if e > cur_ei:
                cur_ei, z = e, zp
                improved = True
        if not improved:
            step *= 0.5
    return z, cur_ei


def _run_de(req, run, codec, projector, rng, init_pts):
    if req.budget < 4 and not init_pts:
        pts = _random_points(rng, run.remaining, codec, projector)
        run.eval_batch([codec.to_dict(r) for r in pts])
        return
    pop_size = max(4, min(DE_MAX_POP, req.budget))
    seeded = sorted(init_pts, key=lambda pf: -pf[1])[:pop_size]
    pop_v = [codec.from_dict(p) for p, _ in seeded]
    pop_f = [f for _, f in seeded]
    n_fill = pop_size - len(pop_v)
    if n_fill > 0:
        fill = _random_points(rng, n_fill, codec, projector)
        fill = fill[: max(run.remaining, 0)]
        foms = run.eval_batch([codec.to_dict(r) for r in fill])
        for r, f in zip(fill, foms):
            pop_v.append(r)
            pop_f.append(f)
    if run.remaining <= 0 or len(pop_v) < 4:
        if run.remaining > 0:
            pts = _random_points(rng, run.remaining, codec, projector)
            run.eval_batch([codec.to_dict(r) for r in pts])
        return
    pop_z = codec.encode_matrix(np.array(pop_v))
    pop_f = np.array(pop_f)
    while run.remaining > 0:
        trials_z = de_step(pop_z, DE_F_WEIGHT, DE_CROSSOVER, rng)
        trials_v = projector.project_matrix(codec.decode_matrix(trials_z))
        k = min(len(trials_v), run.remaining)
        foms = run.eval_batch([codec.to_dict(r) for r in trials_v[:k]])
        trials_zp = codec.encode_matrix(trials_v)
        for i, f in enumerate(foms):
            # greedy one-to-one selection keeps the population elite
            if f >= pop_f[i]:
                pop_z[i] = trials_zp[i]
                pop_f[i] = f
