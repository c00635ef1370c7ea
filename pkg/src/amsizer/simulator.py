"""Circuit simulation on the modified nodal analysis formulation.

Unknown vector: voltages of all non-ground nets (sorted by name) followed
by one branch current per V source (netlist order).  The branch current
of a V source flows from its n+ terminal through the source to n-, so a
source delivering power reports a negative current, matching SPICE's
I(Vxx) convention.

DC solves run a convergence ladder: plain Newton, then Newton with gmin
shunts on every node, then source stepping; any gmin-assisted solution
is polished with a final gmin = 0 Newton pass so the reported residual
is the true KCL residual.  AC is one complex solve per frequency around
the DC operating point; transient is backward Euler with Newton at each
step.  Pure evaluation throughout: every call is independently
reentrant and safe to run concurrently.
"""

from __future__ import annotations

import warnings
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .mosfet import MosModelCard, classify_region, mos_current
from .netlist import BindingError, Circuit, DeviceKind

DEFAULT_NEWTON_TOL = 1e-9
DEFAULT_MAX_ITERS = 100
DEFAULT_GMIN = 1e-12
DEFAULT_SOURCE_STEPS = 10
# per-iteration cap on any node-voltage update, volts
DEFAULT_DV_MAX = 1.0
MIN_PTS_PER_DECADE = 20


class SimulationError(RuntimeError):
    pass


class NonConvergence(SimulationError):
    def __init__(self, residual: float, iterations: int, context: str = ""):
        self.residual = residual
        self.iterations = iterations
        where = f" during {context}" if context else ""
        super().__init__(
            f"Newton did not converge{where}: residual {residual:.3e} A "
            f"after {iterations} iterations"
        )


class SingularMatrix(SimulationError):
    def __init__(self, unknown: str):
        self.unknown = unknown
        super().__init__(f"singular MNA matrix at unknown {unknown!r}")


@dataclass(frozen=True)
class DcSolution:
    node_voltages: dict[str, float]
    branch_currents: dict[str, float]
    transistor_ops: dict[str, dict]
    source_power_w: dict[str, float] = field(default_factory=dict)
    residual_a: float = 0.0
    iterations: int = 0


@dataclass(frozen=True)
class AcSweep:
    freqs_hz: np.ndarray
    transfer: np.ndarray


@dataclass(frozen=True)
class TransientTrace:
    times_s: np.ndarray
    node_voltages: dict[str, np.ndarray]


def _pwl_value(points: list[tuple[float, float]], t: float) -> float:
    """Piecewise-linear lookup, clamped at both ends.

    A repeated time value makes an ideal step (the later entry wins at
    the exact edge).
    """
    times = [p[0] for p in points]
    i = bisect_right(times, t)
    if i == 0:
        return points[0][1]
    if i == len(points):
        return points[-1][1]
    t0, v0 = points[i - 1]
    t1, v1 = points[i]
    if t1 == t0:
        return v1
    return v0 + (v1 - v0) * (t - t0) / (t1 - t0)


class _Compiled:
    """Index-resolved form of a numeric circuit for fast MNA assembly."""

    def __init__(self, circuit: Circuit, models: dict[str, MosModelCard]):
        unbound = circuit.params
        if unbound:
            raise BindingError(
                f"circuit has unbound placeholders {list(unbound)}; bind a parameter point first"
            )
        self.circuit = circuit
        nets = sorted(circuit.nets - {"0"})
        self.node_index = {n: i for i, n in enumerate(nets)}
        self.node_index["0"] = -1
        self.n_nodes = len(nets)
        self.vsources = [d for d in circuit.devices if d.kind is DeviceKind.VSOURCE]
        self.isources = [d for d in circuit.devices if d.kind is DeviceKind.ISOURCE]
        self.n_unknowns = self.n_nodes + len(self.vsources)
        self.labels = list(nets) + [f"I({v.id})" for v in self.vsources]

        # MOSFETs: (device, card, W, L, d, g, s) with -1 for ground
        self.mosfets = []
        for d in circuit.devices:
            if d.kind is not DeviceKind.MOSFET:
                continue
            card = models.get(d.model or "")
            if card is None:
                raise SimulationError(f"no model card named {d.model!r} for device {d.id}")
            idx = self.node_index
            self.mosfets.append(
                (
                    d,
                    card,
                    d.value("W"),
                    d.value("L"),
                    idx[d.terminals[0]],
                    idx[d.terminals[1]],
                    idx[d.terminals[2]],
                )
            )

        n = self.n_unknowns
        g0 = np.zeros((n, n))
        for d in circuit.devices:
            if d.kind is DeviceKind.RESISTOR:
                a = self.node_index[d.terminals[0]]
                b = self.node_index[d.terminals[1]]
                g = 1.0 / d.value("R")
                if a >= 0:
                    g0[a, a] += g
                if b >= 0:
                    g0[b, b] += g
                if a >= 0 and b >= 0:
                    g0[a, b] -= g
                    g0[b, a] -= g
        for k, v in enumerate(self.vsources):
            row = self.n_nodes + k
            p = self.node_index[v.terminals[0]]
            m = self.node_index[v.terminals[1]]
            if p >= 0:
                g0[row, p] += 1.0
                g0[p, row] += 1.0
            if m >= 0:
                g0[row, m] -= 1.0
                g0[m, row] -= 1.0
        self.g0 = g0

        # DC source vector at scale 1 (F = G x - scale*b + mos terms)
        b = np.zeros(n)
        for k, v in enumerate(self.vsources):
            b[self.n_nodes + k] = v.value("DC")
        for s in self.isources:
            p = self.node_index[s.terminals[0]]
            m = self.node_index[s.terminals[1]]
            i = s.value("DC")
            if p >= 0:
                b[p] -= i
            if m >= 0:
                b[m] += i
        self.b_dc = b

        # capacitance matrix: explicit caps plus each MOSFET's Cgs
        c = np.zeros((n, n))
        for d in circuit.devices:
            if d.kind is DeviceKind.CAPACITOR:
                self._stamp_pair(c, self.node_index[d.terminals[0]],
                                 self.node_index[d.terminals[1]], d.value("C"))
        for _, card, w, l, _, gi, si in self.mosfets:
            cgs = (2.0 / 3.0) * w * l * card.cox_area
            if cgs > 0.0:
                self._stamp_pair(c, gi, si, cgs)
        self.c_mat = c

    @staticmethod
    def _stamp_pair(mat: np.ndarray, a: int, b: int, val: float):
        if a >= 0:
            mat[a, a] += val
        if b >= 0:
            mat[b, b] += val
        if a >= 0 and b >= 0:
            mat[a, b] -= val
            mat[b, a] -= val

    # -- nonlinear assembly ------------------------------------------------

    def mos_terminal_voltages(self, x: np.ndarray, di: int, gi: int, si: int):
        vd = x[di] if di >= 0 else 0.0
        vg = x[gi] if gi >= 0 else 0.0
        vs = x[si] if si >= 0 else 0.0
        return vg, vd, vs

    def residual_and_jacobian(
        self, x: np.ndarray, scale: float, gmin: float
    ) -> tuple[np.ndarray, np.ndarray]:
        j = self.g0.copy()
        if gmin > 0.0:
            j[range(self.n_nodes), range(self.n_nodes)] += gmin
        f = j @ x - scale * self.b_dc
        for _, card, w, l, di, gi, si in self.mosfets:
            vg, vd, vs = self.mos_terminal_voltages(x, di, gi, si)
            i_d, di_dvgs, di_dvds = mos_current(card, w, l, vg, vd, vs)
            if di >= 0:
                f[di] += i_d
                if gi >= 0:
                    j[di, gi] += di_dvgs
                j[di, di] += di_dvds
                if si >= 0:
                    j[di, si] -= di_dvgs + di_dvds
            if si >= 0:
                f[si] -= i_d
                if gi >= 0:
                    j[si, gi] -= di_dvgs
                if di >= 0:
                    j[si, di] -= di_dvds
                j[si, si] += di_dvgs + di_dvds
        return f, j

    def _solve_linear(self, j: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(j, check_finite=False)
        diag = np.abs(np.diag(lu))
        bad = diag <= diag.max() * 1e-14 if diag.max() > 0 else np.ones_like(diag, bool)
        if bad.any():
            raise SingularMatrix(self.labels[int(np.argmax(bad))])
        dx = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
        if not np.all(np.isfinite(dx)):
            raise SingularMatrix(self.labels[0])
        return dx

    def newton(
        self,
        x0: np.ndarray,
        scale: float = 1.0,
        gmin: float = 0.0,
        tol: float = DEFAULT_NEWTON_TOL,
        max_iters: int = DEFAULT_MAX_ITERS,
        dv_max: float = DEFAULT_DV_MAX,
        b_override: np.ndarray | None = None,
        c_over_dt: np.ndarray | None = None,
        x_prev: np.ndarray | None = None,
        context: str = "",
    ) -> tuple[np.ndarray, int, float]:
        """Damped Newton-Raphson; returns (x, iterations, residual)."""
        x = x0.copy()
        residual = float("inf")
        for it in range(max_iters):
            f, j = self.residual_and_jacobian(x, scale, gmin)
            if b_override is not None:
                f += scale * self.b_dc - b_override
            if c_over_dt is not None:
                f += c_over_dt @ (x - x_prev)
                j += c_over_dt
            residual = float(np.max(np.abs(f)))
            if residual <= tol:
                return x, it, residual
            dx = self._solve_linear(j, -f)
            np.clip(dx[: self.n_nodes], -dv_max, dv_max, out=dx[: self.n_nodes])
            x += dx
        raise NonConvergence(residual, max_iters, context)


def _dc_state_vector(comp: _Compiled, dc: DcSolution) -> np.ndarray:
    x = np.zeros(comp.n_unknowns)
    for net, i in comp.node_index.items():
        if i >= 0:
            x[i] = dc.node_voltages[net]
    for k, v in enumerate(comp.vsources):
        x[comp.n_nodes + k] = dc.branch_currents[v.id]
    return x


def solve_dc(
    circuit: Circuit,
    models: dict[str, MosModelCard],
    newton_tol: float = DEFAULT_NEWTON_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    gmin: float = DEFAULT_GMIN,
    source_steps: int = DEFAULT_SOURCE_STEPS,
) -> DcSolution:
    """DC operating point via the Newton convergence ladder."""
    comp = _Compiled(circuit, models)
    zeros = np.zeros(comp.n_unknowns)
    last_error: NonConvergence | SingularMatrix | None = None

    def polished(x: np.ndarray, iters: int, residual: float):
        # drop the gmin shunts for a true-KCL solution; nodes held up only
        # by gmin (e.g. capacitor-only nets) keep the shunted solution,
        # whose device-KCL error is bounded by gmin * |v| << newton_tol
        try:
            x2, it2, res2 = comp.newton(
                x, tol=newton_tol, max_iters=max_iters, context="gmin polish"
            )
            return x2, iters + it2, res2
        except (NonConvergence, SingularMatrix):
            return x, iters, residual

    def plain():
        return comp.newton(zeros, tol=newton_tol, max_iters=max_iters, context="plain Newton")

    def with_gmin():
        x, iters, residual = comp.newton(
            zeros, gmin=gmin, tol=newton_tol, max_iters=max_iters, context="gmin Newton"
        )
        return polished(x, iters, residual)

    def source_stepping():
        x, total = zeros, 0
        for scale in np.linspace(1.0 / source_steps, 1.0, source_steps):
            x, iters, residual = comp.newton(
                x, scale=float(scale), gmin=gmin, tol=newton_tol, max_iters=max_iters,
                context=f"source stepping at scale {scale:.2f}",
            )
            total += iters
        return polished(x, total, residual)

    attempts = [plain, with_gmin, source_stepping]
    for attempt in attempts:
        try:
            x, iters, residual = attempt()
        except (NonConvergence, SingularMatrix) as exc:
            last_error = exc
            continue
        return _finish_dc(comp, x, iters, residual)
    assert last_error is not None
    raise last_error


def _finish_dc(comp: _Compiled, x: np.ndarray, iters: int, residual: float) -> DcSolution:
    node_voltages = {"0": 0.0}
    for net, i in comp.node_index.items():
        if i >= 0:
            node_voltages[net] = float(x[i])
    branch_currents = {
        v.id: float(x[comp.n_nodes + k]) for k, v in enumerate(comp.vsources)
    }
    ops = {}
    for dev, card, w, l, di, gi, si in comp.mosfets:
        vg, vd, vs = comp.mos_terminal_voltages(x, di, gi, si)
        i_d, gm, gds = mos_current(card, w, l, vg, vd, vs)
        pol = card.polarity
        vgs_n = pol * (vg - vs)
        vds_n = pol * (vd - vs)
        if vds_n >= 0.0:
            region = classify_region(vgs_n, vds_n, card.vth)
        else:
            # reverse conduction: classify in the swapped (forward) frame
            region = classify_region(vgs_n - vds_n, -vds_n, card.vth)
        ops[dev.id] = {
            "id_A": float(i_d),
            "vgs_V": float(vgs_n),
            "vds_V": float(vds_n),
            "gm_S": float(gm),
            "gds_S": float(gds),
            "region": region,
        }
    power = {}
    for k, v in enumerate(comp.vsources):
        p = comp.node_index[v.terminals[0]]
        m = comp.node_index[v.terminals[1]]
        dv = (x[p] if p >= 0 else 0.0) - (x[m] if m >= 0 else 0.0)
        power[v.id] = float(abs(dv * x[comp.n_nodes + k]))
    for s in comp.isources:
        p = comp.node_index[s.terminals[0]]
        m = comp.node_index[s.terminals[1]]
        dv = (x[p] if p >= 0 else 0.0) - (x[m] if m >= 0 else 0.0)
        power[s.id] = float(abs(dv * s.value("DC")))
    return DcSolution(
        node_voltages=node_voltages,
        branch_currents=branch_currents,
        transistor_ops=ops,
        source_power_w=power,
        residual_a=residual,
        iterations=iters,
    )


def frequency_grid(f_lo: float, f_hi: float, pts_per_decade: int = MIN_PTS_PER_DECADE) -> np.ndarray:
    """Geometric grid with at least MIN_PTS_PER_DECADE points per decade."""
    if f_lo <= 0 or f_hi <= 0:
        raise ValueError("frequencies must be > 0")
    if f_lo > f_hi:
        raise ValueError("f_lo must be <= f_hi")
    if f_lo == f_hi:
        return np.array([f_lo])
    ppd = max(pts_per_decade, MIN_PTS_PER_DECADE)
    decades = np.log10(f_hi / f_lo)
    n = int(np.ceil(decades * ppd)) + 1
    return np.geomspace(f_lo, f_hi, n)


def solve_ac(
    circuit: Circuit,
    models: dict[str, MosModelCard],
    dc: DcSolution,
    input_source: str,
    output_net: str,
    f_lo: float,
    f_hi: float,
    pts_per_decade: int = MIN_PTS_PER_DECADE,
) -> AcSweep:
    """Small-signal transfer V(output_net)/AC(input_source) on a log grid."""
    comp = _Compiled(circuit, models)
    if output_net not in comp.node_index:
        raise SimulationError(f"unknown output net {output_net!r}")
    try:
        src = circuit.device(input_source)
    except KeyError:
        raise SimulationError(f"unknown input source {input_source!r}") from None
    if src.kind not in (DeviceKind.VSOURCE, DeviceKind.ISOURCE):
        raise SimulationError(f"{input_source!r} is not an independent source")

    x = _dc_state_vector(comp, dc)
    n = comp.n_unknowns
    g = comp.g0.copy()
    for _, card, w, l, di, gi, si in comp.mosfets:
        vg, vd, vs = comp.mos_terminal_voltages(x, di, gi, si)
        _, gm, gds = mos_current(card, w, l, vg, vd, vs)
        if di >= 0:
            if gi >= 0:
                g[di, gi] += gm
            g[di, di] += gds
            if si >= 0:
                g[di, si] -= gm + gds
        if si >= 0:
            if gi >= 0:
                g[si, gi] -= gm
            if di >= 0:
                g[si, di] -= gds
            g[si, si] += gm + gds

    b = np.zeros(n, dtype=complex)
    for k, v in enumerate(comp.vsources):
        if "AC" in v.values:
            b[comp.n_nodes + k] = v.value("AC")
    for s in comp.isources:
        if "AC" in s.values:
            p = comp.node_index[s.terminals[0]]
            m = comp.node_index[s.terminals[1]]
            if p >= 0:
                b[p] -= s.value("AC")
            if m >= 0:
                b[m] += s.value("AC")

    freqs = frequency_grid(f_lo, f_hi, pts_per_decade)
    a = g[None, :, :] + 1j * 2.0 * np.pi * freqs[:, None, None] * comp.c_mat[None, :, :]
    rhs = np.broadcast_to(b[:, None], (len(freqs), n, 1))
    try:
        xs = np.linalg.solve(a, rhs)[:, :, 0]
    except np.linalg.LinAlgError:
        raise SingularMatrix("AC system") from None
    vout = xs[:, comp.node_index[output_net]]
    ac_in = src.values.get("AC", 1.0)
    if isinstance(ac_in, float) and ac_in != 0.0:
        transfer = vout / ac_in
    else:
        transfer = vout
    return AcSweep(freqs_hz=freqs, transfer=transfer)


def solve_transient(
    circuit: Circuit,
    models: dict[str, MosModelCard],
    dc: DcSolution,
    stimulus: dict[str, list[tuple[float, float]]],
    t_stop: float,
    dt: float,
    newton_tol: float = DEFAULT_NEWTON_TOL,
    max_iters: int = 50,
) -> TransientTrace:
    """Backward-Euler transient from the DC solution.

    `stimulus` overrides the DC value of named sources with a
    piecewise-linear waveform [(t, value), ...]; unnamed sources hold
    their DC value.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if t_stop < dt:
        raise ValueError("t_stop must be >= dt")
    comp = _Compiled(circuit, models)
    for sid in stimulus:
        dev = None
        try:
            dev = circuit.device(sid)
        except KeyError:
            pass
        if dev is None or dev.kind not in (DeviceKind.VSOURCE, DeviceKind.ISOURCE):
            raise SimulationError(f"stimulus target {sid!r} is not an independent source")

    n_steps = int(round(t_stop / dt))
    times = np.arange(n_steps + 1) * dt
    x = _dc_state_vector(comp, dc)
    c_over_dt = comp.c_mat / dt

    # (points, vsource row | None, isource (p, m, dc) | None) per driven source
    drives = []
    for sid, points in stimulus.items():
        dev = circuit.device(sid)
        if dev.kind is DeviceKind.VSOURCE:
            row = comp.n_nodes + [v.id for v in comp.vsources].index(sid)
            drives.append((points, row, None))
        else:
            p = comp.node_index[dev.terminals[0]]
            m = comp.node_index[dev.terminals[1]]
            drives.append((points, None, (p, m, dev.value("DC"))))

    history = np.empty((n_steps + 1, comp.n_unknowns))
    history[0] = x
    for k in range(1, n_steps + 1):
        t = k * dt
        b = comp.b_dc.copy()
        for points, vrow, isrc in drives:
            val = _pwl_value(points, t)
            if vrow is not None:
                b[vrow] = val
            else:
                p, m, base = isrc
                if p >= 0:
                    b[p] += base - val
                if m >= 0:
                    b[m] -= base - val
        try:
            x, _, _ = comp.newton(
                x,
                tol=newton_tol,
                max_iters=max_iters,
                b_override=b,
                c_over_dt=c_over_dt,
                x_prev=history[k - 1],
                context=f"transient step {k} (t = {t:.6g} s)",
            )
        except NonConvergence as exc:
            raise NonConvergence(exc.residual, exc.iterations,
                                 f"transient step {k} (t = {t:.6g} s)") from None
        history[k] = x

    voltages = {"0": np.zeros(n_steps + 1)}
    for net, i in comp.node_index.items():
        if i >= 0:
            voltages[net] = history[:, i].copy()
    return TransientTrace(times_s=times, node_voltages=voltages)
