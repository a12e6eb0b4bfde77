"""MLS-MPM solver over the six constitutive classes.

One substep is the classic three-phase transfer with quadratic B-spline
kernels and APIC affine velocities:

  P2G   scatter mass and momentum (body forces folded in) plus the fused
        MLS stress contribution to the background grid
  grid  momentum -> velocity, damping, boundary conditions, colliders
  G2P   gather velocity and the affine matrix, update F and positions

Grid reductions run as per-node sums over a fixed offset order
(np.bincount on a compact active box), so results are bit-reproducible
regardless of worker thread count.  Body forces (gravity, wind) enter
through the particle momentum with per-particle scale factors so
schedules can manipulate single objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .constitutive import batch_constitutive
from .errors import (DomainError, EmptyScene, GridOverflow, NumericalError,
                     ParticleEscape)
from .materials import (DEFAULT_MATERIAL_MODEL, MaterialClass, MaterialField,
                        MaterialModel, validate_field, wave_speeds)

_BC_MODES = ("sticky", "slip", "separate")
_WALL_NAMES = ("x_min", "x_max", "y_max", "z_min", "z_max")  # y_min is the ground
GRID_MARGIN = 3  # cells kept clear between particles and the grid faces


def _normalize_wall_bc(wall_bc):
    """Uniform string or per-wall mapping -> complete per-wall dict."""
    if isinstance(wall_bc, str):
        if wall_bc not in _BC_MODES:
            raise DomainError(f"boundary modes must be one of {_BC_MODES}")
        return {name: wall_bc for name in _WALL_NAMES}
    walls = {name: "separate" for name in _WALL_NAMES}
    for name, mode in dict(wall_bc).items():
        if name not in _WALL_NAMES:
            raise DomainError(f"unknown wall {name!r}; walls are {_WALL_NAMES}")
        if mode not in _BC_MODES:
            raise DomainError(f"boundary modes must be one of {_BC_MODES}")
        walls[name] = mode
    return walls


@dataclass
class SimConfig:
    """Solver configuration.

    Domain bounds are optional; when omitted they are derived from the
    initial particle bounds, the ground plane, and a headroom factor.
    """

    h_grid: float
    cfl_number: float = 0.3
    frames: int = 24
    fps: float = 24.0
    domain_lo: Optional[tuple] = None
    domain_hi: Optional[tuple] = None
    ground_height: float = 0.0
    ground_bc: str = "sticky"
    wall_bc: object = "separate"  # uniform mode or {wall name: mode}
    damping: float = 0.0
    seed: int = 0

    def validate(self):
        if not (self.h_grid > 0):
            raise DomainError("h_grid must be positive")
        if not (0.0 < self.cfl_number < 1.0):
            raise DomainError("cfl_number must lie in (0, 1)")
        if not (self.fps > 0):
            raise DomainError("fps must be positive")
        if self.frames < 1:
            raise DomainError("frames must be >= 1")
        if self.ground_bc not in _BC_MODES:
            raise DomainError(f"boundary modes must be one of {_BC_MODES}")
        _normalize_wall_bc(self.wall_bc)
        if self.damping < 0:
            raise DomainError("damping must be non-negative")
        return self


@dataclass(frozen=True)
class ObjectInit:
    """One object entering the scene: a filled field plus its placement."""

    field: MaterialField
    h_fill: float
    velocity: tuple = (0.0, 0.0, 0.0)
    translate: tuple = (0.0, 0.0, 0.0)
    rotate: Optional[np.ndarray] = None  # 3x3, applied before translation


@dataclass(frozen=True)
class KinematicCollider:
    """Immovable prop coupled through grid velocities.

    kind "halfspace": params = (nx, ny, nz, offset), inside when
    n . x <= offset.  kind "sphere": params = (cx, cy, cz, radius).
    """

    kind: str
    params: tuple
    bc: str = "sticky"


@dataclass
class SimulationState:
    # per particle
    x: np.ndarray
    v: np.ndarray
    c_apic: np.ndarray
    f: np.ndarray
    mass: np.ndarray
    vol0: np.ndarray
    object_id: np.ndarray
    part: np.ndarray
    interior: np.ndarray
    class_id: np.ndarray
    young_modulus: np.ndarray
    poisson_ratio: np.ndarray
    density: np.ndarray
    plastic: np.ndarray
    gravity_scale: np.ndarray
    wind_scale: np.ndarray
    # grid
    origin: np.ndarray
    dims: np.ndarray  # node counts per axis
    h: float
    # globals
    gravity: np.ndarray = dc_field(default_factory=lambda: np.array([0.0, -9.8, 0.0]))
    wind: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    ground_height: float = 0.0
    ground_bc: str = "sticky"
    wall_bc: dict = dc_field(default_factory=lambda: _normalize_wall_bc("separate"))
    damping: float = 0.0
    t: float = 0.0
    table: MaterialModel = DEFAULT_MATERIAL_MODEL
    colliders: tuple = ()

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]

    def object_ids(self):
        return np.unique(self.object_id)

    def object_mask(self, oid) -> np.ndarray:
        return self.object_id == oid

    def total_mass(self) -> float:
        return float(self.mass.sum())

    def total_momentum(self) -> np.ndarray:
        return (self.mass[:, None] * self.v).sum(axis=0)

    def live_wave_speeds(self):
        e_eff = np.where(self.class_id == MaterialClass.RIGID,
                         self.table.rigid_young_modulus, self.young_modulus)
        return wave_speeds(e_eff, self.poisson_ratio, self.density)


def build_state(objects, cfg: SimConfig, gravity=(0.0, -9.8, 0.0),
                wind=(0.0, 0.0, 0.0), colliders=(),
                table: MaterialModel = DEFAULT_MATERIAL_MODEL) -> SimulationState:
    """Assemble particles from filled fields and size the background grid.

    Particle volume is h_fill^3; mass is density * volume; deformation
    starts at identity with zero affine velocity.
    """
    cfg.validate()
    if not objects:
        raise EmptyScene("no objects in scene")

    xs, vs, parts, interiors, classes, es, nus, rhos, vols, oids = \
        [], [], [], [], [], [], [], [], [], []
    for oid, obj in enumerate(objects):
        report = validate_field(obj.field)
        if not report.ok:
            raise DomainError(f"object {oid} field invalid:\n{report}")
        if not (obj.h_fill > 0):
            raise DomainError(f"object {oid}: h_fill must be positive")
        pos = obj.field.positions
        if obj.rotate is not None:
            rot = np.asarray(obj.rotate, dtype=np.float64)
            pos = pos @ rot.T
        pos = pos + np.asarray(obj.translate, dtype=np.float64)
        n = pos.shape[0]
        xs.append(pos)
        vs.append(np.tile(np.asarray(obj.velocity, dtype=np.float64), (n, 1)))
        parts.append(obj.field.part_label if obj.field.part_label is not None
                     else np.zeros(n, dtype=np.int32))
        interiors.append(obj.field.interior_flag)
        classes.append(obj.field.class_id)
        es.append(obj.field.young_modulus)
        nus.append(obj.field.poisson_ratio)
        rhos.append(obj.field.density)
        vols.append(np.full(n, obj.h_fill ** 3))
        oids.append(np.full(n, oid, dtype=np.int32))

    x = np.concatenate(xs)
    vol0 = np.concatenate(vols)
    rho = np.concatenate(rhos)
    n_total = x.shape[0]
    if n_total == 0:
        raise EmptyScene("scene has zero particles")

    h = cfg.h_grid
    margin = GRID_MARGIN * h
    if cfg.domain_lo is None or cfg.domain_hi is None:
        lo = x.min(axis=0)
        hi = x.max(axis=0)
        extent = np.maximum(hi - lo, h)
        lo = lo - 0.5 * extent - margin
        hi = hi + 0.5 * extent + margin
        lo[1] = min(lo[1], cfg.ground_height - margin)
    else:
        lo = np.asarray(cfg.domain_lo, dtype=np.float64)
        hi = np.asarray(cfg.domain_hi, dtype=np.float64)
        if np.any(hi - lo <= 0):
            raise DomainError("domain_hi must exceed domain_lo")
    dims = np.ceil((hi - lo) / h).astype(np.int64) + 1

    state = SimulationState(
        x=x, v=np.concatenate(vs),
        c_apic=np.zeros((n_total, 3, 3)),
        f=np.tile(np.eye(3), (n_total, 1, 1)),
        mass=rho * vol0, vol0=vol0,
        object_id=np.concatenate(oids),
        part=np.concatenate(parts).astype(np.int32),
        interior=np.concatenate(interiors),
        class_id=np.concatenate(classes).astype(np.int32),
        young_modulus=np.concatenate(es),
        poisson_ratio=np.concatenate(nus),
        density=rho,
        plastic=np.zeros(n_total),
        gravity_scale=np.ones(n_total),
        wind_scale=np.ones(n_total),
        origin=lo, dims=dims, h=h,
        gravity=np.asarray(gravity, dtype=np.float64),
        wind=np.asarray(wind, dtype=np.float64),
        ground_height=cfg.ground_height,
        ground_bc=cfg.ground_bc, wall_bc=_normalize_wall_bc(cfg.wall_bc),
        damping=cfg.damping, table=table,
        colliders=tuple(colliders),
    )
    _check_inside(state, build=True)
    return state


def _check_inside(state: SimulationState, build=False):
    gx = (state.x - state.origin) / state.h
    lo_ok = gx >= GRID_MARGIN
    hi_ok = gx <= (state.dims - 1) - GRID_MARGIN
    bad = ~(lo_ok & hi_ok).all(axis=1)
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        msg = (f"particle {i} at {state.x[i]} outside grid margin "
               f"(origin {state.origin}, dims {state.dims}, h {state.h})")
        if build:
            raise GridOverflow(msg)
        raise ParticleEscape(msg)


def stable_dt(state: SimulationState, cfg: SimConfig) -> float:
    """CFL bound: dt = cfl * h / (max c_p + max |v|), from live parameters."""
    c_p, _ = state.live_wave_speeds()
    v_max = float(np.sqrt((state.v ** 2).sum(axis=1).max(initial=0.0)))
    return cfg.cfl_number * state.h / (float(c_p.max()) + v_max)


def _bspline_weights(fx):
    # quadratic B-spline, fx in [0.5, 1.5)
    w0 = 0.5 * (1.5 - fx) ** 2
    w1 = 0.75 - (fx - 1.0) ** 2
    w2 = 0.5 * (fx - 0.5) ** 2
    return np.stack([w0, w1, w2], axis=1)  # (N, 3 offsets, 3 axes)


def _apply_bc_component(vel, mask, axis, sign, mode):
    """Wall with inward normal sign*e_axis; mode per _BC_MODES."""
    if not np.any(mask):
        return
    if mode == "sticky":
        vel[mask] = 0.0
    elif mode == "slip":
        vel[mask, axis] = 0.0
    else:  # separate: remove only the into-the-wall component
        comp = vel[mask, axis]
        vel[mask, axis] = np.maximum(comp, 0.0) if sign > 0 else np.minimum(comp, 0.0)


def step(state: SimulationState, dt: float):
    """Advance the state by one substep of size dt (<= stable_dt)."""
    n = state.n_particles
    h = state.h

    piola, f_proj, plastic = batch_constitutive(
        state.f, state.class_id, state.young_modulus, state.poisson_ratio,
        state.plastic, state.table)
    state.f = f_proj
    state.plastic = plastic
    kirchhoff = piola @ f_proj.transpose(0, 2, 1)
    affine = (-dt * state.vol0 * 4.0 / (h * h))[:, None, None] * kirchhoff \
        + state.mass[:, None, None] * state.c_apic

    gx = (state.x - state.origin) / h
    base = np.floor(gx - 0.5).astype(np.int64)
    if np.any(base < 0) or np.any(base + 2 > state.dims - 1):
        _check_inside(state)
    fx = gx - base
    w = _bspline_weights(fx)

    # compact active box
    lo = base.min(axis=0)
    sub = base.max(axis=0) + 3 - lo
    n_sub = int(sub[0] * sub[1] * sub[2])
    rel = base - lo

    g_eff = (state.gravity[None, :] * state.gravity_scale[:, None]
             + state.wind[None, :] * state.wind_scale[:, None])
    mom_p = state.mass[:, None] * (state.v + dt * g_eff)

    grid_mass = np.zeros(n_sub)
    grid_mom = np.zeros((n_sub, 3))
    flat_idx = np.empty((27, n), dtype=np.int64)
    weights27 = np.empty((27, n))
    dpos27 = np.empty((27, n, 3))
    k27 = 0
    for i in range(3):
        for j in range(3):
            for k in range(3):
                wij = w[:, i, 0] * w[:, j, 1] * w[:, k, 2]
                idx = ((rel[:, 0] + i) * sub[1] + (rel[:, 1] + j)) * sub[2] \
                    + (rel[:, 2] + k)
                dpos = (np.array([i, j, k], dtype=np.float64) - fx) * h
                q = wij[:, None] * (mom_p + np.einsum("nab,nb->na", affine, dpos))
                grid_mass += np.bincount(idx, weights=wij * state.mass,
                                         minlength=n_sub)
                for axis in range(3):
                    grid_mom[:, axis] += np.bincount(idx, weights=q[:, axis],
                                                     minlength=n_sub)
                flat_idx[k27] = idx
                weights27[k27] = wij
                dpos27[k27] = dpos
                k27 += 1

    # grid update
    grid_v = np.zeros_like(grid_mom)
    active = grid_mass > 0
    grid_v[active] = grid_mom[active] / grid_mass[active, None]
    if state.damping > 0:
        grid_v *= max(0.0, 1.0 - state.damping * dt)

    node_coord = np.stack(np.meshgrid(
        state.origin[0] + h * np.arange(lo[0], lo[0] + sub[0]),
        state.origin[1] + h * np.arange(lo[1], lo[1] + sub[1]),
        state.origin[2] + h * np.arange(lo[2], lo[2] + sub[2]),
        indexing="ij"), axis=-1).reshape(n_sub, 3)

    # ground plane (inward normal +y); the y_min wall is the ground side
    _apply_bc_component(grid_v, node_coord[:, 1] <= state.ground_height + 1e-12,
                        axis=1, sign=+1, mode=state.ground_bc)
    # domain walls within the margin band
    top = state.origin + (state.dims - 1) * h
    band = GRID_MARGIN * h + 1e-12
    walls = state.wall_bc
    for axis, lo_name, hi_name in ((0, "x_min", "x_max"),
                                   (1, None, "y_max"),
                                   (2, "z_min", "z_max")):
        if lo_name is not None:
            _apply_bc_component(grid_v,
                                node_coord[:, axis] <= state.origin[axis] + band,
                                axis=axis, sign=+1, mode=walls[lo_name])
        _apply_bc_component(grid_v,
                            node_coord[:, axis] >= top[axis] - band,
                            axis=axis, sign=-1, mode=walls[hi_name])

    for col in state.colliders:
        if col.kind == "halfspace":
            nvec = np.asarray(col.params[:3], dtype=np.float64)
            nvec = nvec / np.linalg.norm(nvec)
            mask = node_coord @ nvec <= col.params[3]
            if col.bc == "sticky":
                grid_v[mask] = 0.0
            else:
                vn = grid_v[mask] @ nvec
                if col.bc == "slip":
                    grid_v[mask] -= vn[:, None] * nvec
                else:
                    grid_v[mask] -= np.minimum(vn, 0.0)[:, None] * nvec
        elif col.kind == "sphere":
            center = np.asarray(col.params[:3], dtype=np.float64)
            d = node_coord - center
            dist = np.linalg.norm(d, axis=1)
            mask = dist <= col.params[3]
            if col.bc == "sticky":
                grid_v[mask] = 0.0
            else:
                nvec = d[mask] / np.maximum(dist[mask], 1e-12)[:, None]
                vn = np.sum(grid_v[mask] * nvec, axis=1)
                if col.bc == "slip":
                    grid_v[mask] -= vn[:, None] * nvec
                else:
                    grid_v[mask] -= np.minimum(vn, 0.0)[:, None] * nvec
        else:
            raise DomainError(f"unknown collider kind {col.kind!r}")

    # G2P
    v_new = np.zeros((n, 3))
    b_new = np.zeros((n, 3, 3))
    for k27 in range(27):
        vg = grid_v[flat_idx[k27]]
        wij = weights27[k27][:, None]
        v_new += wij * vg
        b_new += np.einsum("na,nb->nab", wij * vg, dpos27[k27])

    state.v = v_new
    state.c_apic = b_new * (4.0 / (h * h))
    state.f = (np.eye(3)[None] + dt * state.c_apic) @ state.f
    state.x = state.x + dt * v_new
    state.t += dt

    if not (np.isfinite(state.v).all() and np.isfinite(state.x).all()
            and np.isfinite(state.f).all()):
        raise NumericalError("non-finite particle state after substep")
    _check_inside(state)


def object_events(state: SimulationState):
    """Per-object aggregates used by event triggers.

    Ground contact means a particle's B-spline support overlaps the
    constrained ground nodes (within 1.5 h); resting bodies equilibrate
    about one cell above the node layer, so tighter bands never fire.
    """
    events = {}
    contact_band = 1.5 * state.h
    for oid in state.object_ids():
        m = state.object_mask(oid)
        y = state.x[m, 1]
        speed = np.sqrt((state.v[m] ** 2).sum(axis=1))
        events[int(oid)] = {
            "min_height": float(y.min()),
            "max_speed": float(speed.max()),
            "ground_contact": bool((y - state.ground_height <= contact_band).any()),
        }
    return events


def simulate(state: SimulationState, schedule, cfg: SimConfig):
    """Advance to every frame time k/fps, applying scheduled edits.

    Returns a Trajectory; deterministic for fixed inputs.
    """
    from .schedule import ScheduleRuntime  # local import to avoid a cycle
    from .trajectory import Trajectory

    cfg.validate()
    runtime = ScheduleRuntime(schedule) if schedule is not None else None

    n = state.n_particles
    frames = np.empty((cfg.frames, n, 3), dtype=np.float32)
    frames[0] = state.x.astype(np.float32)
    edit_log = []

    for frame in range(1, cfg.frames):
        target_t = frame / cfg.fps
        substep = 0
        while state.t < target_t - 1e-12:
            dt = min(stable_dt(state, cfg), target_t - state.t)
            if runtime is not None:
                edits = runtime.apply(state, state.t, dt)
                if edits:
                    edit_log.extend(edits)
                    dt = min(dt, stable_dt(state, cfg))
            t_before = state.t
            try:
                step(state, dt)
            except (ParticleEscape, NumericalError) as exc:
                raise type(exc)(
                    f"frame {frame}, substep {substep}, t={t_before:.6g}: {exc}"
                ) from exc
            substep += 1
        state.t = target_t
        frames[frame] = state.x.astype(np.float32)

    return Trajectory.from_frames(frames, cfg.fps, state.object_id.copy(),
                                  edit_log=edit_log)
