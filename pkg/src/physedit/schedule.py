"""Temporal intervention schedules: parsing, ramps, and live application.

Schedule files are line-oriented; one intervention per line:

    at t=1.0 set object 0 young_modulus 1e3 ramp 0.5
    on ground_contact set object 0 material_model liquid once
    at t=0.4 set object 0 interior density 1 ramp 0.3
    at t=2.0 set scene gravity (0,0,0)
    at t=1.0 impulse object 1 (0,2,0)
    clamp young_modulus 1e3 1e9
    max_log_rate 2.0

Scalar material properties ramp in log space (E, rho) or linearly (nu);
per-substep changes of log-scaled properties are additionally capped at
max_log_rate * dt (decades per second), so instant sets become rate-bound
exponential approaches.  Velocity impulses and material-model switches
are instantaneous and fire once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (ClampViolation, DomainError, ParseError, UnknownTarget)
from .materials import (E_MAX, E_MIN, MaterialClass, NU_MAX, NU_MIN,
                        RHO_MAX, RHO_MIN)

SCALAR_LOG_PROPS = ("young_modulus", "density")
SCALAR_LINEAR_PROPS = ("poisson_ratio", "gravity_scale", "wind_scale")
VECTOR_PROPS = ("gravity", "wind", "velocity_impulse")
CLASS_PROPS = ("material_model",)
ALL_PROPS = SCALAR_LOG_PROPS + SCALAR_LINEAR_PROPS + VECTOR_PROPS + CLASS_PROPS

INSTANT_PROPS = ("material_model", "velocity_impulse")

DEFAULT_CLAMPS = {
    "young_modulus": (E_MIN, E_MAX),
    "poisson_ratio": (NU_MIN, NU_MAX),
    "density": (RHO_MIN, RHO_MAX),
    "gravity_scale": (-100.0, 100.0),
    "wind_scale": (-100.0, 100.0),
}
DEFAULT_MAX_LOG_RATE = 2.0  # decades per second

_EVENTS = ("ground_contact", "height_below", "speed_above")


@dataclass(frozen=True)
class Selector:
    """Which particles an intervention touches; object None means scene-wide."""

    object_id: Optional[int] = None
    part: Optional[int] = None
    interior_only: bool = False

    def describe(self):
        if self.object_id is None:
            return "scene"
        s = f"object {self.object_id}"
        if self.part is not None:
            s += f" part {self.part}"
        if self.interior_only:
            s += " interior"
        return s


@dataclass(frozen=True)
class Trigger:
    kind: str  # at_time | on_ground_contact | on_height_below | on_speed_above
    value: Optional[float] = None
    probe_object: Optional[int] = None


@dataclass(frozen=True)
class Intervention:
    target: Selector
    property: str
    value: object  # float, 3-tuple, or MaterialClass
    trigger: Trigger
    ramp_duration: float = 0.0
    one_shot: bool = False
    source_line: int = 0


@dataclass(frozen=True)
class InstructionSchedule:
    interventions: tuple = ()
    clamps: dict = field(default_factory=lambda: dict(DEFAULT_CLAMPS))
    max_log_rate: float = DEFAULT_MAX_LOG_RATE


def ramp_value(v_from, v_to, t_since_trigger, ramp_duration, scale="linear"):
    """Interpolated value on a ramp; duration 0 returns the target.

    linear: v_from + a (v_to - v_from); log: exp((1-a) ln v_from + a ln v_to)
    with a = clamp(t / duration, 0, 1).  Log scale rejects non-positive
    endpoints.
    """
    if ramp_duration < 0:
        raise DomainError("ramp_duration must be >= 0")
    if scale not in ("linear", "log"):
        raise DomainError(f"unknown ramp scale {scale!r}")
    v_from = np.asarray(v_from, dtype=np.float64)
    v_to = np.asarray(v_to, dtype=np.float64)
    if scale == "log" and (np.any(v_from <= 0) or np.any(v_to <= 0)):
        raise DomainError("log ramps need positive endpoints")
    if ramp_duration == 0:
        out = np.broadcast_to(v_to, np.broadcast_shapes(v_from.shape, v_to.shape))
        return float(out) if out.ndim == 0 else out.copy()
    alpha = min(max(t_since_trigger / ramp_duration, 0.0), 1.0)
    if scale == "linear":
        out = v_from + alpha * (v_to - v_from)
    else:
        out = np.exp((1.0 - alpha) * np.log(v_from) + alpha * np.log(v_to))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(r"\([^()]*\)|\S+")


def _tokenize(line: str):
    return [(m.group(0), m.start() + 1) for m in _TOKEN_RE.finditer(line)]


class _LineParser:
    def __init__(self, tokens, line_no, line_len):
        self.tokens = tokens
        self.line_no = line_no
        self.line_len = line_len
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def next(self, what="token"):
        if self.pos >= len(self.tokens):
            raise ParseError(f"expected {what}, found end of line",
                             line=self.line_no, column=self.line_len + 1)
        tok, col = self.tokens[self.pos]
        self.pos += 1
        return tok, col

    def expect_float(self, what):
        tok, col = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise ParseError(f"expected {what} (a number), got {tok!r}",
                             line=self.line_no, column=col) from None

    def expect_int(self, what):
        tok, col = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise ParseError(f"expected {what} (an integer), got {tok!r}",
                             line=self.line_no, column=col) from None

    def expect_vector(self, what):
        tok, col = self.next(what)
        if not (tok.startswith("(") and tok.endswith(")")):
            raise ParseError(f"expected {what} as (x,y,z), got {tok!r}",
                             line=self.line_no, column=col)
        parts = tok[1:-1].split(",")
        if len(parts) != 3:
            raise ParseError(f"{what} needs exactly 3 components",
                             line=self.line_no, column=col)
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ParseError(f"non-numeric component in {what}: {tok!r}",
                             line=self.line_no, column=col) from None

    def done(self):
        if self.pos < len(self.tokens):
            tok, col = self.tokens[self.pos]
            raise ParseError(f"unexpected trailing token {tok!r}",
                             line=self.line_no, column=col)


def _parse_trigger(p: _LineParser):
    tok, col = p.next("trigger")
    if tok == "at":
        t_tok, t_col = p.next("time")
        if t_tok.startswith("t="):
            t_tok = t_tok[2:]
        try:
            t = float(t_tok)
        except ValueError:
            raise ParseError(f"expected time like t=1.0, got {t_tok!r}",
                             line=p.line_no, column=t_col) from None
        if t < 0:
            raise ParseError("trigger time must be >= 0",
                             line=p.line_no, column=t_col)
        return Trigger(kind="at_time", value=t)
    if tok == "on":
        ev, ev_col = p.next("event name")
        if ev not in _EVENTS:
            raise ParseError(f"unknown event {ev!r}; expected one of {_EVENTS}",
                             line=p.line_no, column=ev_col)
        value = None
        if ev in ("height_below", "speed_above"):
            value = p.expect_float(f"{ev} threshold")
        probe = None
        if p.peek() == "object":
            p.next()
            probe = p.expect_int("probe object id")
        return Trigger(kind=f"on_{ev}", value=value, probe_object=probe)
    raise ParseError(f"expected 'at' or 'on', got {tok!r}",
                     line=p.line_no, column=col)


def _parse_target(p: _LineParser):
    tok, col = p.next("target")
    if tok == "scene":
        return Selector()
    if tok != "object":
        raise ParseError(f"expected 'scene' or 'object', got {tok!r}",
                         line=p.line_no, column=col)
    oid = p.expect_int("object id")
    part = None
    interior = False
    while p.peek() in ("part", "interior"):
        tok, _ = p.next()
        if tok == "part":
            part = p.expect_int("part label")
        else:
            interior = True
    return Selector(object_id=oid, part=part, interior_only=interior)


def _parse_material_class(tok, p, col):
    name = tok.upper()
    if name.isdigit():
        value = int(name)
        if 0 <= value < len(MaterialClass):
            return MaterialClass(value)
    elif name in MaterialClass.__members__:
        return MaterialClass[name]
    raise ParseError(
        f"unknown material class {tok!r}; expected one of "
        f"{[m.name.lower() for m in MaterialClass]}",
        line=p.line_no, column=col)


def _parse_entry(p: _LineParser, line_no: int):
    trigger = _parse_trigger(p)
    verb, verb_col = p.next("'set' or 'impulse'")
    if verb == "impulse":
        target = _parse_target(p)
        if target.object_id is None:
            raise ParseError("impulse needs an object target",
                             line=line_no, column=verb_col)
        value = p.expect_vector("impulse vector")
        prop = "velocity_impulse"
        ramp = 0.0
        once = True
        if p.peek() == "once":
            p.next()
        p.done()
        return Intervention(target=target, property=prop, value=value,
                            trigger=trigger, ramp_duration=ramp, one_shot=once,
                            source_line=line_no)
    if verb != "set":
        raise ParseError(f"expected 'set' or 'impulse', got {verb!r}",
                         line=line_no, column=verb_col)
    target = _parse_target(p)
    prop, prop_col = p.next("property name")
    if prop not in ALL_PROPS:
        raise ParseError(f"unknown property {prop!r}; expected one of {ALL_PROPS}",
                         line=line_no, column=prop_col)
    if prop in VECTOR_PROPS:
        value = p.expect_vector(prop)
    elif prop in CLASS_PROPS:
        tok, col = p.next("material class")
        value = _parse_material_class(tok, p, col)
    else:
        value = p.expect_float(prop)
    ramp = 0.0
    once = prop == "velocity_impulse"
    while p.peek() in ("ramp", "once"):
        tok, col = p.next()
        if tok == "ramp":
            ramp = p.expect_float("ramp duration")
            if ramp < 0:
                raise ParseError("ramp duration must be >= 0",
                                 line=line_no, column=col)
            if prop in INSTANT_PROPS and ramp != 0:
                raise ParseError(f"{prop} cannot ramp; it is instantaneous",
                                 line=line_no, column=col)
        else:
            once = True
    if prop in ("gravity", "wind") and target.object_id is not None:
        raise ParseError(f"{prop} is scene-wide; use gravity_scale/wind_scale "
                         "for per-object control", line=line_no, column=prop_col)
    if prop not in ("gravity", "wind") and target.object_id is None:
        raise ParseError(f"{prop} needs an object target",
                         line=line_no, column=prop_col)
    p.done()
    return Intervention(target=target, property=prop, value=value,
                        trigger=trigger, ramp_duration=ramp, one_shot=once,
                        source_line=line_no)


def _scene_parts(scene):
    """Normalize the scene argument to {object_id: set(part_labels)}."""
    if scene is None:
        return None
    if isinstance(scene, dict):
        return {int(k): set(int(p) for p in v) for k, v in scene.items()}
    parts = {}
    for oid in np.unique(scene.object_id):
        m = scene.object_id == oid
        parts[int(oid)] = set(int(p) for p in np.unique(scene.part[m]))
    return parts


def compile_schedule(raw: str, scene=None) -> InstructionSchedule:
    """Parse and validate a schedule; see the module docstring for the grammar.

    ``scene`` may be a SimulationState, a {object_id: {part labels}} dict,
    or None to skip target validation.
    """
    clamps = dict(DEFAULT_CLAMPS)
    max_log_rate = DEFAULT_MAX_LOG_RATE
    entries = []
    for line_no, line in enumerate(raw.splitlines(), start=1):
        body = line.split("#", 1)[0]
        tokens = _tokenize(body)
        if not tokens:
            continue
        p = _LineParser(tokens, line_no, len(line))
        head = p.peek()
        if head == "clamp":
            p.next()
            prop, col = p.next("property name")
            if prop not in DEFAULT_CLAMPS:
                raise ParseError(f"no clamp table for property {prop!r}",
                                 line=line_no, column=col)
            lo = p.expect_float("clamp minimum")
            hi = p.expect_float("clamp maximum")
            p.done()
            d_lo, d_hi = DEFAULT_CLAMPS[prop]
            if not (lo < hi):
                raise ParseError("clamp minimum must be below maximum",
                                 line=line_no, column=col)
            if lo < d_lo or hi > d_hi:
                raise ClampViolation(
                    f"clamp for {prop} must stay inside the validity range "
                    f"[{d_lo:g}, {d_hi:g}]")
            clamps[prop] = (lo, hi)
        elif head == "max_log_rate":
            p.next()
            max_log_rate = p.expect_float("max_log_rate")
            if max_log_rate <= 0:
                raise ParseError("max_log_rate must be positive", line=line_no)
            p.done()
        else:
            entries.append(_parse_entry(p, line_no))

    scene_parts = _scene_parts(scene)
    for pos, iv in enumerate(entries):
        if scene_parts is not None:
            for oid in filter(lambda o: o is not None,
                              (iv.target.object_id, iv.trigger.probe_object)):
                if oid not in scene_parts:
                    raise UnknownTarget(
                        f"line {iv.source_line}: object {oid} not in scene "
                        f"(have {sorted(scene_parts)})")
            if iv.target.part is not None and \
                    iv.target.part not in scene_parts[iv.target.object_id]:
                raise UnknownTarget(
                    f"line {iv.source_line}: object {iv.target.object_id} has "
                    f"no part {iv.target.part}")
        if iv.property in clamps:
            lo, hi = clamps[iv.property]
            if iv.property == "density" and iv.target.interior_only \
                    and float(iv.value) < lo:
                # density elimination: floor at the clamp minimum, never zero
                entries[pos] = replace(iv, value=lo)
            elif not (lo <= float(iv.value) <= hi):
                raise ClampViolation(
                    f"line {iv.source_line}: {iv.property} value "
                    f"{float(iv.value):g} outside clamp [{lo:g}, {hi:g}]")

    timed = sorted((iv for iv in entries if iv.trigger.kind == "at_time"),
                   key=lambda iv: (iv.trigger.value, iv.source_line))
    events = [iv for iv in entries if iv.trigger.kind != "at_time"]
    return InstructionSchedule(interventions=tuple(timed) + tuple(events),
                               clamps=clamps, max_log_rate=max_log_rate)


# ---------------------------------------------------------------------------
# runtime application

class ScheduleRuntime:
    """Mutable bookkeeping around an immutable schedule.

    Tracks firing, per-target baselines for ramps, and the per-substep
    rate-cap reference values so repeated application at one time point
    is idempotent.
    """

    def __init__(self, schedule: InstructionSchedule):
        self.schedule = schedule
        n = len(schedule.interventions)
        self.fired = [False] * n
        self.fire_time = [None] * n
        self.done = [False] * n
        self.baseline = [None] * n
        self.indices = [None] * n
        self.last_t = [None] * n
        self.last_values = [None] * n

    def _resolve_indices(self, state, i, sel: Selector):
        if self.indices[i] is None:
            if sel.object_id is None:
                mask = np.ones(state.n_particles, dtype=bool)
            else:
                mask = state.object_id == sel.object_id
                if sel.part is not None:
                    mask &= state.part == sel.part
                if sel.interior_only:
                    mask &= state.interior
            self.indices[i] = np.nonzero(mask)[0]
        return self.indices[i]

    def _check_fire(self, state, i, iv: Intervention, t, events):
        if self.fired[i]:
            return True
        trig = iv.trigger
        if trig.kind == "at_time":
            if t >= trig.value - 1e-12:
                self.fired[i] = True
                self.fire_time[i] = trig.value
        else:
            probe = trig.probe_object
            if probe is None:
                probe = iv.target.object_id
            ev = events.get(int(probe)) if probe is not None else None
            if ev is None:
                return False
            hit = False
            if trig.kind == "on_ground_contact":
                hit = ev["ground_contact"]
            elif trig.kind == "on_height_below":
                hit = ev["min_height"] < trig.value
            elif trig.kind == "on_speed_above":
                hit = ev["max_speed"] > trig.value
            if hit:
                self.fired[i] = True
                self.fire_time[i] = t
        return self.fired[i]

    def apply(self, state, t, dt):
        """Apply all active interventions at substep start time t.

        Returns a list of JSON-serializable edit records; empty when
        nothing changed.
        """
        from .engine import object_events  # deferred to avoid an import cycle

        schedule = self.schedule
        needs_events = any(iv.trigger.kind != "at_time" and not self.fired[i]
                           for i, iv in enumerate(schedule.interventions))
        events = object_events(state) if needs_events else {}
        records = []
        for i, iv in enumerate(schedule.interventions):
            if not self._check_fire(state, i, iv, t, events):
                continue
            if self.done[i]:
                continue
            rec = self._apply_one(state, i, iv, t, dt)
            if rec is not None:
                records.append(rec)
        return records

    def _record(self, iv, t, dt, **extra):
        rec = {"t": t, "dt": dt, "property": iv.property,
               "target": iv.target.describe(), "line": iv.source_line}
        rec.update(extra)
        return rec

    def _apply_one(self, state, i, iv: Intervention, t, dt):
        t0 = self.fire_time[i]
        prop = iv.property

        if prop == "velocity_impulse":
            idx = self._resolve_indices(state, i, iv.target)
            state.v[idx] += np.asarray(iv.value, dtype=np.float64)
            self.done[i] = True
            return self._record(iv, t, dt, value=list(iv.value), one_shot=True)

        if prop == "material_model":
            idx = self._resolve_indices(state, i, iv.target)
            state.class_id[idx] = int(iv.value)
            state.plastic[idx] = 0.0
            self.done[i] = True
            return self._record(iv, t, dt, value=MaterialClass(int(iv.value)).name,
                                plastic_state_reset=True)

        if prop in ("gravity", "wind"):
            if self.baseline[i] is None:
                self.baseline[i] = getattr(state, prop).copy()
            new = ramp_value(self.baseline[i], np.asarray(iv.value), t - t0,
                             iv.ramp_duration, "linear")
            old = getattr(state, prop)
            if np.array_equal(new, old):
                if t - t0 >= iv.ramp_duration:
                    self.done[i] = True
                return None
            setattr(state, prop, np.asarray(new, dtype=np.float64))
            return self._record(iv, t, dt, value=np.asarray(new).tolist())

        idx = self._resolve_indices(state, i, iv.target)
        if idx.size == 0:
            self.done[i] = True
            return None

        if prop in ("gravity_scale", "wind_scale", "poisson_ratio"):
            arr = {"gravity_scale": state.gravity_scale,
                   "wind_scale": state.wind_scale,
                   "poisson_ratio": state.poisson_ratio}[prop]
            if self.baseline[i] is None:
                self.baseline[i] = arr[idx].copy()
            new = ramp_value(self.baseline[i], float(iv.value), t - t0,
                             iv.ramp_duration, "linear")
            new = np.broadcast_to(np.asarray(new), idx.shape)
            if np.array_equal(new, arr[idx]):
                if t - t0 >= iv.ramp_duration:
                    self.done[i] = True
                return None
            arr[idx] = new
            return self._record(iv, t, dt, value=float(iv.value),
                                applied_min=float(new.min()),
                                applied_max=float(new.max()))

        # log-scaled scalars: young_modulus, density
        arr = state.young_modulus if prop == "young_modulus" else state.density
        if self.baseline[i] is None:
            self.baseline[i] = arr[idx].copy()
        desired = ramp_value(self.baseline[i], float(iv.value), t - t0,
                             iv.ramp_duration, "log")
        desired = np.broadcast_to(np.asarray(desired, dtype=np.float64),
                                  idx.shape)
        if self.last_t[i] is None or self.last_t[i] != t:
            self.last_values[i] = arr[idx].copy()
            self.last_t[i] = t
        rate = self.schedule.max_log_rate * dt
        bound_lo = self.last_values[i] * 10.0 ** (-rate)
        bound_hi = self.last_values[i] * 10.0 ** (rate)
        new = np.clip(desired, bound_lo, bound_hi)
        capped = bool(np.any(new != desired))
        if np.array_equal(new, arr[idx]):
            if t - t0 >= iv.ramp_duration and not capped:
                self.done[i] = True
            return None
        max_dlog10 = float(np.max(np.abs(np.log10(new / self.last_values[i]))))
        arr[idx] = new
        if prop == "density":
            state.mass[idx] = state.density[idx] * state.vol0[idx]
        return self._record(iv, t, dt, value=float(iv.value),
                            applied_min=float(new.min()),
                            applied_max=float(new.max()),
                            max_dlog10=max_dlog10, capped=capped)
