"""Device parameters, four-qubit array geometries and the configuration taxonomy.

Qubits are numbered 1..4. Geometries:

* ``LA``  -- collinear at 0, r0, 2 r0, 3 r0; only nearest neighbours interact.
* ``SA``  -- square 1(0,0), 2(r0,0), 3(r0,r0), 4(0,r0); (1,3) and (2,4) are diagonals.
* ``STA`` -- qubit 2 at the centre, 1, 3, 4 on a circle of radius r0.

Configurations use the labels ``c1``, ``c12``, ``c123``, ``c1234`` (parallel
one-qubit gates, or a single two-qubit gate for ``cij``) and ``c12-34`` (two
parallel two-qubit gates).
"""

from __future__ import annotations

import enum
import itertools
import math
import re
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Sequence

N_QUBITS = 4
_DIST_RTOL = 1e-9


class ModelError(ValueError):
    """Invalid geometry, configuration or parameter set."""


@dataclass(frozen=True)
class PhysicalParams:
    """Constants of the effective flip-flop qubit model.

    Units follow the field names: ``B0`` in T, ``gamma_e`` in Hz/T,
    ``gamma_n`` in Hz/T, ``A`` in Hz, ``d`` in m, ``Vt`` in Hz.
    ``g_scale`` rescales the dipole coupling (see ``hamiltonian.dipole_coupling``).
    """

    B0: float = 0.4
    gamma_e: float = 27.97e9
    gamma_n: float = 17.23e6
    A: float = 117e6
    d: float = 15e-9
    Vt: float = 11e9
    eps_r: float = 11.7
    g_scale: float = 1200.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f"physical parameter {f.name} must be > 0, got {value!r}")

    def with_overrides(self, **kwargs) -> "PhysicalParams":
        return replace(self, **kwargs)


# key in parameter files -> (field, multiplier to SI)
PARAM_FILE_KEYS = {
    "B0_T": ("B0", 1.0),
    "gamma_e_GHz_per_T": ("gamma_e", 1e9),
    "gamma_n_MHz_per_T": ("gamma_n", 1e6),
    "A_MHz": ("A", 1e6),
    "d_nm": ("d", 1e-9),
    "Vt_GHz": ("Vt", 1e9),
    "eps_r": ("eps_r", 1.0),
    "g_scale": ("g_scale", 1.0),
}


def params_to_text(params: PhysicalParams) -> str:
    lines = []
    for key, (name, mult) in PARAM_FILE_KEYS.items():
        lines.append(f"{key} = {getattr(params, name) / mult!r}")
    return "\n".join(lines) + "\n"


def params_from_mapping(mapping: dict, base: PhysicalParams | None = None) -> PhysicalParams:
    """Build parameters from unit-suffixed keys; unknown keys raise ``ModelError``."""
    overrides = {}
    for key, raw in mapping.items():
        if key not in PARAM_FILE_KEYS:
            raise ModelError(f"unknown physical parameter key {key!r}")
        name, mult = PARAM_FILE_KEYS[key]
        try:
            overrides[name] = float(raw) * mult
        except (TypeError, ValueError):
            raise ModelError(f"{key}: not a number: {raw!r}") from None
    return replace(base or PhysicalParams(), **overrides)


class GeometryKind(str, enum.Enum):
    LA = "LA"
    SA = "SA"
    STA = "STA"


class InteractionRule(str, enum.Enum):
    FIRST_NEIGHBOR_ONLY = "FirstNeighborOnly"
    ALL_PAIRS = "AllPairs"


class OpKind(str, enum.Enum):
    ONE_QUBIT = "OneQubit"
    TWO_QUBIT = "TwoQubit"


def parse_kind(kind) -> GeometryKind:
    if isinstance(kind, GeometryKind):
        return kind
    try:
        return GeometryKind(str(kind).upper())
    except ValueError:
        raise ModelError(f"unknown geometry kind {kind!r} (expected LA, SA or STA)") from None


@dataclass(frozen=True)
class ArrayGeometry:
    kind: GeometryKind
    r0: float
    positions: tuple[tuple[float, float], ...]
    interaction_rule: InteractionRule

    def __post_init__(self):
        if len(self.positions) != N_QUBITS:
            raise ModelError(f"expected {N_QUBITS} positions, got {len(self.positions)}")
        if not self.r0 > 0:
            raise ModelError("r0 must be positive")
        dmin = min(self.distance(i, j) for i, j in itertools.combinations(range(1, N_QUBITS + 1), 2))
        if abs(dmin - self.r0) > _DIST_RTOL * self.r0:
            raise ModelError(f"minimum pair distance {dmin!r} differs from r0 {self.r0!r}")

    @property
    def n(self) -> int:
        return len(self.positions)

    def distance(self, i: int, j: int) -> float:
        (xi, yi), (xj, yj) = self.positions[i - 1], self.positions[j - 1]
        return math.hypot(xi - xj, yi - yj)

    def is_r0_pair(self, i: int, j: int) -> bool:
        return abs(self.distance(i, j) - self.r0) <= _DIST_RTOL * self.r0

    def with_rule(self, rule: InteractionRule) -> "ArrayGeometry":
        return replace(self, interaction_rule=InteractionRule(rule))


def build_geometry(kind, r0: float = 360e-9, interaction_rule=None) -> ArrayGeometry:
    """Construct one of the three four-qubit arrays with shortest spacing ``r0`` (m)."""
    kind = parse_kind(kind)
    if not (isinstance(r0, (int, float)) and math.isfinite(r0) and r0 > 0):
        raise ModelError(f"r0 must be a positive length, got {r0!r}")
    if kind is GeometryKind.LA:
        pos = tuple((k * r0, 0.0) for k in range(4))
        default_rule = InteractionRule.FIRST_NEIGHBOR_ONLY
    elif kind is GeometryKind.SA:
        pos = ((0.0, 0.0), (r0, 0.0), (r0, r0), (0.0, r0))
        default_rule = InteractionRule.ALL_PAIRS
    else:
        vertex = [
            (r0 * math.cos(math.radians(a)), r0 * math.sin(math.radians(a)))
            for a in (90.0, 210.0, 330.0)
        ]
        pos = (vertex[0], (0.0, 0.0), vertex[1], vertex[2])
        default_rule = InteractionRule.ALL_PAIRS
    rule = default_rule if interaction_rule is None else InteractionRule(interaction_rule)
    return ArrayGeometry(kind=kind, r0=float(r0), positions=pos, interaction_rule=rule)


def pair_list(geometry: ArrayGeometry) -> list[tuple[int, int, float]]:
    """Interacting pairs ``(i, j, r_ij)`` with ``i < j``, honouring the interaction rule."""
    pairs = []
    for i, j in itertools.combinations(range(1, geometry.n + 1), 2):
        if geometry.interaction_rule is InteractionRule.FIRST_NEIGHBOR_ONLY and j > i + 1:
            continue
        pairs.append((i, j, geometry.distance(i, j)))
    return pairs


def symmetry_group(geometry: ArrayGeometry) -> list[tuple[int, ...]]:
    """Index permutations preserving every pairwise distance.

    ``perm[i - 1]`` is the image of qubit ``i``. Always contains the identity.
    """
    n = geometry.n
    dist = {(i, j): geometry.distance(i, j) for i in range(1, n + 1) for j in range(1, n + 1)}
    tol = _DIST_RTOL * geometry.r0 * 10
    group = []
    for perm in itertools.permutations(range(1, n + 1)):
        if all(
            abs(dist[i, j] - dist[perm[i - 1], perm[j - 1]]) <= tol
            for i, j in itertools.combinations(range(1, n + 1), 2)
        ):
            group.append(perm)
    return group


_LABEL_RE = re.compile(r"^c(\d{1,4})(?:-(\d{2}))?$")


@dataclass(frozen=True)
class Configuration:
    """Which qubits are operated in a cell and which stay idle.

    ``operated`` holds target tuples: singletons for one-qubit gates, pairs for
    two-qubit gates.
    """

    label: str
    op_kind: OpKind
    operated: tuple[tuple[int, ...], ...]
    idle: tuple[int, ...] = field(default=())

    @property
    def parallelism(self) -> int:
        return len(self.operated)

    @property
    def operated_qubits(self) -> tuple[int, ...]:
        return tuple(sorted(q for group in self.operated for q in group))


def _label_for(op_kind: OpKind, operated: Sequence[Sequence[int]]) -> str:
    if op_kind is OpKind.ONE_QUBIT:
        return "c" + "".join(str(q) for (q,) in operated)
    return "c" + "-".join("".join(str(q) for q in pair) for pair in operated)


def make_configuration(op_kind, operated: Iterable[Iterable[int]], n: int = N_QUBITS) -> Configuration:
    op_kind = OpKind(op_kind)
    size = 1 if op_kind is OpKind.ONE_QUBIT else 2
    groups = [tuple(sorted(int(q) for q in g)) for g in operated]
    if not groups:
        raise ModelError("a configuration needs at least one operated target")
    if op_kind is OpKind.TWO_QUBIT and len(groups) > 2:
        raise ModelError("at most two parallel two-qubit gates fit in four qubits")
    for g in groups:
        if len(g) != size:
            raise ModelError(f"{op_kind.value} targets must have {size} qubit(s), got {g}")
    used = [q for g in groups for q in g]
    if len(set(used)) != len(used):
        raise ModelError(f"qubit indices must be distinct, got {used}")
    if any(not 1 <= q <= n for q in used):
        raise ModelError(f"qubit indices must lie in 1..{n}, got {used}")
    groups.sort()
    idle = tuple(q for q in range(1, n + 1) if q not in used)
    return Configuration(_label_for(op_kind, groups), op_kind, tuple(groups), idle)


def parse_label(label: str, op_kind=None, n: int = N_QUBITS) -> Configuration:
    """Parse ``c12``, ``c12-34`` ... into a :class:`Configuration`.

    ``cij`` is ambiguous (two parallel one-qubit gates or one two-qubit gate);
    pass ``op_kind`` to choose, default is one-qubit.
    """
    m = _LABEL_RE.match(label.strip())
    if not m:
        raise ModelError(f"malformed configuration label {label!r}")
    first, second = m.group(1), m.group(2)
    if second is not None:
        if len(first) != 2:
            raise ModelError(f"malformed configuration label {label!r}")
        if op_kind is not None and OpKind(op_kind) is not OpKind.TWO_QUBIT:
            raise ModelError(f"{label!r} describes two-qubit gates")
        groups = [tuple(int(c) for c in first), tuple(int(c) for c in second)]
        return make_configuration(OpKind.TWO_QUBIT, groups, n)
    kind = OpKind.ONE_QUBIT if op_kind is None else OpKind(op_kind)
    digits = [int(c) for c in first]
    if kind is OpKind.TWO_QUBIT:
        if len(digits) != 2:
            raise ModelError(f"{label!r} is not a single two-qubit target")
        return make_configuration(kind, [digits], n)
    return make_configuration(kind, [[q] for q in digits], n)


def _canonical_key(op_kind: OpKind, groups) -> tuple:
    return tuple(sorted(tuple(sorted(g)) for g in groups))


def _all_configurations(geometry: ArrayGeometry, op_kind: OpKind, parallelism: int):
    qubits = range(1, geometry.n + 1)
    if op_kind is OpKind.ONE_QUBIT:
        for subset in itertools.combinations(qubits, parallelism):
            yield tuple((q,) for q in subset)
        return
    pairs = [p for p in itertools.combinations(qubits, 2) if geometry.is_r0_pair(*p)]
    for chosen in itertools.combinations(pairs, parallelism):
        flat = [q for p in chosen for q in p]
        if len(set(flat)) == len(flat):
            yield tuple(chosen)


def _apply(perm, groups):
    return tuple(tuple(sorted(perm[q - 1] for q in g)) for g in groups)


def orbit(geometry: ArrayGeometry, config: Configuration) -> set[tuple]:
    """Canonical keys of every configuration equivalent to ``config``."""
    return {_canonical_key(config.op_kind, _apply(p, config.operated)) for p in symmetry_group(geometry)}


_ALLOWED_PARALLELISM = {OpKind.ONE_QUBIT: (1, 2, 3, 4), OpKind.TWO_QUBIT: (1, 2)}


def enumerate_configurations(geometry: ArrayGeometry, op_kind, parallelism: int) -> list[Configuration]:
    """One representative per symmetry orbit, smallest label first.

    Two-qubit targets are restricted to pairs at distance r0. An empty list
    means no valid configuration exists (e.g. two parallel two-qubit gates on
    the star array).
    """
    op_kind = OpKind(op_kind)
    if parallelism not in _ALLOWED_PARALLELISM[op_kind]:
        raise ModelError(
            f"parallelism {parallelism!r} invalid for {op_kind.value}; "
            f"allowed {_ALLOWED_PARALLELISM[op_kind]}"
        )
    group = symmetry_group(geometry)
    seen: set[tuple] = set()
    reps = []
    for groups in sorted(_all_configurations(geometry, op_kind, parallelism)):
        key = _canonical_key(op_kind, groups)
        if key in seen:
            continue
        images = {_canonical_key(op_kind, _apply(p, groups)) for p in group}
        seen |= images
        reps.append(make_configuration(op_kind, min(images), geometry.n))
    return reps


def geometry_to_text(geometry: ArrayGeometry, configurations: Sequence[Configuration] = ()) -> str:
    lines = [
        f"kind = {geometry.kind.value}",
        f"r0_nm = {geometry.r0 * 1e9!r}",
        f"interaction_rule = {geometry.interaction_rule.value}",
    ]
    for q, (x, y) in enumerate(geometry.positions, start=1):
        lines.append(f"position_{q}_nm = {x * 1e9!r}, {y * 1e9!r}")
    if configurations:
        lines.append("labels = " + " ".join(c.label for c in configurations))
    return "\n".join(lines) + "\n"


def geometry_from_text(text: str) -> tuple[ArrayGeometry, list[str]]:
    """Inverse of :func:`geometry_to_text`; returns the geometry and any labels."""
    from .kvfile import parse_kv

    kv = parse_kv(text)
    try:
        kind = parse_kind(kv["kind"])
        r0 = float(kv["r0_nm"]) * 1e-9
        rule = InteractionRule(kv["interaction_rule"])
        positions = []
        for q in range(1, N_QUBITS + 1):
            x, y = (float(v) * 1e-9 for v in kv[f"position_{q}_nm"].split(","))
            positions.append((x, y))
    except KeyError as exc:
        raise ModelError(f"geometry text missing key {exc.args[0]!r}") from None
    geometry = ArrayGeometry(kind, r0, tuple(positions), rule)
    labels = kv.get("labels", "").split()
    return geometry, labels
