"""Piecewise-linear parameter paths theta: [0, 1] -> R^m, their norms, the
grid epsilon-net of K-Lipschitz paths and the embedding of weight tensors.

A :class:`ParamFunction` is fully described by its knots and per-knot values,
so every sup over t is computed exactly at finitely many points (knots plus
coordinate sign changes) instead of on a sampling grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityExceededError, FormatError, InvalidArgumentError
from .types import ParamClassSpec

SLACK = 1e-12
MAX_GRID_POINTS = 24
MAX_PRODUCT_DIM = 2


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParamFunction:
    knots: np.ndarray  # (k,), strictly increasing, 0 ... 1
    values: np.ndarray  # (k, m)

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if knots.ndim != 1 or knots.size < 2:
            raise InvalidArgumentError("a ParamFunction needs at least 2 knots")
        if values.ndim != 2 or values.shape[0] != knots.size or values.shape[1] < 1:
            raise InvalidArgumentError(
                f"values shape {values.shape} does not match {knots.size} knots"
            )
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise InvalidArgumentError("knots must start at 0 and end at 1")
        if np.any(np.diff(knots) <= 0):
            raise InvalidArgumentError("knots must be strictly increasing")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise InvalidArgumentError("knots and values must be finite")
        object.__setattr__(self, "knots", _readonly(knots))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def m(self) -> int:
        return int(self.values.shape[1])

    def coordinate(self, i: int) -> "ParamFunction":
        return ParamFunction(self.knots, self.values[:, i : i + 1])


def constant_function(value: Sequence[float]) -> ParamFunction:
    v = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return ParamFunction(np.array([0.0, 1.0]), np.vstack([v, v]))


def values_at(f: ParamFunction, ts: np.ndarray) -> np.ndarray:
    """Interpolated values at every t in ``ts``, shape (len(ts), m).

    Exact (bitwise) at knots.
    """
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0.0) or np.any(ts > 1.0):
        raise InvalidArgumentError("evaluation times must lie in [0, 1]")
    k = f.knots
    idx = np.clip(np.searchsorted(k, ts, side="right") - 1, 0, k.size - 2)
    w = (ts - k[idx]) / (k[idx + 1] - k[idx])
    lo, hi = f.values[idx], f.values[idx + 1]
    out = lo + w[:, None] * (hi - lo)
    return np.where((w == 1.0)[:, None], hi, out)


def evaluate(f: ParamFunction, t: float) -> np.ndarray:
    """theta(t) by linear interpolation between the bracketing knots."""
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    return values_at(f, np.array([t]))[0]


def _merge(
    f: ParamFunction, g: ParamFunction
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if f.m != g.m:
        raise InvalidArgumentError(f"dimension mismatch: {f.m} vs {g.m}")
    ts = np.union1d(f.knots, g.knots)
    return ts, values_at(f, ts), values_at(g, ts)


def add(f: ParamFunction, g: ParamFunction) -> ParamFunction:
    ts, a, b = _merge(f, g)
    return ParamFunction(ts, a + b)


def subtract(f: ParamFunction, g: ParamFunction) -> ParamFunction:
    ts, a, b = _merge(f, g)
    return ParamFunction(ts, a - b)


def scale(f: ParamFunction, c: float) -> ParamFunction:
    return ParamFunction(f.knots, c * f.values)


def norm_1_inf(f: ParamFunction) -> float:
    """sup_t sum_i |theta_i(t)|.

    Between consecutive sign changes of the coordinates the l1-sum is linear,
    so the sup is attained at a knot or at a coordinate root.
    """
    v = f.values
    best = float(np.abs(v).sum(axis=1).max())
    v0, v1 = v[:-1], v[1:]
    seg, coord = np.nonzero(v0 * v1 < 0.0)
    if seg.size:
        w = v0[seg, coord] / (v0[seg, coord] - v1[seg, coord])
        pts = v0[seg] + w[:, None] * (v1[seg] - v0[seg])
        best = max(best, float(np.abs(pts).sum(axis=1).max()))
    return best


def sup_distance(f: ParamFunction, g: ParamFunction) -> float:
    """(1, inf)-distance between two paths, exact on the union of their knots."""
    return norm_1_inf(subtract(f, g))


def lipschitz_constant(f: ParamFunction) -> float:
    slopes = np.abs(np.diff(f.values, axis=0)) / np.diff(f.knots)[:, None]
    return float(slopes.max())


@dataclass(frozen=True)
class MembershipReport:
    norm: float
    lipschitz: float
    norm_ok: bool
    lipschitz_ok: bool

    @property
    def member(self) -> bool:
        return self.norm_ok and self.lipschitz_ok


def within(measured: float, bound: float) -> bool:
    return measured <= bound + SLACK * max(1.0, abs(bound))


def check_membership(f: ParamFunction, spec: ParamClassSpec) -> MembershipReport:
    if f.m != spec.m:
        raise InvalidArgumentError(f"function has m={f.m}, class has m={spec.m}")
    norm = norm_1_inf(f)
    lip = lipschitz_constant(f)
    return MembershipReport(
        norm=norm,
        lipschitz=lip,
        norm_ok=within(norm, spec.r_theta),
        lipschitz_ok=within(lip, spec.k_theta),
    )


def cover_log_bound(m: int, R: float, K: float, eps: float) -> float:
    """Upper bound on the log covering number of the (m, R, K) class."""
    if not R > 0 or not eps > 0:
        raise InvalidArgumentError(f"R and eps must be positive (R={R}, eps={eps})")
    if K < 0 or m < 1:
        raise InvalidArgumentError(f"need K >= 0 and m >= 1 (K={K}, m={m})")
    return m * math.log(16.0 * m * R / eps) + m * m * K * math.log(4.0) / eps


@dataclass(frozen=True)
class CoverMember:
    start_value: float
    slope_signs: Tuple[int, ...]  # one +1/-1 per G_x point, empty when K = 0


@dataclass(frozen=True)
class Cover:
    """Grid cover of the 1-D class {|f| <= R, f K-Lipschitz}.

    Members are enumerated lazily: member ``i`` has start ``grid_y[i // 2**n]``
    and slope sign ``+1`` on grid interval ``k`` when bit ``k`` of ``i % 2**n``
    is set, ``-1`` otherwise (n = len(grid_x), n = 0 when K = 0).
    """

    epsilon: float
    radius: float
    slope: float
    grid_x: np.ndarray = field(repr=False)
    grid_y: np.ndarray = field(repr=False)

    @property
    def sign_count(self) -> int:
        return int(self.grid_x.size) if self.slope > 0 else 0

    def __len__(self) -> int:
        return int(self.grid_y.size) * (2**self.sign_count)

    def member(self, index: int) -> CoverMember:
        if not 0 <= index < len(self):
            raise IndexError(f"cover member {index} out of range")
        n = self.sign_count
        start, bits = divmod(index, 2**n)
        signs = tuple(1 if (bits >> k) & 1 else -1 for k in range(n))
        return CoverMember(float(self.grid_y[start]), signs)

    def index_of(self, member: CoverMember) -> int:
        start = int(np.argmin(np.abs(self.grid_y - member.start_value)))
        bits = sum(1 << k for k, s in enumerate(member.slope_signs) if s > 0)
        return start * (2**self.sign_count) + bits

    def members(self) -> Iterator[CoverMember]:
        for i in range(len(self)):
            yield self.member(i)

    def realize(self, member: CoverMember) -> ParamFunction:
        return member_function(self, member)


def _grid_counts(R: float, K: float, eps: float) -> Tuple[int, int]:
    ny = int(math.floor(4.0 * R / eps + 1e-9))
    nx = int(math.ceil(2.0 * K / eps - 1e-9)) + 1 if K > 0 else 0
    return nx, ny


def build_cover(R: float, K: float, eps: float) -> Cover:
    """The grid cover: starts on G_y, slopes +-K on every G_x interval."""
    if not R > 0 or not eps > 0:
        raise InvalidArgumentError(f"R and eps must be positive (R={R}, eps={eps})")
    if K < 0:
        raise InvalidArgumentError(f"K must be >= 0: {K}")
    nx, ny = _grid_counts(R, K, eps)
    if ny < 1:
        raise InvalidArgumentError(f"eps={eps} too large for R={R}: empty G_y")
    if nx > MAX_GRID_POINTS:
        raise CapacityExceededError(
            f"|G_x| = {nx} exceeds the enumeration guard of {MAX_GRID_POINTS}"
        )
    grid_x = np.arange(nx) * (eps / (2.0 * K)) if K > 0 else np.zeros(0)
    grid_y = -R + np.arange(1, ny + 1) * (eps / 2.0)
    return Cover(
        epsilon=float(eps),
        radius=float(R),
        slope=float(K),
        grid_x=_readonly(grid_x),
        grid_y=_readonly(grid_y),
    )


def _kinks(cover: Cover) -> np.ndarray:
    inner = cover.grid_x[cover.grid_x < 1.0]
    return np.append(inner, 1.0)


def member_function(cover: Cover, member: CoverMember) -> ParamFunction:
    if cover.slope == 0:
        return constant_function([member.start_value])
    knots = _kinks(cover)
    signs = np.asarray(member.slope_signs[: knots.size - 1])
    steps = np.diff(knots) * cover.slope * signs
    values = member.start_value + np.concatenate([[0.0], np.cumsum(steps)])
    return ParamFunction(knots, values)


def nearest_member(cover: Cover, f: ParamFunction) -> Tuple[int, float]:
    """Index of a member minimizing the sup distance to ``f``, and that distance.

    Searches all members by dynamic programming over the value lattice
    -R + j * eps/2 shared by every member at every G_x point, so the cost is
    polynomial in the grid sizes instead of exponential.
    """
    if len(cover) == 0:
        raise InvalidArgumentError("cover is empty")
    if f.m != 1:
        raise InvalidArgumentError(f"nearest_member needs a 1-D function, got m={f.m}")
    fk, fv = f.knots, f.values[:, 0]
    if cover.slope == 0:
        gaps = np.abs(cover.grid_y[:, None] - fv[None, :]).max(axis=1)
        best = int(np.argmin(gaps))
        return best, sup_distance(f, constant_function([cover.grid_y[best]]))

    kinks = _kinks(cover)
    step = cover.epsilon / 2.0
    n_int = kinks.size - 1
    ny = cover.grid_y.size
    offset = n_int  # lattice index j in [1 - n_int, ny + n_int]
    size = ny + 2 * n_int + 1
    lattice = -cover.radius + (np.arange(size) - offset) * step

    cost = np.full(size, np.inf)
    cost[offset + 1 : offset + 1 + ny] = 0.0
    back = np.zeros((n_int, size), dtype=np.int64)
    sgn = np.zeros((n_int, size), dtype=np.int8)
    for k in range(n_int):
        a, b = kinks[k], kinks[k + 1]
        inner = fk[(fk > a) & (fk < b)]
        ts = np.concatenate([[a], inner, [b]])
        ft = values_at(f, ts)[:, 0]
        new = np.full(size, np.inf)
        for s in (1, -1):
            g = lattice[:, None] + s * cover.slope * (ts - a)[None, :]
            piece = np.abs(g - ft[None, :]).max(axis=1)
            cand = np.maximum(cost, piece)
            src = np.arange(size)
            dst = src + s
            ok = (dst >= 0) & (dst < size) & np.isfinite(cand)
            src, dst, cand = src[ok], dst[ok], cand[ok]
            better = cand < new[dst]
            new[dst[better]] = cand[better]
            back[k, dst[better]] = src[better]
            sgn[k, dst[better]] = s
        cost = new

    j = int(np.argmin(cost))
    signs: List[int] = [0] * n_int
    for k in range(n_int - 1, -1, -1):
        signs[k] = int(sgn[k, j])
        j = int(back[k, j])
    start = float(cover.grid_y[j - offset - 1])
    # the G_x points at or beyond t = 1 do not change the function
    signs += [1] * (cover.sign_count - n_int)
    member = CoverMember(start, tuple(signs))
    return cover.index_of(member), sup_distance(f, member_function(cover, member))


@dataclass(frozen=True)
class ProductCover:
    """Cartesian product of per-coordinate covers at scale eps / m."""

    epsilon: float
    coordinates: Tuple[Cover, ...]

    def __len__(self) -> int:
        return int(np.prod([len(c) for c in self.coordinates], dtype=object))

    @property
    def m(self) -> int:
        return len(self.coordinates)


def build_product_cover(m: int, R: float, K: float, eps: float) -> ProductCover:
    if m < 1:
        raise InvalidArgumentError(f"m must be >= 1: {m}")
    if m > MAX_PRODUCT_DIM:
        raise CapacityExceededError(
            f"product covers are enumerated for m <= {MAX_PRODUCT_DIM}, got m={m}"
        )
    coord = build_cover(R, K, eps / m)
    return ProductCover(epsilon=float(eps), coordinates=(coord,) * m)


def nearest_product_member(
    cover: ProductCover, f: ParamFunction
) -> Tuple[Tuple[int, ...], float]:
    if f.m != cover.m:
        raise InvalidArgumentError(f"function has m={f.m}, cover has m={cover.m}")
    picks = []
    paths = []
    for i, c in enumerate(cover.coordinates):
        idx, _ = nearest_member(c, f.coordinate(i))
        picks.append(idx)
        paths.append(member_function(c, c.member(idx)))
    ts = np.unique(np.concatenate([p.knots for p in paths]))
    joint = ParamFunction(ts, np.hstack([values_at(p, ts) for p in paths]))
    return tuple(picks), sup_distance(f, joint)


def embed_weights(w) -> ParamFunction:
    """Piecewise-affine path through the flattened layers (row-major).

    Knot k/L carries W_k and knot 0 repeats W_1, so the path is as large as
    the largest layer and as steep as L times the largest layer difference.
    """
    layers = np.asarray(getattr(w, "layers", w), dtype=np.float64)
    if layers.ndim != 3 or layers.shape[1] != layers.shape[2] or layers.shape[0] < 1:
        raise InvalidArgumentError(f"expected an (L, d, d) tensor, got {layers.shape}")
    depth, d = layers.shape[0], layers.shape[1]
    flat = layers.reshape(depth, d * d)
    knots = np.arange(depth + 1, dtype=np.float64) / depth
    return ParamFunction(knots, np.vstack([flat[:1], flat]))


def random_param_function(
    m: int,
    R: float,
    K: float,
    rng: np.random.Generator,
    knot_count: int = 17,
) -> ParamFunction:
    """A random admissible path: slopes uniform in [-K, K] on a uniform knot
    grid, then shrunk so that the (1, inf)-norm is at most R * u, u ~ U(0, 1]."""
    knots = np.linspace(0.0, 1.0, knot_count)
    slopes = rng.uniform(-K, K, size=(knot_count - 1, m)) if K > 0 else None
    start = rng.uniform(-1.0, 1.0, size=m)
    if slopes is None:
        values = np.tile(start, (knot_count, 1))
    else:
        steps = slopes * np.diff(knots)[:, None]
        values = start + np.vstack([np.zeros(m), np.cumsum(steps, axis=0)])
    f = ParamFunction(knots, values)
    norm = norm_1_inf(f)
    target = R * (1.0 - rng.uniform(0.0, 1.0))
    if norm > target:
        f = scale(f, target / norm)
    return f


def param_function_to_text(f: ParamFunction) -> str:
    lines = [f"# paramfunction m={f.m} knots={f.knots.size}"]
    for t, row in zip(f.knots, f.values):
        lines.append(" ".join(repr(float(x)) for x in (t, *row)))
    return "\n".join(lines) + "\n"


def _header(line: str, kind: str) -> dict:
    parts = line.split()
    if len(parts) < 2 or parts[0] != "#" or parts[1] != kind:
        raise FormatError(
            f"expected a '# {kind}' header", expected=f"# {kind}", found=line
        )
    out = {}
    for p in parts[2:]:
        key, _, val = p.partition("=")
        out[key] = val
    return out


def param_function_from_text(text: str) -> ParamFunction:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty document", expected="# paramfunction", found="")
    head = _header(lines[0], "paramfunction")
    m, count = int(head["m"]), int(head["knots"])
    rows = [[float(x) for x in ln.split()] for ln in lines[1:]]
    if len(rows) != count or any(len(r) != m + 1 for r in rows):
        raise FormatError(
            "row count or width does not match the header",
            expected=(count, m + 1),
            found=(len(rows), sorted({len(r) for r in rows})),
        )
    arr = np.array(rows)
    return ParamFunction(arr[:, 0], arr[:, 1:])


def cover_to_text(cover: Cover, limit: Optional[int] = None) -> str:
    n = len(cover) if limit is None else min(limit, len(cover))
    lines = [
        f"# cover epsilon={cover.epsilon!r} R={cover.radius!r} K={cover.slope!r} "
        f"grid={cover.sign_count} members={len(cover)} listed={n}"
    ]
    for i in range(n):
        mem = cover.member(i)
        signs = (str(s) for s in mem.slope_signs)
        lines.append(" ".join([repr(mem.start_value), *signs]))
    return "\n".join(lines) + "\n"


def cover_from_text(text: str) -> Tuple[Cover, List[CoverMember]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty document", expected="# cover", found="")
    head = _header(lines[0], "cover")
    cover = build_cover(float(head["R"]), float(head["K"]), float(head["epsilon"]))
    if int(head["members"]) != len(cover):
        raise FormatError(
            "member count does not match the grids",
            expected=len(cover),
            found=int(head["members"]),
        )
    listed = []
    for ln in lines[1:]:
        parts = ln.split()
        listed.append(CoverMember(float(parts[0]), tuple(int(s) for s in parts[1:])))
    return cover, listed
