"""Cartesian column undersampling masks.

Two families are provided: equispaced masks, which keep a centered block of
``l`` low-frequency columns plus every ``r``-th column elsewhere, and random
masks, which keep a centered block of ``round(f * W)`` columns plus a random
subset chosen so the expected overall acceleration is ``a``. The same column
pattern applies to every coil and every row.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from .errors import InvalidInputError, InvalidParamsError

__all__ = [
    "SamplingMask",
    "acs_start",
    "equispaced_mask",
    "random_mask",
    "full_mask",
    "center_mask",
    "apply_mask",
    "parse_mask_spec",
    "mask_from_spec",
    "format_mask_spec",
]


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """A column mask together with how it was made.

    ``num_acs`` and ``acs_begin`` describe the contiguous low-frequency block,
    so the ACS-only mask can be recovered without knowing the generator.
    """

    columns: np.ndarray
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    num_acs: int = 0
    acs_begin: int = 0

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=bool).copy()
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        if cols.ndim != 1:
            raise InvalidParamsError("mask columns must be a 1D vector")
        if not cols.any():
            raise InvalidParamsError("mask samples no columns")
        if self.num_acs:
            acs = cols[self.acs_begin : self.acs_begin + self.num_acs]
            if len(acs) != self.num_acs or not acs.all():
                raise InvalidParamsError("ACS block is not fully sampled")

    @property
    def width(self) -> int:
        return int(self.columns.shape[0])

    @property
    def num_sampled(self) -> int:
        return int(self.columns.sum())

    @property
    def acceleration(self) -> float:
        """Measured acceleration: total columns over sampled columns."""
        return self.width / self.num_sampled

    @property
    def seed(self):
        return self.params.get("seed")

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.params == other.params
            and self.num_acs == other.num_acs
            and self.acs_begin == other.acs_begin
            and np.array_equal(self.columns, other.columns)
        )

    def __hash__(self):
        return hash((self.kind, self.columns.tobytes(), self.num_acs, self.acs_begin))

    def __repr__(self):
        return (
            f"SamplingMask(kind={self.kind!r}, params={self.params}, W={self.width}, "
            f"sampled={self.num_sampled}, num_acs={self.num_acs})"
        )


def acs_start(width: int, num_acs: int) -> int:
    """First column of a centered block of ``num_acs`` columns."""
    return (width - num_acs) // 2


def _acs_block(width: int, num_acs: int) -> np.ndarray:
    cols = np.zeros(width, dtype=bool)
    begin = acs_start(width, num_acs)
    cols[begin : begin + num_acs] = True
    return cols


def equispaced_mask(width: int, r: int, l: int, offset: int = 0) -> SamplingMask:
    """Centered block of ``l`` columns plus every ``r``-th column from ``offset``.

    Args:
        width: Number of k-space columns W.
        r: Spacing of the outer lines.
        l: Number of central (ACS) columns.
        offset: Column index modulo ``r`` of the outer lines.
    """
    if width < 1:
        raise InvalidParamsError(f"width must be >= 1, got {width}")
    if r < 1:
        raise InvalidParamsError(f"r must be >= 1, got {r}")
    if not 0 <= l <= width:
        raise InvalidParamsError(f"l must lie in [0, {width}], got {l}")
    if not 0 <= offset < r:
        raise InvalidParamsError(f"offset must lie in [0, {r}), got {offset}")
    cols = _acs_block(width, l)
    cols[offset::r] = True
    return SamplingMask(
        cols,
        kind="equispaced",
        params={"r": int(r), "l": int(l), "offset": int(offset)},
        num_acs=int(l),
        acs_begin=acs_start(width, l),
    )


def random_probability(width: int, a: float, num_acs: int) -> float:
    """Per-column probability making the expected acceleration exactly ``a``."""
    if width == num_acs:
        return 0.0
    return float(np.clip((width / a - num_acs) / (width - num_acs), 0.0, 1.0))


def random_mask(width: int, a: float, f: float, seed: int = 0) -> SamplingMask:
    """Centered block of ``round(f * W)`` columns plus random outer columns.

    Each outer column is kept independently with the probability that makes
    the expected number of sampled columns ``W / a``.
    """
    if width < 1:
        raise InvalidParamsError(f"width must be >= 1, got {width}")
    if not 0 < f < 1:
        raise InvalidParamsError(f"f must lie in (0, 1), got {f}")
    if not a > 1:
        raise InvalidParamsError(f"a must be > 1, got {a}")
    num_acs = int(round(f * width))
    if num_acs < 1:
        raise InvalidParamsError(f"f={f} leaves no ACS columns at width {width}")
    if width / a < num_acs - 1e-9:
        raise InvalidParamsError(
            f"infeasible random mask: W/a = {width / a:.2f} < {num_acs} ACS columns"
        )
    prob = random_probability(width, a, num_acs)
    rng = np.random.default_rng(seed)
    cols = rng.uniform(size=width) < prob
    cols |= _acs_block(width, num_acs)
    return SamplingMask(
        cols,
        kind="random",
        params={"a": float(a), "f": float(f), "seed": int(seed)},
        num_acs=num_acs,
        acs_begin=acs_start(width, num_acs),
    )


def full_mask(width: int) -> SamplingMask:
    return SamplingMask(np.ones(width, dtype=bool), kind="full", params={}, num_acs=width, acs_begin=0)


def center_mask(mask: SamplingMask) -> SamplingMask:
    """Mask selecting only the ACS block of ``mask``."""
    if mask.num_acs < 1:
        raise InvalidInputError(f"{mask!r} carries no ACS block")
    return SamplingMask(
        _acs_block(mask.width, mask.num_acs),
        kind="center",
        params={"source": mask.kind, **mask.params},
        num_acs=mask.num_acs,
        acs_begin=mask.acs_begin,
    )


def apply_mask(kspace, mask: SamplingMask):
    """Zero the unsampled columns of (multi-coil) k-space."""
    from .kspace_core import mask_columns

    return mask_columns(kspace, mask)


_SPEC_RE = re.compile(r"^\s*(?P<kind>[a-z]+)\s*(?::(?P<args>.*))?$")
_SPEC_KEYS = {
    "equispaced": {"r": int, "l": int, "offset": int},
    "random": {"a": float, "f": float, "seed": int},
    "full": {},
}


def parse_mask_spec(spec: str) -> Dict[str, Any]:
    """Parse ``equispaced:r=4,l=30,offset=0`` / ``random:a=4,f=0.08,seed=42`` / ``full``.

    Returns a dict with ``kind`` and the typed parameters.
    """
    m = _SPEC_RE.match(spec)
    if not m or m.group("kind") not in _SPEC_KEYS:
        raise InvalidParamsError(
            f"bad mask spec {spec!r}; expected one of {sorted(_SPEC_KEYS)} with key=value args"
        )
    kind = m.group("kind")
    types = _SPEC_KEYS[kind]
    out: Dict[str, Any] = {"kind": kind}
    args = (m.group("args") or "").strip()
    for item in filter(None, (p.strip() for p in args.split(","))):
        if "=" not in item:
            raise InvalidParamsError(f"bad mask spec argument {item!r} in {spec!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in types:
            raise InvalidParamsError(f"unknown key {key!r} for {kind} mask; allowed: {sorted(types)}")
        try:
            out[key] = types[key](value)
        except ValueError:
            raise InvalidParamsError(f"bad value {value!r} for {key!r} in {spec!r}") from None
    required = {"equispaced": ("r", "l"), "random": ("a", "f"), "full": ()}[kind]
    missing = [k for k in required if k not in out]
    if missing:
        raise InvalidParamsError(f"mask spec {spec!r} is missing {missing}")
    return out


def mask_from_spec(spec, width: int, seed: int | None = None) -> SamplingMask:
    """Build a mask of ``width`` columns from a spec string or parsed dict.

    ``seed`` overrides the seed of a random spec; it is ignored otherwise.
    """
    params = parse_mask_spec(spec) if isinstance(spec, str) else dict(spec)
    kind = params.pop("kind")
    if kind == "equispaced":
        return equispaced_mask(width, params["r"], params["l"], params.get("offset", 0))
    if kind == "random":
        s = params.get("seed", 0) if seed is None else seed
        return random_mask(width, params["a"], params["f"], s)
    return full_mask(width)


def format_mask_spec(mask: SamplingMask) -> str:
    if mask.kind == "full":
        return "full"
    body = ",".join(f"{k}={v}" for k, v in mask.params.items())
    return f"{mask.kind}:{body}"
