"""Flat per-member payload layout for the ensemble accumulator.

Each simulated member contributes one flat float64 vector holding every
tracked statistic (values for first moments, squares for standard errors).
The layout is fixed up front so the compiled kernels and the numpy fallback
write identical structures.

Blocks, in order:

* one block per checkpoint layer (kernel statistics at that depth),
* one block per tracked depth transition l -> l+1 (one-step residual and
  bridge statistics),
* the full-depth ladder of sigma-kernel values (one N x N matrix per layer,
  layers 0..L).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .pairspace import pair_count

# Checkpoint-block fields; *_2 holds elementwise squares.  The first twelve
# are N x N, the rest P x P.
CP_FIELDS_K = ("g", "g2", "s", "s2", "s10", "s10_2", "s11", "s11_2",
               "s20", "s20_2", "e1", "e1_2")
CP_FIELDS_P = ("gg", "gg2", "sm", "sm2")
CP_FIELDS_P_HEAVY = ("a4", "a4_2")

# Transition-block fields, all P x P.
PAIR_FIELDS = ("rv", "rv2")
PAIR_FIELDS_HEAVY = ("br", "br2", "qq", "qq2")


@dataclass(frozen=True)
class PayloadLayout:
    n_points: int
    depth: int
    checkpoints: tuple[int, ...]
    pair_layers: tuple[int, ...]
    heavy: bool

    k2: int = field(init=False)
    p: int = field(init=False)
    p2: int = field(init=False)
    cp_block: int = field(init=False)
    pair_block: int = field(init=False)
    s_all_offset: int = field(init=False)
    total: int = field(init=False)

    def __post_init__(self):
        cps = tuple(sorted(set(int(c) for c in self.checkpoints)))
        pls = tuple(sorted(set(int(p) for p in self.pair_layers)))
        if not cps:
            raise ConfigError("at least one checkpoint layer is required")
        if cps[0] < 0 or cps[-1] > self.depth:
            raise ConfigError(
                f"checkpoint layers {cps[0]}..{cps[-1]} outside 0..{self.depth}"
            )
        for pl in pls:
            if not 0 <= pl < self.depth:
                raise ConfigError(f"transition layer {pl} outside 0..{self.depth - 1}")
            if pl not in cps or (pl + 1) not in cps:
                raise ConfigError(
                    f"transition layer {pl} requires checkpoints at {pl} and {pl + 1}"
                )
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "pair_layers", pls)
        k2 = self.n_points * self.n_points
        p = pair_count(self.n_points)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p2", p * p)
        n_pf = len(CP_FIELDS_P) + (len(CP_FIELDS_P_HEAVY) if self.heavy else 0)
        object.__setattr__(self, "cp_block", len(CP_FIELDS_K) * k2 + n_pf * self.p2)
        n_tr = len(PAIR_FIELDS) + (len(PAIR_FIELDS_HEAVY) if self.heavy else 0)
        object.__setattr__(self, "pair_block", n_tr * self.p2)
        s_all_off = len(cps) * self.cp_block + len(pls) * self.pair_block
        object.__setattr__(self, "s_all_offset", s_all_off)
        object.__setattr__(self, "total", s_all_off + (self.depth + 1) * k2)

    # -- python-side views ---------------------------------------------------

    @property
    def n_checkpoints(self) -> int:
        return len(self.checkpoints)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_layers)

    def cp_slot(self, layer: int) -> int:
        return self.checkpoints.index(layer)

    def _cp_field_offset(self, name: str) -> int:
        if name in CP_FIELDS_K:
            return CP_FIELDS_K.index(name) * self.k2
        base = len(CP_FIELDS_K) * self.k2
        if name in CP_FIELDS_P:
            return base + CP_FIELDS_P.index(name) * self.p2
        if not self.heavy:
            raise ConfigError(f"field {name!r} requires heavy mode")
        base += len(CP_FIELDS_P) * self.p2
        return base + CP_FIELDS_P_HEAVY.index(name) * self.p2

    def cp_view(self, payload: np.ndarray, name: str, slot: int) -> np.ndarray:
        """A (N, N) or (P, P) view of a checkpoint field inside a payload."""
        off = slot * self.cp_block + self._cp_field_offset(name)
        if name in CP_FIELDS_K:
            return payload[..., off:off + self.k2].reshape(
                payload.shape[:-1] + (self.n_points, self.n_points)
            )
        return payload[..., off:off + self.p2].reshape(
            payload.shape[:-1] + (self.p, self.p)
        )

    def pair_view(self, payload: np.ndarray, name: str, slot: int) -> np.ndarray:
        fields = PAIR_FIELDS + (PAIR_FIELDS_HEAVY if self.heavy else ())
        if name not in fields:
            raise ConfigError(f"field {name!r} not tracked (heavy={self.heavy})")
        off = (
            self.n_checkpoints * self.cp_block
            + slot * self.pair_block
            + fields.index(name) * self.p2
        )
        return payload[..., off:off + self.p2].reshape(
            payload.shape[:-1] + (self.p, self.p)
        )

    def s_all_view(self, payload: np.ndarray) -> np.ndarray:
        """(L+1, N, N) view of the per-layer sigma-kernel ladder."""
        off = self.s_all_offset
        return payload[..., off:off + (self.depth + 1) * self.k2].reshape(
            payload.shape[:-1] + (self.depth + 1, self.n_points, self.n_points)
        )

    # -- numba-side constants --------------------------------------------------

    def kernel_constants(self) -> dict:
        """Scalar offsets handed to the compiled/fallback writer kernels."""
        return {
            "cp_block": self.cp_block,
            "pair_block": self.pair_block,
            "pair_base": self.n_checkpoints * self.cp_block,
            "s_all_offset": self.s_all_offset,
            "heavy": self.heavy,
            "total": self.total,
        }


def default_checkpoints(depth: int, target: int = 40) -> tuple[int, ...]:
    """About ``target`` evenly spaced depths, always including 0, 1 and L."""
    stride = max(1, depth // target)
    cps = set(range(0, depth + 1, stride))
    cps.update((0, min(1, depth), depth))
    return tuple(sorted(cps))


def default_pair_layers(depth: int) -> tuple[int, ...]:
    """A small spread of one-step transitions for residual diagnostics."""
    raw = {0, depth // 4, depth // 2, (3 * depth) // 4, depth - 1}
    return tuple(sorted(p for p in raw if 0 <= p < depth))
