"""Discrete market: price grid, path space, options and semi-static strategies.

Paths are ordered lexicographically by per-period level index; every per-path
array in the package (measures, claims, wealth, CSV columns) uses that order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class MarketError(ValueError):
    """A market object violates one of its invariants."""

    def __init__(self, message: str, invariant: str = "market"):
        super().__init__(message)
        self.invariant = invariant


@dataclass(frozen=True)
class MarketGrid:
    T: int
    s0: float
    levels: tuple[tuple[float, ...], ...]
    cap: float | None = None

    def __post_init__(self):
        levels = tuple(tuple(float(v) for v in lv) for lv in self.levels)
        object.__setattr__(self, "levels", levels)
        if int(self.T) != self.T or self.T < 1:
            raise MarketError(f"T must be an integer >= 1, got {self.T}", "T")
        if not self.s0 > 0:
            raise MarketError(f"spot s0 must be positive, got {self.s0}", "s0")
        if len(levels) != self.T:
            raise MarketError(f"expected {self.T} level lists, got {len(levels)}", "levels")
        for t, lv in enumerate(levels, start=1):
            if not lv:
                raise MarketError(f"period {t} has no price levels", "levels")
            if min(lv) <= 0:
                raise MarketError(f"period {t} has a non-positive level", "levels")
            if any(b <= a for a, b in zip(lv, lv[1:])):
                raise MarketError(f"period {t} levels are not strictly increasing", "levels")
        if self.cap is not None and max(max(lv) for lv in levels) > self.cap:
            raise MarketError(f"a level exceeds the cap {self.cap}", "cap")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)


@dataclass(frozen=True)
class Node:
    """Prefix (s_1..s_j) of a path; depth 0 is the root (time 0, price s0)."""

    depth: int
    index: tuple[int, ...]
    price: float
    first: int  # paths through this node are paths[first:stop]
    stop: int
    children: tuple[int, ...] = ()  # node ids at depth+1, or path ids when depth == T-1


@dataclass(frozen=True)
class PathSpace:
    grid: MarketGrid
    index: np.ndarray  # (n_paths, T) level indices
    prices: np.ndarray  # (n_paths, T) prices s_1..s_T
    nodes: tuple[Node, ...]

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def T(self) -> int:
        return self.grid.T

    def path(self, i: int) -> tuple[float, ...]:
        return tuple(self.prices[i])

    def nodes_at(self, depth: int) -> list[int]:
        return [k for k, nd in enumerate(self.nodes) if nd.depth == depth]


def build_path_space(grid: MarketGrid) -> PathSpace:
    """Enumerate all price paths of the grid together with their prefix nodes."""
    for t, lv in enumerate(grid.levels, start=1):
        if not lv:
            raise MarketError(f"period {t} has no price levels", "levels")
    shape = grid.shape
    index = np.array(list(itertools.product(*(range(n) for n in shape))), dtype=int)
    index = index.reshape(-1, grid.T)
    prices = np.empty(index.shape, dtype=float)
    for t in range(grid.T):
        prices[:, t] = np.asarray(grid.levels[t])[index[:, t]]

    # paths sharing a prefix are contiguous in lexicographic order
    nodes: list[Node] = []
    ids: dict[tuple[int, ...], int] = {}
    for depth in range(grid.T):
        block = int(np.prod(shape[depth:]))
        for start in range(0, len(index), block):
            prefix = tuple(int(v) for v in index[start, :depth])
            price = grid.s0 if depth == 0 else grid.levels[depth - 1][prefix[-1]]
            ids[prefix] = len(nodes)
            nodes.append(Node(depth, prefix, float(price), start, start + block))
    out = []
    for nd in nodes:
        if nd.depth == grid.T - 1:
            children = tuple(range(nd.first, nd.stop))
        else:
            children = tuple(ids[nd.index + (k,)] for k in range(shape[nd.depth]))
        out.append(Node(nd.depth, nd.index, nd.price, nd.first, nd.stop, children))
    return PathSpace(grid, index, prices, tuple(out))


@dataclass(frozen=True)
class OptionContract:
    """A static instrument. Its net payoff is the raw payoff minus the quoted price,
    so the stored contract always trades at zero."""

    kind: str  # "call" | "put" | "table"
    maturity: int = 1
    strike: float = 0.0
    price: float = 0.0
    values: tuple[float, ...] | None = None  # table kind: raw payoff per path

    def __post_init__(self):
        if self.kind not in ("call", "put", "table"):
            raise MarketError(f"unknown option kind {self.kind!r}", "option")
        if self.kind == "table":
            if self.values is None:
                raise MarketError("table option needs per-path values", "option")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        else:
            if self.strike < 0:
                raise MarketError(f"negative strike {self.strike}", "option")
            if self.maturity < 1:
                raise MarketError(f"maturity must be >= 1, got {self.maturity}", "option")

    def raw_payoff(self, path: Sequence[float], index: int | None = None) -> float:
        if self.kind == "table":
            if index is None or not 0 <= index < len(self.values):
                raise MarketError(f"table option has no entry for path {index}", "option")
            return self.values[index]
        s = path[self.maturity - 1]
        if self.kind == "call":
            return max(s - self.strike, 0.0)
        return max(self.strike - s, 0.0)


def evaluate_net_option(contract: OptionContract, path: Sequence[float], index: int | None = None) -> float:
    if contract.kind != "table" and contract.maturity > len(path):
        raise MarketError(f"maturity {contract.maturity} beyond horizon {len(path)}", "option")
    return contract.raw_payoff(path, index) - contract.price


@dataclass(frozen=True)
class Market:
    """Grid, path space, quoted options and the time-zero trading flag."""

    grid: MarketGrid
    options: tuple[OptionContract, ...] = ()
    time_zero_trading: bool = True
    paths: PathSpace = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(self, "paths", build_path_space(self.grid))
        for opt in self.options:
            if opt.kind == "table":
                if len(opt.values) != self.paths.n_paths:
                    raise MarketError(
                        f"table option has {len(opt.values)} values for {self.paths.n_paths} paths", "option"
                    )
            elif opt.maturity > self.grid.T:
                raise MarketError(f"option maturity {opt.maturity} beyond T={self.grid.T}", "option")

    @property
    def n_paths(self) -> int:
        return self.paths.n_paths

    def trading_nodes(self) -> list[int]:
        """Node ids carrying a stock position: depth 1..T-1, plus the root when the flag is on."""
        lo = 0 if self.time_zero_trading else 1
        return [k for k, nd in enumerate(self.paths.nodes) if nd.depth >= lo]

    def stock_gains(self) -> np.ndarray:
        """(n_paths, n_trading_nodes): gain per unit held at each node, s_{j+1} - s_j on paths through it."""
        ps = self.paths
        nodes = self.trading_nodes()
        G = np.zeros((ps.n_paths, len(nodes)))
        for col, k in enumerate(nodes):
            nd = ps.nodes[k]
            G[nd.first : nd.stop, col] = ps.prices[nd.first : nd.stop, nd.depth] - nd.price
        return G

    def option_matrix(self) -> np.ndarray:
        """(n_paths, N) net option payoffs."""
        ps = self.paths
        out = np.zeros((ps.n_paths, len(self.options)))
        for i, opt in enumerate(self.options):
            for w in range(ps.n_paths):
                out[w, i] = evaluate_net_option(opt, ps.prices[w], w)
        return out


@dataclass(frozen=True)
class TradingStrategy:
    """Initial wealth x, static holdings h and stock holdings delta per trading node."""

    x: float
    h: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float).reshape(-1))
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).reshape(-1))

    @property
    def theta(self) -> np.ndarray:
        """Stacked coefficient vector (delta, h) matching the columns of a gains matrix."""
        return np.concatenate([self.delta, self.h])

    @classmethod
    def from_theta(cls, x: float, theta, n_nodes: int) -> "TradingStrategy":
        theta = np.asarray(theta, dtype=float)
        return cls(float(x), theta[n_nodes:], theta[:n_nodes])

    def to_dict(self) -> dict:
        return {"x": float(self.x), "h": self.h.tolist(), "delta": self.delta.tolist()}


def terminal_wealth(strategy: TradingStrategy, market: Market, path: int | None = None, instruments=None):
    """x + h.g + (Delta.S)_T, for one path index or (path=None) as a vector over all paths.

    ``instruments`` overrides the static payoff matrix (n_paths, N); by default the
    market's net option payoffs are used.
    """
    G = market.stock_gains()
    g = market.option_matrix() if instruments is None else np.asarray(instruments, dtype=float)
    if strategy.delta.shape[0] != G.shape[1]:
        raise MarketError(
            f"strategy has {strategy.delta.shape[0]} stock positions, market has {G.shape[1]} trading nodes",
            "strategy",
        )
    if strategy.h.shape[0] != g.shape[1]:
        raise MarketError(f"strategy has {strategy.h.shape[0]} holdings for {g.shape[1]} instruments", "strategy")
    w = strategy.x + G @ strategy.delta + g @ strategy.h
    return w if path is None else float(w[path])
