"""Bronchial centerline trees rooted at the pulmonary hilum."""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from lobe_registration.errors import ArgumentError, InvariantError
from lobe_registration.geometry.surface import as_points


class NodeKind(StrEnum):
    """Role of a centerline node."""

    ROOT = "root"
    JUNCTION = "junction"
    INTERNAL = "internal"
    TERMINAL = "terminal"


@dataclass(frozen=True, eq=False)
class CenterlineTree:
    """Rooted tree of 3D nodes joined by straight segments.

    Attributes:
        positions: ``(N, 3)`` node positions.
        kinds: Node kind per node.
        parents: Parent index per node, ``-1`` for the root.

    """

    positions: np.ndarray
    kinds: tuple[NodeKind, ...]
    parents: np.ndarray

    def __post_init__(self) -> None:
        positions = as_points(self.positions, "centerline positions")
        object.__setattr__(self, "positions", positions)
        try:
            kinds = tuple(NodeKind(k) for k in self.kinds)
        except ValueError as exc:
            raise ArgumentError(f"unknown node kind: {exc}") from exc
        object.__setattr__(self, "kinds", kinds)
        parents = np.array(self.parents, dtype=np.int64).reshape(-1)
        parents.setflags(write=False)
        object.__setattr__(self, "parents", parents)
        if not (len(positions) == len(kinds) == len(parents)):
            raise ArgumentError(
                "positions, kinds and parents must have the same length, got "
                f"{len(positions)}, {len(kinds)}, {len(parents)}"
            )
        self._validate()

    def _validate(self) -> None:
        n = len(self.parents)
        if n == 0:
            raise InvariantError("single_root", "centerline tree has no nodes")
        roots = np.flatnonzero(self.parents == -1)
        if len(roots) != 1:
            raise InvariantError("single_root", f"expected one root, found {len(roots)}")
        if np.any((self.parents < -1) | (self.parents >= n)):
            raise InvariantError("valid_indices", "parent index out of range")
        root = int(roots[0])
        if self.kinds[root] is not NodeKind.ROOT:
            raise InvariantError("single_root", f"root node {root} has kind {self.kinds[root]}")
        for i, kind in enumerate(self.kinds):
            if kind is NodeKind.ROOT and i != root:
                raise InvariantError("single_root", f"node {i} is a second root")

        visited = np.zeros(n, dtype=bool)
        stack = [root]
        visited[root] = True
        while stack:
            node = stack.pop()
            for child in self.children[node]:
                if visited[child]:
                    raise InvariantError("acyclic", f"node {child} reached twice")
                visited[child] = True
                stack.append(child)
        if not visited.all():
            raise InvariantError(
                "acyclic", f"node {int(np.flatnonzero(~visited)[0])} is not reachable from the root"
            )

        for i, kind in enumerate(self.kinds):
            n_children = len(self.children[i])
            if kind is NodeKind.TERMINAL and n_children:
                raise InvariantError("terminal_leaf", f"terminal {i} has children")
            if kind is NodeKind.JUNCTION and n_children < 2:
                raise InvariantError("junction_branching", f"junction {i} has {n_children} children")
            if kind is NodeKind.INTERNAL and n_children != 1:
                raise InvariantError("internal_chain", f"internal node {i} has {n_children} children")

    @property
    def n_nodes(self) -> int:
        return len(self.parents)

    @cached_property
    def root(self) -> int:
        return int(np.flatnonzero(self.parents == -1)[0])

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(len(self.parents))]
        for i, p in enumerate(self.parents):
            if p >= 0:
                out[int(p)].append(i)
        return tuple(tuple(c) for c in out)

    def nodes_of_kind(self, kind: NodeKind | str) -> np.ndarray:
        kind = NodeKind(kind)
        return np.array([i for i, k in enumerate(self.kinds) if k is kind], dtype=np.int64)

    @property
    def terminals(self) -> np.ndarray:
        return self.nodes_of_kind(NodeKind.TERMINAL)

    @property
    def junctions(self) -> np.ndarray:
        return self.nodes_of_kind(NodeKind.JUNCTION)

    def segments(self) -> np.ndarray:
        """``(E, 2)`` array of ``(parent, child)`` index pairs."""
        child = np.flatnonzero(self.parents >= 0)
        return np.stack([self.parents[child], child], axis=1)

    def segment_endpoints(self, positions: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of every segment.

        A tree consisting of the root only yields one degenerate segment at
        the root so that point-to-curve distances remain defined.
        """
        pos = self.positions if positions is None else positions
        seg = self.segments()
        if len(seg) == 0:
            return pos[[self.root]], pos[[self.root]]
        return pos[seg[:, 0]], pos[seg[:, 1]]

    def path_from_root(self, node: int) -> list[int]:
        """Node indices from the root down to ``node`` inclusive."""
        if not 0 <= node < self.n_nodes:
            raise ArgumentError(f"node index {node} out of range")
        path = [node]
        while self.parents[path[-1]] >= 0:
            path.append(int(self.parents[path[-1]]))
        return path[::-1]

    def depth(self, node: int) -> int:
        return len(self.path_from_root(node)) - 1

    def with_positions(self, positions: ArrayLike) -> "CenterlineTree":
        return CenterlineTree(positions, self.kinds, self.parents)

    def subtree(self, keep: Sequence[bool] | np.ndarray) -> "CenterlineTree":
        """Return the tree restricted to the nodes flagged in ``keep``.

        Kept nodes retain their relative order. Nodes left with a single
        child are relabelled internal; leaves are relabelled terminal.
        """
        mask = np.asarray(keep, dtype=bool)
        if not mask[self.root]:
            raise ArgumentError("cannot drop the root node")
        new_index = np.full(self.n_nodes, -1, dtype=np.int64)
        new_index[mask] = np.arange(int(mask.sum()))
        old = np.flatnonzero(mask)
        parents = np.array(
            [new_index[self.parents[i]] if self.parents[i] >= 0 else -1 for i in old],
            dtype=np.int64,
        )
        for i, p in zip(old, parents):
            if p < 0 and i != self.root:
                raise ArgumentError(f"node {int(i)} is kept but its parent is dropped")
        n_children = np.bincount(parents[parents >= 0], minlength=len(old))
        kinds = []
        for j, i in enumerate(old):
            if i == self.root:
                kinds.append(NodeKind.ROOT)
            elif n_children[j] == 0:
                kinds.append(NodeKind.TERMINAL)
            elif n_children[j] == 1:
                kinds.append(NodeKind.INTERNAL)
            else:
                kinds.append(NodeKind.JUNCTION)
        return CenterlineTree(self.positions[old], tuple(kinds), parents)
