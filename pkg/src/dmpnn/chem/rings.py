"""Ring membership via bridge detection.

A bond lies on a cycle exactly when it is not a bridge, and an atom lies on a
cycle exactly when it touches a non-bridge bond.
"""

from __future__ import annotations

from typing import Sequence


def find_bridges(num_atoms: int, adjacency: Sequence[Sequence[tuple[int, int]]]) -> set[int]:
    """Return indices of bridge bonds (iterative Tarjan lowlink)."""
    disc = [-1] * num_atoms
    low = [0] * num_atoms
    bridges: set[int] = set()
    timer = 0
    for root in range(num_atoms):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # frames: (atom, bond used to enter, iterator position)
        stack = [(root, -1, 0)]
        while stack:
            v, parent_bond, i = stack[-1]
            if i < len(adjacency[v]):
                stack[-1] = (v, parent_bond, i + 1)
                w, bi = adjacency[v][i]
                if bi == parent_bond:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, bi, 0))
                else:
                    low[v] = min(low[v], disc[w])
            else:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        bridges.add(parent_bond)
    return bridges


def ring_flags(
    num_atoms: int,
    bond_ends: Sequence[tuple[int, int]],
    adjacency: Sequence[Sequence[tuple[int, int]]],
) -> tuple[list[bool], list[bool]]:
    """Per-atom and per-bond ring membership."""
    bridges = find_bridges(num_atoms, adjacency)
    bond_in_ring = [bi not in bridges for bi in range(len(bond_ends))]
    atom_in_ring = [False] * num_atoms
    for bi, (a, b) in enumerate(bond_ends):
        if bond_in_ring[bi]:
            atom_in_ring[a] = atom_in_ring[b] = True
    return atom_in_ring, bond_in_ring


def find_rings(g):
    """Ring flags for a parsed :class:`MolGraph` as ``(atom_flags, bond_flags)``."""
    ends = [(b.begin, b.end) for b in g.bonds]
    return ring_flags(g.num_atoms, ends, g.adjacency)


def cycle_rank(num_atoms: int, num_bonds: int, num_components: int) -> int:
    """Number of independent cycles (size of a smallest set of smallest rings)."""
    return num_bonds - num_atoms + num_components
