"""Canonical ranking, SMILES writing and Murcko scaffolds."""

from __future__ import annotations

import random
from typing import Optional, Sequence

from . import elements
from .graph import BondOrder, MolGraph

_BOND_SYMBOL = {BondOrder.SINGLE: "", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ""}
_ORGANIC_Z = {5, 6, 7, 8, 9, 15, 16, 17, 35, 53}


def _dense_rank(keys: Sequence) -> list[int]:
    order = {k: i for i, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def canonical_ranks(g: MolGraph, atoms: Optional[Sequence[int]] = None, with_h: bool = True) -> dict[int, int]:
    """Distinct canonical rank per atom of the (induced) subgraph on ``atoms``.

    Ranks come from iterated neighborhood refinement of atom invariants; ties
    left after refinement are broken one at a time on the lowest tied class,
    refining again after each break.
    """
    sub = list(range(g.num_atoms)) if atoms is None else sorted(atoms)
    members = set(sub)
    nbrs = {v: [(w, int(g.bonds[bi].order)) for w, bi in g.adjacency[v] if w in members] for v in sub}

    def invariant(v: int):
        a = g.atoms[v]
        return (
            a.atomic_number,
            int(a.aromatic),
            a.formal_charge,
            len(nbrs[v]),
            a.total_h if with_h else 0,
            int(a.in_ring),
        )

    ranks = dict(zip(sub, _dense_rank([invariant(v) for v in sub])))

    def refine(r: dict[int, int]) -> dict[int, int]:
        while True:
            keys = [(r[v], tuple(sorted((r[w], o) for w, o in nbrs[v]))) for v in sub]
            new = dict(zip(sub, _dense_rank(keys)))
            if len(set(new.values())) == len(set(r.values())):
                return new
            r = new

    ranks = refine(ranks)
    while len(set(ranks.values())) < len(sub):
        counts: dict[int, int] = {}
        for v in sub:
            counts[ranks[v]] = counts.get(ranks[v], 0) + 1
        tied = min(k for k, c in counts.items() if c > 1)
        chosen = min(v for v in sub if ranks[v] == tied)
        ranks = {v: 2 * r + (0 if v == chosen or r != tied else 1) for v, r in ranks.items()}
        ranks = dict(zip(sub, _dense_rank([ranks[v] for v in sub])))
        ranks = refine(ranks)
    return ranks


def _atom_token(g: MolGraph, v: int, with_h: bool) -> str:
    a = g.atoms[v]
    sym = elements.symbol(a.atomic_number)
    if a.aromatic:
        sym = sym.lower()
    if a.formal_charge == 0 and a.atomic_number in _ORGANIC_Z and not (with_h and a.bracket):
        return sym
    h = a.total_h if with_h else 0
    hs = "" if h == 0 else ("H" if h == 1 else f"H{h}")
    q = a.formal_charge
    qs = "" if q == 0 else ("+" if q > 0 else "-") + (str(abs(q)) if abs(q) > 1 else "")
    return f"[{sym}{hs}{qs}]"


def _bond_token(g: MolGraph, bi: int) -> str:
    b = g.bonds[bi]
    if b.order == BondOrder.SINGLE and g.atoms[b.begin].aromatic and g.atoms[b.end].aromatic:
        return "-"
    if b.order == BondOrder.AROMATIC and not (g.atoms[b.begin].aromatic and g.atoms[b.end].aromatic):
        return ":"
    return _BOND_SYMBOL[b.order]


def write_smiles(
    g: MolGraph,
    atoms: Optional[Sequence[int]] = None,
    ranks: Optional[dict[int, int]] = None,
    rng: Optional[random.Random] = None,
    with_h: bool = True,
) -> str:
    """Serialize the induced subgraph on ``atoms`` as SMILES.

    With ``ranks`` the traversal is fixed by rank (canonical output); with ``rng``
    both the start atom and branch order are shuffled, giving a random but
    equivalent spelling. Stereo marks are not written.
    """
    sub = list(range(g.num_atoms)) if atoms is None else sorted(atoms)
    members = set(sub)
    if ranks is None:
        if rng is None:
            ranks = {v: v for v in sub}
        else:
            perm = list(sub)
            rng.shuffle(perm)
            ranks = {v: i for i, v in enumerate(perm)}

    def ordered_nbrs(v: int):
        return sorted(((w, bi) for w, bi in g.adjacency[v] if w in members), key=lambda x: ranks[x[0]])

    visited: dict[int, int] = {}
    children: dict[int, list[tuple[int, int]]] = {v: [] for v in sub}
    closures: dict[int, list[tuple[int, int]]] = {v: [] for v in sub}
    tree: set[int] = set()
    fragments = []
    for root in sorted(sub, key=lambda v: ranks[v]):
        if root in visited:
            continue
        fragments.append(root)
        stack: list[tuple[int, Optional[int], Optional[int]]] = [(root, None, None)]
        while stack:
            v, par, via = stack.pop()
            if v in visited:
                continue
            visited[v] = len(visited)
            if par is not None:
                children[par].append((v, via))
                tree.add(via)
            for w, bi in reversed(ordered_nbrs(v)):
                if w not in visited:
                    stack.append((w, v, bi))
    for v in sub:
        for w, bi in ordered_nbrs(v):
            if bi not in tree and visited[w] > visited[v]:
                closures[v].append((w, bi))
                closures[w].append((v, bi))

    out = []
    free: list[int] = []
    next_label = [1]
    open_labels: dict[int, int] = {}

    def label() -> int:
        if free:
            free.sort()
            return free.pop(0)
        n = next_label[0]
        next_label[0] += 1
        return n

    def ring_text(n: int) -> str:
        return str(n) if n < 10 else f"%{n:02d}"

    def emit(v: int) -> None:
        out.append(_atom_token(g, v, with_h))
        for w, bi in sorted(closures[v], key=lambda x: (visited[x[0]] > visited[v], ranks[x[0]])):
            if bi in open_labels:
                n = open_labels.pop(bi)
                out.append(ring_text(n))
                free.append(n)
            else:
                n = label()
                open_labels[bi] = n
                out.append(_bond_token(g, bi) + ring_text(n))
        kids = children[v]
        for i, (w, bi) in enumerate(kids):
            last = i == len(kids) - 1
            if not last:
                out.append("(")
            out.append(_bond_token(g, bi))
            emit(w)
            if not last:
                out.append(")")

    pieces = []
    for root in fragments:
        out = []
        emit(root)
        pieces.append("".join(out))
    return ".".join(pieces)


def canonical_smiles(g: MolGraph, atoms: Optional[Sequence[int]] = None, with_h: bool = True) -> str:
    ranks = canonical_ranks(g, atoms, with_h=with_h)
    pieces = write_smiles(g, atoms, ranks=ranks, with_h=with_h).split(".")
    return ".".join(sorted(pieces))


def random_smiles(g: MolGraph, seed: int) -> str:
    """An equivalent SMILES spelling with shuffled atom and branch order."""
    return write_smiles(g, rng=random.Random(seed))


def scaffold_atoms(g: MolGraph) -> list[int]:
    """Atoms surviving iterative removal of terminal non-ring atoms."""
    alive = set(range(g.num_atoms))
    degree = {v: len(g.adjacency[v]) for v in alive}
    queue = [v for v in alive if degree[v] <= 1 and not g.atoms[v].in_ring]
    while queue:
        v = queue.pop()
        if v not in alive:
            continue
        alive.discard(v)
        for w, _ in g.adjacency[v]:
            if w in alive:
                degree[w] -= 1
                if degree[w] <= 1 and not g.atoms[w].in_ring:
                    queue.append(w)
    return sorted(alive)


def murcko_scaffold(g: MolGraph) -> str:
    """Canonical key of the ring systems plus linkers; ``""`` for acyclic molecules."""
    keep = scaffold_atoms(g)
    if not keep:
        return ""
    # hydrogen counts change when side chains are pruned, so they are left out of the key
    return canonical_smiles(g, keep, with_h=False)
