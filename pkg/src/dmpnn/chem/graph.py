"""Molecular graph types produced by the SMILES parser."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class Chirality(enum.IntEnum):
    UNSPECIFIED = 0
    CW = 1
    CCW = 2
    OTHER = 3


class BondOrder(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def valence(self) -> float:
        return (1.0, 2.0, 3.0, 1.5)[self]


class BondStereo(enum.IntEnum):
    NONE = 0
    ANY = 1
    Z = 2
    E = 3
    CIS = 4
    TRANS = 5


class Hybridization(enum.IntEnum):
    SP = 0
    SP2 = 1
    SP3 = 2
    SP3D = 3
    SP3D2 = 4


@dataclass(frozen=True)
class Atom:
    atomic_number: int
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: Optional[int] = None
    implicit_h: int = 0
    chirality: Chirality = Chirality.UNSPECIFIED
    degree: int = 0
    in_ring: bool = False
    isotope: Optional[int] = None
    hybridization: Hybridization = Hybridization.SP3

    @property
    def total_h(self) -> int:
        return self.implicit_h + (self.explicit_h or 0)

    @property
    def bracket(self) -> bool:
        return self.explicit_h is not None


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE
    conjugated: bool = False
    in_ring: bool = False
    stereo: BondStereo = BondStereo.NONE

    def other(self, atom: int) -> int:
        if atom == self.begin:
            return self.end
        if atom == self.end:
            return self.begin
        raise ValueError(f"atom {atom} is not an endpoint of bond {self.begin}-{self.end}")


@dataclass(frozen=True)
class MolGraph:
    """Atoms, bonds and per-atom ``(neighbor, bond index)`` adjacency."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    adjacency: tuple[tuple[tuple[int, int], ...], ...]
    smiles: str = ""

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def neighbors(self, atom: int) -> list[int]:
        return [nbr for nbr, _ in self.adjacency[atom]]

    def bond_between(self, a: int, b: int) -> Optional[int]:
        for nbr, bi in self.adjacency[a]:
            if nbr == b:
                return bi
        return None

    def num_components(self) -> int:
        seen = [False] * self.num_atoms
        count = 0
        for start in range(self.num_atoms):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                v = stack.pop()
                for w, _ in self.adjacency[v]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
        return count


def build_adjacency(num_atoms: int, bonds) -> tuple[tuple[tuple[int, int], ...], ...]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(num_atoms)]
    for bi, bond in enumerate(bonds):
        adj[bond.begin].append((bond.end, bi))
        adj[bond.end].append((bond.begin, bi))
    return tuple(tuple(a) for a in adj)
