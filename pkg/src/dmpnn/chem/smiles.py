"""SMILES parser.

Supports the organic subset, bracket atoms (isotope, chirality, hydrogen
count, charge, atom class), ring closures including ``%nn``, branches,
disconnected fragments and directional bonds. Isotopes and atom classes are
parsed and otherwise ignored.

Implicit hydrogens of organic-subset atoms use the lowest default valence that
accommodates the explicit bond-order sum. Aromatic bonds count 1 toward that sum
and an aromatic atom gives up one further hydrogen, so ``c1ccccc1`` carries one
hydrogen per carbon, pyridine ``n`` none and thiophene ``s`` none.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import elements
from .graph import Atom, Bond, BondOrder, BondStereo, Chirality, Hybridization, MolGraph, build_adjacency
from .rings import ring_flags


class SmilesError(ValueError):
    """Base class for every parse failure."""


class SmilesSyntaxError(SmilesError):
    pass


class UnbalancedRing(SmilesError):
    pass


class UnbalancedParen(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class ValenceError(SmilesError):
    pass


class UnsupportedFeature(SmilesError):
    pass


class AromaticityError(SmilesError):
    """Atom written aromatic but not on any ring."""


_ORGANIC = {"B": 5, "C": 6, "N": 7, "O": 8, "P": 15, "S": 16, "F": 9, "Cl": 17, "Br": 35, "I": 53}
_AROMATIC_ORGANIC = {"b": 5, "c": 6, "n": 7, "o": 8, "p": 15, "s": 16}
_AROMATIC_BRACKET = {"b": 5, "c": 6, "n": 7, "o": 8, "p": 15, "s": 16, "se": 34, "as": 33, "te": 52}
_BOND_CHARS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
_DIRECTIONAL = "/\\"


@dataclass
class _RawAtom:
    z: int
    aromatic: bool
    charge: int = 0
    hcount: Optional[int] = None
    chirality: Chirality = Chirality.UNSPECIFIED
    isotope: Optional[int] = None


@dataclass
class _RawBond:
    begin: int
    end: int
    symbol: Optional[str]
    # atom written first when the bond symbol was read; directional bonds need it
    written_from: int = -1
    order: BondOrder = BondOrder.SINGLE
    explicit_aromatic: bool = False


@dataclass
class _State:
    s: str
    pos: int = 0
    atoms: list = field(default_factory=list)
    bonds: list = field(default_factory=list)
    pairs: set = field(default_factory=set)


def _fail(exc, state: _State, msg: str):
    raise exc(f"{msg} at position {state.pos} in {state.s!r}")


def _parse_bracket(st: _State) -> _RawAtom:
    s = st.s
    end = s.find("]", st.pos)
    if end < 0:
        _fail(SmilesSyntaxError, st, "unterminated bracket atom")
    body = s[st.pos + 1 : end]
    i = 0
    isotope = None
    while i < len(body) and body[i].isdigit():
        i += 1
    if i:
        isotope = int(body[:i])
    rest = body[i:]
    if not rest:
        _fail(SmilesSyntaxError, st, "empty bracket atom")
    if rest[0] == "*":
        _fail(UnsupportedFeature, st, "wildcard atom")
    z = None
    aromatic = False
    for width in (2, 1):
        tok = rest[:width]
        if len(tok) < width:
            continue
        if tok in _AROMATIC_BRACKET:
            z, aromatic = _AROMATIC_BRACKET[tok], True
        elif tok[0].isupper() and tok in elements.ATOMIC_NUMBER:
            z = elements.ATOMIC_NUMBER[tok]
        if z is not None:
            i += width
            break
    if z is None:
        _fail(UnknownElement, st, f"unknown element in [{body}]")

    chirality = Chirality.UNSPECIFIED
    if i < len(body) and body[i] == "@":
        if body[i : i + 2] == "@@":
            chirality = Chirality.CW
            i += 2
        else:
            i += 1
            if body[i : i + 2] in ("TH", "AL", "SP", "TB", "OH"):
                chirality = Chirality.OTHER
                i += 2
                while i < len(body) and body[i].isdigit():
                    i += 1
            else:
                chirality = Chirality.CCW

    hcount = 0
    if i < len(body) and body[i] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        hcount = int(body[i:j]) if j > i else 1
        i = j

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        j = i + 1
        while j < len(body) and body[j] == body[i]:
            j += 1
        if j > i + 1:
            charge = sign * (j - i)
            i = j
        else:
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * (int(body[j:k]) if k > j else 1)
            i = k

    if i < len(body) and body[i] == ":":
        j = i + 1
        while j < len(body) and body[j].isdigit():
            j += 1
        if j == i + 1:
            _fail(SmilesSyntaxError, st, "empty atom class")
        i = j
    if i != len(body):
        _fail(SmilesSyntaxError, st, f"unexpected {body[i:]!r} in bracket atom")
    st.pos = end + 1
    return _RawAtom(z, aromatic, charge, hcount, chirality, isotope)


def _add_bond(st: _State, a: int, b: int, symbol: Optional[str], written_from: int):
    if a == b:
        _fail(SmilesSyntaxError, st, "atom bonded to itself")
    key = (min(a, b), max(a, b))
    if key in st.pairs:
        _fail(SmilesSyntaxError, st, "duplicate bond")
    st.pairs.add(key)
    st.bonds.append(_RawBond(a, b, symbol, written_from))


def _tokenize(st: _State) -> None:
    s = st.s
    prev: Optional[int] = None
    pending: Optional[str] = None
    branches: list[int] = []
    rings: dict[int, tuple[int, Optional[str]]] = {}

    while st.pos < len(s):
        c = s[st.pos]
        if c == "(":
            if prev is None:
                _fail(UnbalancedParen, st, "branch without a preceding atom")
            if pending is not None:
                _fail(SmilesSyntaxError, st, "bond before branch")
            branches.append(prev)
            st.pos += 1
        elif c == ")":
            if not branches:
                _fail(UnbalancedParen, st, "unmatched ')'")
            if pending is not None:
                _fail(SmilesSyntaxError, st, "dangling bond")
            prev = branches.pop()
            st.pos += 1
        elif c == ".":
            if pending is not None:
                _fail(SmilesSyntaxError, st, "dangling bond")
            prev = None
            st.pos += 1
        elif c in _BOND_CHARS or c in _DIRECTIONAL:
            if pending is not None:
                _fail(SmilesSyntaxError, st, "two consecutive bond symbols")
            if prev is None:
                _fail(SmilesSyntaxError, st, "bond without a preceding atom")
            pending = c
            st.pos += 1
        elif c.isdigit() or c == "%":
            if prev is None:
                _fail(SmilesSyntaxError, st, "ring closure without an atom")
            if c == "%":
                digits = s[st.pos + 1 : st.pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    _fail(SmilesSyntaxError, st, "malformed %nn ring closure")
                num = int(digits)
                st.pos += 3
            else:
                num = int(c)
                st.pos += 1
            if num in rings:
                opener, open_sym = rings.pop(num)
                if pending is not None and open_sym is not None and pending != open_sym:
                    if not (pending in _DIRECTIONAL and open_sym in _DIRECTIONAL):
                        _fail(SmilesSyntaxError, st, "conflicting ring-closure bond symbols")
                if open_sym is not None:
                    _add_bond(st, opener, prev, open_sym, opener)
                else:
                    _add_bond(st, opener, prev, pending, prev)
            else:
                rings[num] = (prev, pending)
            pending = None
        elif c == "[":
            atom = _parse_bracket(st)
            st.atoms.append(atom)
            idx = len(st.atoms) - 1
            if prev is not None:
                _add_bond(st, prev, idx, pending, prev)
            prev, pending = idx, None
        elif c in "*>":
            _fail(UnsupportedFeature, st, f"{c!r} is not supported")
        elif c == "$":
            _fail(UnsupportedFeature, st, "quadruple bonds are not supported")
        elif c.isalpha():
            two = s[st.pos : st.pos + 2]
            if two in ("Cl", "Br"):
                z, aromatic, width = _ORGANIC[two], False, 2
            elif c in _ORGANIC:
                z, aromatic, width = _ORGANIC[c], False, 1
            elif c in _AROMATIC_ORGANIC:
                z, aromatic, width = _AROMATIC_ORGANIC[c], True, 1
            else:
                _fail(UnknownElement, st, f"{c!r} is not an organic-subset element")
            st.atoms.append(_RawAtom(z, aromatic))
            idx = len(st.atoms) - 1
            if prev is not None:
                _add_bond(st, prev, idx, pending, prev)
            prev, pending = idx, None
            st.pos += width
        else:
            _fail(SmilesSyntaxError, st, f"unexpected character {c!r}")

    if pending is not None:
        _fail(SmilesSyntaxError, st, "dangling bond at end of string")
    if branches:
        _fail(UnbalancedParen, st, "unclosed '('")
    if rings:
        _fail(UnbalancedRing, st, f"unclosed ring bond(s) {sorted(rings)}")
    if not st.atoms:
        _fail(SmilesSyntaxError, st, "no atoms")


def _implicit_h(raw: _RawAtom, order_sum: int, st: _State) -> int:
    if raw.hcount is not None:
        return 0
    valences = elements.ORGANIC_VALENCES[raw.z]
    extra = 1 if raw.aromatic else 0
    if order_sum > valences[-1]:
        raise ValenceError(
            f"{elements.symbol(raw.z)} with bond-order sum {order_sum} exceeds valence {valences[-1]} in {st.s!r}"
        )
    target = next((v for v in valences if v >= order_sum), valences[-1])
    return max(0, target - order_sum - extra)


def _conjugation(atoms: list[_RawAtom], bonds: list[_RawBond], adj) -> list[bool]:
    """Conjugation flags from a local alternation rule.

    Multiple bonds on hypervalent P or S (phosphate, sulfone) do not take
    part; N and O lone pairs act as donors.
    """
    n = len(atoms)
    order_sum = [0] * n
    for b in bonds:
        v = 1 if b.order == BondOrder.AROMATIC else int(b.order.valence)
        order_sum[b.begin] += v
        order_sum[b.end] += v

    def hypervalent(atom: int) -> bool:
        z = atoms[atom].z
        return (z == 16 and order_sum[atom] > 2) or (z == 15 and order_sum[atom] > 3)

    def conjugatable(b: _RawBond) -> bool:
        if b.order == BondOrder.AROMATIC:
            return True
        return b.order != BondOrder.SINGLE and not (hypervalent(b.begin) or hypervalent(b.end))

    multiple: list[list[int]] = [[] for _ in range(n)]
    any_multiple = [False] * n
    for bi, b in enumerate(bonds):
        if b.order != BondOrder.SINGLE:
            any_multiple[b.begin] = any_multiple[b.end] = True
        if conjugatable(b):
            multiple[b.begin].append(bi)
            multiple[b.end].append(bi)

    def unsaturated(atom: int, skip: int) -> bool:
        return any(bi != skip for bi in multiple[atom])

    def lone_pair(atom: int) -> bool:
        a = atoms[atom]
        return a.z in (7, 8) and a.charge <= 0 and not any_multiple[atom]

    conj = [False] * len(bonds)
    for bi, b in enumerate(bonds):
        if b.order == BondOrder.AROMATIC:
            conj[bi] = True
        elif b.order == BondOrder.SINGLE:
            u, v = b.begin, b.end
            if (unsaturated(u, bi) and (unsaturated(v, bi) or lone_pair(v))) or (
                unsaturated(v, bi) and lone_pair(u)
            ):
                conj[bi] = True
    for bi, b in enumerate(bonds):
        if b.order == BondOrder.AROMATIC or not conjugatable(b):
            continue
        for atom in (b.begin, b.end):
            for _, other in adj[atom]:
                if other == bi:
                    continue
                ob = bonds[other]
                if (ob.order == BondOrder.SINGLE and conj[other]) or (
                    ob.order != BondOrder.SINGLE and conjugatable(ob)
                ):
                    conj[bi] = True
    return conj


def _hybridization(orders: list[BondOrder], total_degree: int) -> Hybridization:
    """Hybridization guessed from bond orders and total coordination."""
    if total_degree > 5:
        return Hybridization.SP3D2
    if total_degree > 4:
        return Hybridization.SP3D
    doubles = sum(o == BondOrder.DOUBLE for o in orders)
    if BondOrder.TRIPLE in orders or doubles >= 2:
        return Hybridization.SP
    if doubles or BondOrder.AROMATIC in orders:
        return Hybridization.SP2
    return Hybridization.SP3


def _flip(ch: str) -> str:
    return "\\" if ch == "/" else "/"


def _side_direction(bond: _RawBond, center: int) -> str:
    """Direction of a directional bond as seen from the neighbor toward ``center``."""
    assert bond.symbol in ("/", "\\")
    return bond.symbol if bond.written_from != center else _flip(bond.symbol)


def _stereo(atoms: list[_RawAtom], bonds: list[_RawBond], adj, bond_in_ring, heavy_z) -> list[BondStereo]:
    out = [BondStereo.NONE] * len(bonds)
    for bi, b in enumerate(bonds):
        if b.order != BondOrder.DOUBLE or bond_in_ring[bi]:
            continue
        sides = []
        for center in (b.begin, b.end):
            directional = [
                (nbr, other)
                for nbr, other in adj[center]
                if other != bi and bonds[other].symbol in ("/", "\\")
            ]
            if len(directional) != 1:
                break
            sides.append((center, *directional[0]))
        if len(sides) != 2:
            continue
        dirs = [_side_direction(bonds[other], center) for center, _, other in sides]
        trans = dirs[0] != dirs[1]
        # first-sphere priority: the directional neighbor against the other substituent
        flips = 0
        determinable = True
        for center, nbr, _ in sides:
            others = [w for w, ob in adj[center] if ob != bi and w != nbr]
            if not others:
                continue
            za, zo = heavy_z[nbr], heavy_z[others[0]]
            if za == zo:
                determinable = False
            elif za < zo:
                flips += 1
        if not determinable:
            out[bi] = BondStereo.TRANS if trans else BondStereo.CIS
        else:
            if flips % 2:
                trans = not trans
            out[bi] = BondStereo.E if trans else BondStereo.Z
    return out


def parse_smiles(s: str) -> MolGraph:
    """Parse ``s`` into a :class:`MolGraph` with rings, hydrogens and stereo perceived."""
    if not isinstance(s, str) or not s.strip():
        raise SmilesSyntaxError("empty SMILES")
    s = s.strip()
    st = _State(s)
    _tokenize(st)
    atoms: list[_RawAtom] = st.atoms
    bonds: list[_RawBond] = st.bonds
    n = len(atoms)

    for b in bonds:
        sym = b.symbol
        if sym in _BOND_CHARS:
            b.order = _BOND_CHARS[sym]
            b.explicit_aromatic = sym == ":"
        elif sym is None and atoms[b.begin].aromatic and atoms[b.end].aromatic:
            b.order = BondOrder.AROMATIC
        else:
            b.order = BondOrder.SINGLE

    adj = build_adjacency(n, bonds)
    ends = [(b.begin, b.end) for b in bonds]
    atom_in_ring, bond_in_ring = ring_flags(n, ends, adj)

    # aromatic-by-default bonds between rings (biphenyl without '-') are single
    for bi, b in enumerate(bonds):
        if b.order == BondOrder.AROMATIC and not bond_in_ring[bi]:
            b.order = BondOrder.SINGLE
    for i, a in enumerate(atoms):
        if a.aromatic and not atom_in_ring[i]:
            raise AromaticityError(f"non-ring atom {i} marked aromatic in {s!r}")
    for b in bonds:
        if b.order == BondOrder.AROMATIC and not (atoms[b.begin].aromatic and atoms[b.end].aromatic):
            # ':' between non-aromatic atoms
            raise AromaticityError(f"aromatic bond between non-aromatic atoms in {s!r}")

    order_sum = [0] * n
    for b in bonds:
        v = 1 if b.order == BondOrder.AROMATIC else int(b.order.valence)
        order_sum[b.begin] += v
        order_sum[b.end] += v

    implicit = [_implicit_h(a, order_sum[i], st) for i, a in enumerate(atoms)]
    conj = _conjugation(atoms, bonds, adj)
    heavy_z = [a.z for a in atoms]
    stereo = _stereo(atoms, bonds, adj, bond_in_ring, heavy_z)

    orders: list[list[BondOrder]] = [[] for _ in range(n)]
    for b in bonds:
        orders[b.begin].append(b.order)
        orders[b.end].append(b.order)
    total_h = [implicit[i] + (a.hcount or 0) for i, a in enumerate(atoms)]

    out_atoms = tuple(
        Atom(
            atomic_number=a.z,
            formal_charge=a.charge,
            aromatic=a.aromatic,
            explicit_h=a.hcount,
            implicit_h=implicit[i],
            chirality=a.chirality,
            degree=len(adj[i]),
            in_ring=atom_in_ring[i],
            isotope=a.isotope,
            hybridization=_hybridization(orders[i], len(adj[i]) + total_h[i]),
        )
        for i, a in enumerate(atoms)
    )
    out_bonds = tuple(
        Bond(b.begin, b.end, b.order, conj[bi], bond_in_ring[bi], stereo[bi]) for bi, b in enumerate(bonds)
    )
    return MolGraph(out_atoms, out_bonds, adj, s)
