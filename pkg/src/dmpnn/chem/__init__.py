"""SMILES parsing, ring perception and Murcko scaffolds."""

from .graph import Atom, Bond, BondOrder, BondStereo, Chirality, Hybridization, MolGraph
from .rings import find_rings
from .scaffold import canonical_smiles, murcko_scaffold, random_smiles, scaffold_atoms, write_smiles
from .smiles import (
    AromaticityError,
    SmilesError,
    SmilesSyntaxError,
    UnbalancedParen,
    UnbalancedRing,
    UnknownElement,
    UnsupportedFeature,
    ValenceError,
    parse_smiles,
)

__all__ = [
    "Atom",
    "AromaticityError",
    "Bond",
    "BondOrder",
    "BondStereo",
    "Chirality",
    "Hybridization",
    "MolGraph",
    "SmilesError",
    "SmilesSyntaxError",
    "UnbalancedParen",
    "UnbalancedRing",
    "UnknownElement",
    "UnsupportedFeature",
    "ValenceError",
    "canonical_smiles",
    "find_rings",
    "murcko_scaffold",
    "parse_smiles",
    "random_smiles",
    "scaffold_atoms",
    "write_smiles",
]
