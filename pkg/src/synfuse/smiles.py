"""SMILES → heavy-atom molecular graph with a 78-column atom feature matrix.

Supported: organic-subset and bracket atoms (isotope, chirality, H-count,
charge and atom class are read; isotope/chirality/class are discarded),
bonds ``- = # $ :`` plus the directional ``/ \\`` (treated as single),
branches, ring closures ``0-9`` and ``%nn``, and ``.`` fragment separators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ELEMENT_VOCAB = (
    "C", "N", "O", "S", "F", "Si", "P", "Cl", "Br", "Mg", "Na", "Ca", "Fe", "As",
    "Al", "I", "B", "V", "K", "Tl", "Yb", "Sb", "Sn", "Ag", "Pd", "Co", "Se", "Ti",
    "Zn", "H", "Li", "Ge", "Cu", "Au", "Ni", "Cd", "In", "Mn", "Zr", "Cr", "Pt",
    "Hg", "Pb", "Unknown",
)
N_FEATURES = len(ELEMENT_VOCAB) + 11 + 11 + 11 + 1  # 78
_ELEMENT_INDEX = {s: i for i, s in enumerate(ELEMENT_VOCAB)}

_PERIODIC = set(
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu "
    "Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba "
    "La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi "
    "Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds "
    "Rg Cn Nh Fl Mc Lv Ts Og".split()
)
_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")
_DEFAULT_VALENCE = {
    "B": (3,), "C": (4,), "N": (3,), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
_BOND_SYMBOLS = {"-": 1.0, "=": 2.0, "#": 3.0, "$": 4.0, ":": 1.5, "/": 1.0, "\\": 1.0}
AROMATIC_ORDER = 1.5


class SmilesError(ValueError):
    def __init__(self, message, smiles, offset):
        super().__init__(f"{message} at offset {offset} in {smiles!r}")
        self.smiles = smiles
        self.offset = offset


class EmptyInput(SmilesError):
    def __init__(self, smiles=""):
        super().__init__("empty SMILES", smiles, 0)


class UnmatchedRingClosure(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownAtomToken(SmilesError):
    pass


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    bracket: bool = False
    charge: int = 0
    bracket_h: int = 0
    folded_h: int = 0
    degree: int = 0
    implicit_h: int = 0
    implicit_valence: int = 0


@dataclass
class MolecularGraph:
    features: np.ndarray
    adjacency: np.ndarray
    atom_symbols: list
    atoms: list = field(repr=False, default_factory=list)
    bonds: list = field(repr=False, default_factory=list)

    @property
    def n_atoms(self):
        return self.adjacency.shape[0]

    @property
    def n_edges(self):
        return int(self.adjacency.sum()) // 2


def _one_hot(i, n):
    v = np.zeros(n)
    v[i] = 1.0
    return v


def featurize_atom(atom):
    """44-way element, then degree / implicit H / implicit valence (0-10, clamped), then aromatic flag."""
    elem = _ELEMENT_INDEX.get(atom.element, len(ELEMENT_VOCAB) - 1)
    return np.concatenate([
        _one_hot(elem, len(ELEMENT_VOCAB)),
        _one_hot(min(max(atom.degree, 0), 10), 11),
        _one_hot(min(max(atom.implicit_h, 0), 10), 11),
        _one_hot(min(max(atom.implicit_valence, 0), 10), 11),
        [1.0 if atom.aromatic else 0.0],
    ])


def _implicit_hydrogens(atom, bond_sum):
    valences = _DEFAULT_VALENCE.get(atom.element)
    if valences is None:
        return 0
    used = math.floor(bond_sum)
    if atom.aromatic:
        # aromatic atoms never step up to a higher valence state (thiophene S keeps no H)
        return max(valences[0] - used, 0)
    for v in valences:
        if v >= used:
            return v - used
    return 0


def _parse_bracket(s, start):
    """Parse ``[...]`` beginning at ``s[start] == '['``; returns (Atom, index after ']')."""
    end = s.find("]", start)
    if end < 0:
        raise UnknownAtomToken("unterminated bracket atom", s, start)
    body = s[start + 1:end]
    i = 0
    while i < len(body) and body[i].isdigit():
        i += 1
    rest = body[i:]
    element = aromatic = None
    if rest.startswith("*"):
        element, aromatic, i = "*", False, i + 1
    else:
        for sym in _AROMATIC_BRACKET:
            if rest.startswith(sym):
                element, aromatic = sym.capitalize(), True
                i += len(sym)
                break
        else:
            two, one = rest[:2], rest[:1]
            if len(two) == 2 and two in _PERIODIC:
                element = two
            elif one in _PERIODIC:
                element = one
            if element is not None:
                aromatic = False
                i += len(element)
    if element is None:
        raise UnknownAtomToken(f"unknown element in [{body}]", s, start + 1 + i)
    while i < len(body) and body[i] == "@":
        i += 1
    for tag in ("TH", "AL", "SP", "TB", "OH"):
        if body.startswith(tag, i):
            i += 2
            while i < len(body) and body[i].isdigit():
                i += 1
    h = 0
    if i < len(body) and body[i] == "H":
        i += 1
        j = i
        while i < len(body) and body[i].isdigit():
            i += 1
        h = int(body[j:i]) if i > j else 1
    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        j = i
        while i < len(body) and body[i] == body[j]:
            i += 1
        k = i
        while i < len(body) and body[i].isdigit():
            i += 1
        charge = sign * (int(body[k:i]) if i > k else i - j)
    if i < len(body) and body[i] == ":":
        i += 1
        while i < len(body) and body[i].isdigit():
            i += 1
    if i != len(body):
        raise UnknownAtomToken(f"unexpected {body[i]!r} in [{body}]", s, start + 1 + i)
    return Atom(element, aromatic=aromatic, bracket=True, charge=charge, bracket_h=h), end + 1


def _tokenize(s):
    """Return (atoms, bonds) where bonds are (i, j, order) with order 1.5 for aromatic."""
    atoms = []
    bonds = []
    prev = None
    stack = []
    open_rings = {}
    pending = None  # (order, offset) of an explicit bond symbol
    i, n = 0, len(s)

    def bond_order(a, b):
        if pending is not None:
            return pending[0]
        if atoms[a].aromatic and atoms[b].aromatic:
            return AROMATIC_ORDER
        return 1.0

    def add_atom(atom):
        nonlocal prev, pending
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            bonds.append((prev, idx, bond_order(prev, idx)))
        prev = idx
        pending = None

    while i < n:
        ch = s[i]
        if ch == "(":
            if prev is None:
                raise UnbalancedParenthesis("branch opened before any atom", s, i)
            stack.append((prev, i))
            i += 1
        elif ch == ")":
            if not stack:
                raise UnbalancedParenthesis("unmatched ')'", s, i)
            prev = stack.pop()[0]
            i += 1
        elif ch in _BOND_SYMBOLS:
            pending = (_BOND_SYMBOLS[ch], i)
            i += 1
        elif ch == ".":
            if stack:
                raise UnbalancedParenthesis("'.' inside a branch", s, i)
            prev = None
            pending = None
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                digits = s[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise UnmatchedRingClosure("malformed %nn ring label", s, i)
                label, width = int(digits), 3
            else:
                label, width = int(ch), 1
            if prev is None:
                raise UnmatchedRingClosure(f"ring label {label} without a preceding atom", s, i)
            if label in open_rings:
                other, other_pending, _ = open_rings.pop(label)
                if other == prev:
                    raise UnmatchedRingClosure(f"ring label {label} closes on its own atom", s, i)
                if pending is not None:
                    order = pending[0]
                elif other_pending is not None:
                    order = other_pending
                else:
                    order = bond_order(other, prev)
                bonds.append((other, prev, order))
            else:
                open_rings[label] = (prev, pending[0] if pending else None, i)
            pending = None
            i += width
        elif ch == "[":
            atom, i = _parse_bracket(s, i)
            add_atom(atom)
        elif ch == "*":
            add_atom(Atom("*"))
            i += 1
        else:
            for sym in _ORGANIC:
                if s.startswith(sym, i):
                    add_atom(Atom(sym))
                    i += len(sym)
                    break
            else:
                if ch in _AROMATIC_ORGANIC:
                    add_atom(Atom(ch.upper(), aromatic=True))
                    i += 1
                else:
                    raise UnknownAtomToken(f"unknown token {ch!r}", s, i)
    if stack:
        raise UnbalancedParenthesis("unclosed '('", s, stack[-1][1])
    if open_rings:
        label, (_, _, off) = min(open_rings.items(), key=lambda kv: kv[1][2])
        raise UnmatchedRingClosure(f"ring label {label} never closed", s, off)
    return atoms, bonds


def _fold_explicit_hydrogens(atoms, bonds):
    """Turn bracket [H] atoms bonded to exactly one non-H atom into H counts."""
    neighbors = {i: [] for i in range(len(atoms))}
    for a, b, _ in bonds:
        neighbors[a].append(b)
        neighbors[b].append(a)
    drop = set()
    for i, atom in enumerate(atoms):
        if atom.element == "H" and len(neighbors[i]) == 1 and atoms[neighbors[i][0]].element != "H":
            drop.add(i)
            atoms[neighbors[i][0]].folded_h += 1
    if not drop:
        return atoms, bonds
    remap = {}
    kept = []
    for i, atom in enumerate(atoms):
        if i not in drop:
            remap[i] = len(kept)
            kept.append(atom)
    kept_bonds = [(remap[a], remap[b], o) for a, b, o in bonds if a not in drop and b not in drop]
    return kept, kept_bonds


def parse_smiles(s):
    """Parse a SMILES string into a :class:`MolecularGraph`."""
    if not s or not s.strip():
        raise EmptyInput(s or "")
    s = s.strip()
    if not s.isascii():
        bad = next(i for i, c in enumerate(s) if not c.isascii())
        raise UnknownAtomToken("non-ASCII character", s, bad)
    atoms, bonds = _tokenize(s)
    if not atoms:
        raise EmptyInput(s)
    atoms, bonds = _fold_explicit_hydrogens(atoms, bonds)

    n = len(atoms)
    adjacency = np.zeros((n, n))
    bond_sum = np.zeros(n)
    for a, b, order in bonds:
        adjacency[a, b] = adjacency[b, a] = 1.0
        bond_sum[a] += order
        bond_sum[b] += order
    for i, atom in enumerate(atoms):
        atom.degree = int(adjacency[i].sum())
        if atom.bracket:
            atom.implicit_h = atom.bracket_h + atom.folded_h
            atom.implicit_valence = 0
        else:
            atom.implicit_valence = _implicit_hydrogens(atom, bond_sum[i] + atom.folded_h)
            atom.implicit_h = atom.implicit_valence + atom.folded_h
    features = np.stack([featurize_atom(a) for a in atoms])
    return MolecularGraph(
        features=features,
        adjacency=adjacency,
        atom_symbols=[a.element for a in atoms],
        atoms=atoms,
        bonds=bonds,
    )
