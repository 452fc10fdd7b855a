# app/services/smiles_service.py

"""
Parser de un subconjunto práctico de SMILES.

Soporta: subconjunto orgánico, átomos entre corchetes (isótopo, carga, H),
ramas, cierres de anillo (incluido %nn) y fragmentos separados por punto.
Los marcadores de estereoquímica (/ \\ @) se aceptan y se descartan; se
cuentan en MolGraph.stereo_discarded.

No hay modelo de valencia ni percepción de aromaticidad: la aromaticidad
es la escrita (minúsculas).
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from app.core.errors import (
    DanglingBond,
    EmptyInput,
    SmilesError,
    UnknownCharacter,
    UnknownElement,
    UnmatchedRingClosure,
    UnterminatedBracket,
)
from app.core.logging import log_structured
from app.schemas.chem import (
    AROMATIC_BRACKET,
    ATOMIC_NUMBERS,
    ORGANIC_SUBSET,
    Atom,
    Bond,
    BondOrder,
    MolGraph,
)

logger = logging.getLogger(__name__)

ATOM = "atom"
BRACKET = "bracket"
BOND = "bond"
BRANCH_OPEN = "branch_open"
BRANCH_CLOSE = "branch_close"
RING = "ring"
DOT = "dot"

_TOKEN_RE = re.compile(
    r"(?P<bracket>\[[^\[\]]*\])"
    r"|(?P<atom>Br|Cl|[BCNOPSFI]|[bcnops])"
    r"|(?P<bond>[-=#:/\\])"
    r"|(?P<branch_open>\()"
    r"|(?P<branch_close>\))"
    r"|(?P<ring>%\d{2}|\d)"
    r"|(?P<dot>\.)"
)

_BRACKET_RE = re.compile(
    r"^\[(?P<isotope>\d+)?"
    r"(?P<symbol>se|as|[bcnops]|[A-Z][a-z]?)"
    r"(?P<chiral>@(?:@|TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d?)?"
    r"(?P<charge>[+-]{1,2}|[+-]\d)?"
    r"(?::\d+)?\]$"
)

_BOND_ORDERS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
_STEREO_BONDS = ("/", "\\")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    position: int


class UnmatchedBranch(SmilesError):
    def __init__(self, position: int):
        super().__init__("unbalanced branch parenthesis", position)


# ============================================================================
# TOKENIZACIÓN
# ============================================================================

def tokenize(smiles: str) -> List[Token]:
    """
    Divide un SMILES en tokens que cubren la entrada exactamente.

    Raises:
        EmptyInput, UnknownCharacter(position), UnterminatedBracket(position)
    """
    if not smiles:
        raise EmptyInput()
    tokens: List[Token] = []
    pos = 0
    while pos < len(smiles):
        m = _TOKEN_RE.match(smiles, pos)
        if m is None:
            if smiles[pos] == "[":
                raise UnterminatedBracket(pos)
            raise UnknownCharacter(smiles[pos], pos)
        tokens.append(Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    return tokens


def _bracket_atom(token: Token) -> Tuple[Atom, int]:
    """Devuelve el átomo y la cantidad de marcadores estéreo descartados."""
    m = _BRACKET_RE.match(token.text)
    if m is None:
        raise UnknownCharacter(token.text, token.position)
    symbol = m.group("symbol")
    aromatic = symbol in AROMATIC_BRACKET and symbol.islower()
    element = symbol.capitalize() if aromatic else symbol
    if element not in ATOMIC_NUMBERS:
        raise UnknownElement(symbol, token.position)

    hcount = m.group("hcount")
    explicit_h = None if hcount is None else int(hcount[1:] or 1)

    charge_text = m.group("charge") or ""
    if not charge_text:
        charge = 0
    elif len(charge_text) == 2 and charge_text[1].isdigit():
        charge = int(charge_text[1]) * (1 if charge_text[0] == "+" else -1)
    else:
        charge = len(charge_text) * (1 if charge_text[0] == "+" else -1)

    isotope = m.group("isotope")
    atom = Atom(
        element=element,
        formal_charge=charge,
        explicit_h=explicit_h,
        aromatic=aromatic,
        isotope=int(isotope) if isotope else None,
    )
    return atom, 1 if m.group("chiral") else 0


def _organic_atom(token: Token) -> Atom:
    text = token.text
    if text.islower():
        return Atom(element=text.upper(), aromatic=True)
    return Atom(element=text)


# ============================================================================
# PARSEO
# ============================================================================

def parse(tokens: Sequence[Token], source: str = "") -> MolGraph:
    """
    Construye el grafo molecular a partir de los tokens.

    El enlace por defecto entre dos átomos aromáticos es aromático; en otro caso simple.

    Raises:
        EmptyInput, DanglingBond(position), UnmatchedRingClosure(digit), UnmatchedBranch
    """
    if not tokens:
        raise EmptyInput()

    atoms: List[Atom] = []
    bonds: Dict[Tuple[int, int], Bond] = {}
    stereo = 0
    prev: Optional[int] = None
    pending: Optional[Tuple[BondOrder, int]] = None
    branches: List[Tuple[Optional[int], int]] = []
    rings: Dict[str, Tuple[int, Optional[BondOrder], int]] = {}

    def default_order(i: int, j: int) -> BondOrder:
        return BondOrder.AROMATIC if atoms[i].aromatic and atoms[j].aromatic else BondOrder.SINGLE

    def connect(i: int, j: int, order: Optional[BondOrder], position: int, digit: Optional[str] = None):
        key = (min(i, j), max(i, j))
        if i == j or key in bonds:
            if digit is not None:
                raise UnmatchedRingClosure(digit, position)
            raise DanglingBond(position)
        bonds[key] = Bond(a=i, b=j, order=order or default_order(i, j))

    for tok in tokens:
        if tok.kind in (ATOM, BRACKET):
            if tok.kind == ATOM:
                atom = _organic_atom(tok)
            else:
                atom, chiral = _bracket_atom(tok)
                stereo += chiral
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev is not None:
                connect(prev, idx, pending[0] if pending else None, tok.position)
            elif pending is not None:
                raise DanglingBond(pending[1])
            pending = None
            prev = idx
        elif tok.kind == BOND:
            if tok.text in _STEREO_BONDS:
                stereo += 1
                if prev is None:
                    raise DanglingBond(tok.position)
                continue
            if prev is None or pending is not None:
                raise DanglingBond(tok.position)
            pending = (_BOND_ORDERS[tok.text], tok.position)
        elif tok.kind == BRANCH_OPEN:
            if prev is None or pending is not None:
                raise DanglingBond(tok.position)
            branches.append((prev, tok.position))
        elif tok.kind == BRANCH_CLOSE:
            if pending is not None:
                raise DanglingBond(pending[1])
            if not branches:
                raise UnmatchedBranch(tok.position)
            prev = branches.pop()[0]
        elif tok.kind == RING:
            if prev is None:
                raise DanglingBond(tok.position)
            digit = tok.text
            order = pending[0] if pending else None
            if digit in rings:
                partner, open_order, _ = rings.pop(digit)
                connect(partner, prev, order or open_order, tok.position, digit)
            else:
                rings[digit] = (prev, order, tok.position)
            pending = None
        elif tok.kind == DOT:
            if pending is not None:
                raise DanglingBond(pending[1])
            prev = None

    if pending is not None:
        raise DanglingBond(pending[1])
    if rings:
        digit, (_, _, position) = next(iter(rings.items()))
        raise UnmatchedRingClosure(digit, position)
    if branches:
        raise UnmatchedBranch(branches[-1][1])
    if not atoms:
        raise EmptyInput()

    return MolGraph(atoms=atoms, bonds=list(bonds.values()), source=source, stereo_discarded=stereo)


def parse_smiles(smiles: str) -> MolGraph:
    """tokenize + parse"""
    return parse(tokenize(smiles), source=smiles)


# ============================================================================
# RE-SERIALIZACIÓN (no canónica)
# ============================================================================

def _atom_text(atom: Atom) -> str:
    symbol = atom.element.lower() if atom.aromatic else atom.element
    plain = (
        atom.formal_charge == 0
        and atom.explicit_h is None
        and atom.isotope is None
        and (atom.element in ORGANIC_SUBSET if not atom.aromatic else symbol in ("b", "c", "n", "o", "p", "s"))
    )
    if plain:
        return symbol
    text = "[" + (str(atom.isotope) if atom.isotope else "") + symbol
    if atom.explicit_h:
        text += "H" + (str(atom.explicit_h) if atom.explicit_h > 1 else "")
    if atom.formal_charge:
        sign = "+" if atom.formal_charge > 0 else "-"
        mag = abs(atom.formal_charge)
        text += sign + (str(mag) if mag > 1 else "")
    return text + "]"


def _bond_text(mol: MolGraph, i: int, j: int, order: BondOrder) -> str:
    both_aromatic = mol.atoms[i].aromatic and mol.atoms[j].aromatic
    if order is BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if order is BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return order.symbol


def to_smiles(mol: MolGraph) -> str:
    """SMILES no canónico por DFS; re-parsearlo da un grafo isomorfo."""
    adj = mol.adjacency()
    n = len(mol.atoms)
    position: Dict[int, int] = {}
    children: Dict[int, List[Tuple[int, BondOrder]]] = {i: [] for i in range(n)}
    ring_at: Dict[int, List[Tuple[int, BondOrder]]] = {i: [] for i in range(n)}
    ring_keys = set()
    roots: List[int] = []

    for root in range(n):
        if root in position:
            continue
        roots.append(root)
        position[root] = len(position)
        stack = [(root, None, iter(adj[root]))]
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for u, order in it:
                if u == parent:
                    continue
                key = (min(u, v), max(u, v))
                if u not in position:
                    position[u] = len(position)
                    children[v].append((u, order))
                    stack.append((u, v, iter(adj[u])))
                    advanced = True
                    break
                if key not in ring_keys:
                    ring_keys.add(key)
                    ring_at[v].append((u, order))
                    ring_at[u].append((v, order))
            if not advanced:
                stack.pop()

    digit_of: Dict[Tuple[int, int], int] = {}
    in_use: set = set()

    def fmt(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(v: int) -> str:
        out = [_atom_text(mol.atoms[v])]
        closing = [(u, o) for u, o in ring_at[v] if position[u] < position[v]]
        opening = [(u, o) for u, o in ring_at[v] if position[u] > position[v]]
        for u, _ in closing:
            d = digit_of.pop((min(u, v), max(u, v)))
            in_use.discard(d)
            out.append(fmt(d))
        for u, order in opening:
            d = next(k for k in range(1, 100) if k not in in_use)
            in_use.add(d)
            digit_of[(min(u, v), max(u, v))] = d
            out.append(_bond_text(mol, v, u, order) + fmt(d))
        kids = children[v]
        for k, (u, order) in enumerate(kids):
            segment = _bond_text(mol, v, u, order) + emit(u)
            out.append(segment if k == len(kids) - 1 else f"({segment})")
        return "".join(out)

    return ".".join(emit(r) for r in roots)


def permute_atoms(mol: MolGraph, order: Sequence[int]) -> MolGraph:
    """Misma molécula con los átomos renumerados: el átomo nuevo i es el viejo order[i]."""
    if sorted(order) != list(range(len(mol.atoms))):
        raise ValueError("order must be a permutation of the atom indices")
    new_index = {old: new for new, old in enumerate(order)}
    atoms = [mol.atoms[old] for old in order]
    bonds = [Bond(a=new_index[b.a], b=new_index[b.b], order=b.order) for b in mol.bonds]
    bonds.sort(key=lambda b: b.key)
    return MolGraph(atoms=atoms, bonds=bonds, source=mol.source, stereo_discarded=mol.stereo_discarded)


# ============================================================================
# ARCHIVOS
# ============================================================================

@dataclass(frozen=True)
class SmilesEntry:
    mol_id: str
    smiles: str
    graph: MolGraph


@dataclass(frozen=True)
class SmilesFailure:
    line_no: int
    text: str
    error: str


def read_smiles_file(path: str | Path) -> Tuple[List[SmilesEntry], List[SmilesFailure], int]:
    """
    Lee un archivo con un SMILES por línea y un id opcional separado por tab.

    Las líneas malformadas (SMILES inválido o bytes que no son UTF-8) se reportan
    con su número de línea y se omiten.

    Returns:
        (entradas válidas, fallos, líneas de datos leídas)
    """
    entries: List[SmilesEntry] = []
    failures: List[SmilesFailure] = []
    lines = 0
    stereo = 0
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.rstrip(b"\r\n").decode("utf-8")
            except UnicodeDecodeError as e:
                lines += 1
                text = raw.rstrip(b"\r\n").decode("utf-8", errors="replace")
                failures.append(SmilesFailure(line_no, text, f"invalid UTF-8 at byte {e.start}"))
                log_structured(logger, "warning", "smiles.skipped", path=str(path), line=line_no, error="invalid UTF-8")
                continue
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            lines += 1
            parts = line.split("\t")
            smiles = parts[0].strip()
            mol_id = parts[1].strip() if len(parts) > 1 and parts[1].strip() else f"mol{line_no}"
            try:
                graph = parse_smiles(smiles)
            except SmilesError as e:
                failures.append(SmilesFailure(line_no, smiles, e.message))
                log_structured(logger, "warning", "smiles.skipped", path=str(path), line=line_no, error=e.message)
                continue
            stereo += graph.stereo_discarded
            entries.append(SmilesEntry(mol_id, smiles, graph))
    if stereo:
        log_structured(logger, "info", "smiles.stereo_discarded", path=str(path), count=stereo)
    return entries, failures, lines
