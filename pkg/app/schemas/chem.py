from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

# Tabla periódica: símbolo -> número atómico
_SYMBOLS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBERS: Dict[str, int] = {sym: i + 1 for i, sym in enumerate(_SYMBOLS)}

# Subconjunto orgánico (sin corchetes) y aromáticos admitidos
ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("b", "c", "n", "o", "p", "s", "se", "as")


class BondOrder(str, Enum):
    """Orden de enlace"""
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"

    @property
    def code(self) -> int:
        return _BOND_CODES[self]

    @property
    def symbol(self) -> str:
        return _BOND_SYMBOLS[self]


_BOND_CODES = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2, BondOrder.TRIPLE: 3, BondOrder.AROMATIC: 4}
_BOND_SYMBOLS = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}


class Atom(BaseModel):
    """Átomo de un grafo molecular"""
    model_config = ConfigDict(frozen=True)

    element: str = Field(..., description="Símbolo del elemento con mayúscula inicial (C, Cl, ...)")
    formal_charge: int = Field(default=0, ge=-9, le=9, description="Carga formal")
    explicit_h: Optional[int] = Field(default=None, ge=0, description="Hidrógenos escritos entre corchetes")
    aromatic: bool = Field(default=False, description="Escrito en minúscula")
    isotope: Optional[int] = Field(default=None, gt=0, description="Isótopo, si se indicó")

    @field_validator("element")
    @classmethod
    def _known_element(cls, v: str) -> str:
        if v not in ATOMIC_NUMBERS:
            raise ValueError(f"unknown element {v!r}")
        return v

    @model_validator(mode="after")
    def _aromatic_symbols(self) -> "Atom":
        if self.aromatic and self.element.lower() not in AROMATIC_BRACKET:
            raise ValueError(f"element {self.element!r} cannot be aromatic")
        return self

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBERS[self.element]


class Bond(BaseModel):
    """Enlace no dirigido entre dos átomos"""
    model_config = ConfigDict(frozen=True)

    a: int = Field(..., ge=0)
    b: int = Field(..., ge=0)
    order: BondOrder = BondOrder.SINGLE

    @model_validator(mode="after")
    def _distinct_ends(self) -> "Bond":
        if self.a == self.b:
            raise ValueError("bond endpoints must differ")
        return self

    @property
    def key(self) -> Tuple[int, int]:
        return (min(self.a, self.b), max(self.a, self.b))


class MolGraph(BaseModel):
    """
    Grafo molecular validado.
    Se admiten moléculas multi-fragmento (separadas por punto).
    """
    atoms: List[Atom]
    bonds: List[Bond] = Field(default_factory=list)
    source: str = ""
    stereo_discarded: int = Field(default=0, ge=0, description="Marcadores / \\ @ descartados")

    _adjacency: Optional[List[List[Tuple[int, BondOrder]]]] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_bonds(self) -> "MolGraph":
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if bond.a >= n or bond.b >= n:
                raise ValueError(f"bond {bond.a}-{bond.b} references a missing atom (n={n})")
            if bond.key in seen:
                raise ValueError(f"duplicate bond {bond.key}")
            seen.add(bond.key)
        return self

    def adjacency(self) -> List[List[Tuple[int, BondOrder]]]:
        if self._adjacency is None:
            adj: List[List[Tuple[int, BondOrder]]] = [[] for _ in self.atoms]
            for bond in self.bonds:
                adj[bond.a].append((bond.b, bond.order))
                adj[bond.b].append((bond.a, bond.order))
            self._adjacency = adj
        return self._adjacency

    def degree(self, i: int) -> int:
        return len(self.adjacency()[i])

    def neighbors(self, i: int) -> List[int]:
        return [j for j, _ in self.adjacency()[i]]

    def component_count(self) -> int:
        adj = self.adjacency()
        seen = [False] * len(self.atoms)
        count = 0
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                v = stack.pop()
                for u, _ in adj[v]:
                    if not seen[u]:
                        seen[u] = True
                        stack.append(u)
        return count

    def cycle_rank(self) -> int:
        return len(self.bonds) - len(self.atoms) + self.component_count()
