"""Reference SMILES-subset parser, circular fingerprint and selection filter.

Written separately from the C++ code so the two can be compared; the
expected results under tests/data are generated from this file.
"""

import re
import struct

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK = (1 << 64) - 1

VALENCE = {"H": 1, "C": 4, "N": 3, "O": 2}
NUMBER = {"H": 1, "C": 6, "N": 7, "O": 8}
ORDER = {"-": 1, "=": 2, "#": 3}
AROMATIC = 4

TOKEN = re.compile(r"\[[^\]]*\]|Cl|Br|[A-Za-z]|[0-9]|[-=#().]|.")
BRACKET = re.compile(r"^\[([CNOHcno])(H([0-9]?))?\]$")


class ParseError(Exception):
    def __init__(self, kind, position):
        super().__init__(f"{kind} at {position}")
        self.kind = kind
        self.position = position


def fnv1a(data, h=FNV_OFFSET):
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK
    return h


def parse(smiles):
    """Returns (atoms, bonds); atom = dict(z, aromatic, h, ring), bond = (i, j, order)."""
    atoms, bonds, where = [], [], []
    prev, bond, stack, rings = None, None, [], {}
    last_open = False
    pos = 0
    for m in TOKEN.finditer(smiles):
        tok, pos = m.group(0), m.start()
        if tok[0] == "[" or tok in ("C", "N", "O", "c", "n", "o"):
            if tok[0] == "[":
                b = BRACKET.match(tok)
                if not b:
                    inner = tok[1:2]
                    kind = "unsupported_element" if inner.isalpha() and inner not in "CNOHcno" else "syntax"
                    raise ParseError(kind, pos)
                sym = b.group(1)
                h = 0 if not b.group(2) else int(b.group(3) or 1)
                atom = {"z": NUMBER[sym.upper()], "aromatic": sym.islower(), "bracket": True, "h": h}
            else:
                atom = {"z": NUMBER[tok.upper()], "aromatic": tok.islower(), "bracket": False, "h": None}
            atoms.append(atom)
            where.append(pos)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(atoms, bonds, prev, idx, bond, pos)
            elif bond is not None:
                raise ParseError("syntax", pos)
            prev, bond, last_open = idx, None, False
        elif tok in ORDER:
            if prev is None or bond is not None:
                raise ParseError("syntax", pos)
            bond = ORDER[tok]
        elif tok == "(":
            if prev is None or bond is not None:
                raise ParseError("syntax", pos)
            stack.append(prev)
            last_open = True
        elif tok == ")":
            if not stack:
                raise ParseError("unbalanced_branch", pos)
            if bond is not None or last_open:
                raise ParseError("syntax", pos)
            prev = stack.pop()
        elif tok == ".":
            if prev is None or bond is not None:
                raise ParseError("syntax", pos)
            if stack:
                raise ParseError("unbalanced_branch", pos)
            prev = None
        elif tok.isdigit():
            if tok == "0":
                raise ParseError("ring_closure", pos)
            if prev is None:
                raise ParseError("syntax", pos)
            if tok in rings:
                other, order = rings.pop(tok)
                if other == prev:
                    raise ParseError("ring_closure", pos)
                if order is not None and bond is not None and order != bond:
                    raise ParseError("ring_closure", pos)
                add_bond(atoms, bonds, other, prev, order if order is not None else bond, pos)
            else:
                rings[tok] = (prev, bond)
            bond = None
        elif tok.isalpha():
            raise ParseError("unsupported_element", pos)
        else:
            raise ParseError("syntax", pos)
    if stack:
        raise ParseError("unbalanced_branch", -1)
    if bond is not None:
        raise ParseError("syntax", -1)
    if rings:
        raise ParseError("ring_closure", -1)
    if not atoms:
        raise ParseError("syntax", 0)

    used = [0] * len(atoms)
    for i, j, order in bonds:
        used[i] += 1 if order == AROMATIC else order
        used[j] += 1 if order == AROMATIC else order
    for k, a in enumerate(atoms):
        v = [v for s, v in VALENCE.items() if NUMBER[s] == a["z"]][0]
        if a["bracket"]:
            if used[k] + a["h"] > v:
                raise ParseError("valence", where[k])
        else:
            if used[k] > v:
                raise ParseError("valence", where[k])
            a["h"] = max(0, v - used[k] - (1 if a["aromatic"] else 0))
    for a in atoms:
        a["ring"] = False
    for k, (i, j, _) in enumerate(bonds):
        rest = [b for n, b in enumerate(bonds) if n != k]
        if reachable(len(atoms), rest, i, j):
            atoms[i]["ring"] = atoms[j]["ring"] = True
    return atoms, bonds


def add_bond(atoms, bonds, a, b, order, pos):
    if any({i, j} == {a, b} for i, j, _ in bonds):
        raise ParseError("ring_closure", pos)
    if order is None:
        order = AROMATIC if atoms[a]["aromatic"] and atoms[b]["aromatic"] else 1
    bonds.append((a, b, order))


def reachable(n, bonds, src, dst):
    seen, todo = {src}, [src]
    while todo:
        u = todo.pop()
        for i, j, _ in bonds:
            for x, y in ((i, j), (j, i)):
                if x == u and y not in seen:
                    seen.add(y)
                    todo.append(y)
    return dst in seen


def components(n, bonds):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for i, j, _ in bonds:
        parent[find(i)] = find(j)
    return len({find(x) for x in range(n)})


def fingerprint(mol, radius=2, nbits=2048):
    atoms, bonds = mol
    nbr = [[] for _ in atoms]
    for i, j, order in bonds:
        nbr[i].append((order, j))
        nbr[j].append((order, i))
    bits = set()
    codes = []
    for k, a in enumerate(atoms):
        h = a["h"] + sum(1 for _, j in nbr[k] if atoms[j]["z"] == 1)
        data = struct.pack("<5I", a["z"], len(nbr[k]), h, int(a["ring"]), int(a["aromatic"]))
        codes.append(fnv1a(data))
    bits.update(c % nbits for c in codes)
    for r in range(1, radius + 1):
        new = []
        for k in range(len(atoms)):
            env = sorted((order, codes[j]) for order, j in nbr[k])
            data = struct.pack("<IQI", r, codes[k], len(env))
            for order, c in env:
                data += struct.pack("<IQ", order, c)
            new.append(fnv1a(data))
        codes = new
        bits.update(c % nbits for c in codes)
    return frozenset(bits)


def tanimoto(a, b):
    union = len(a | b)
    return 0.0 if union == 0 else len(a & b) / union


def heavy(mol):
    return sum(1 for a in mol[0] if a["z"] > 1)


def count(mol, z):
    return sum(1 for a in mol[0] if a["z"] == z)


def select(seeds, pool, cap, lower=0.875, upper=0.925, nbits=2048):
    """Returns a list of (pool_index, 'accept', seed_index, similarity) or (pool_index, 'reject', criterion)."""
    seed_mols = [parse(s) for s in seeds]
    seed_fps = [fingerprint(m, nbits=nbits) for m in seed_mols]
    accepted, out = [], []
    for k, smi in enumerate(pool):
        try:
            mol = parse(smi)
        except ParseError as e:
            out.append((k, "reject", 3 if e.kind == "unsupported_element" else 1))
            continue
        if count(mol, 8) > 5:
            out.append((k, "reject", 4))
            continue
        if count(mol, 7) > 3:
            out.append((k, "reject", 5))
            continue
        if components(len(mol[0]), mol[1]) != 1:
            out.append((k, "reject", 6))
            continue
        fp = fingerprint(mol, nbits=nbits)
        best, best_sim = None, -1.0
        for s, sfp in enumerate(seed_fps):
            sim = tanimoto(fp, sfp)
            if lower < sim < upper and sim > best_sim:
                best, best_sim = s, sim
        if best is None:
            out.append((k, "reject", 7))
            continue
        if heavy(mol) > heavy(seed_mols[best]):
            out.append((k, "reject", 2))
            continue
        if any(tanimoto(fp, a) > cap for a in accepted):
            out.append((k, "reject", 8))
            continue
        accepted.append(fp)
        out.append((k, "accept", best, best_sim))
    return out
