"""Regenerate the bundled fragment geometries and manifests.

Requires RDKit, which is only needed here; the package itself reads the
XYZ files this script writes.  Run from the repository root:

    python scripts/build_fragments.py
"""
from pathlib import Path

from rdkit import Chem
from rdkit.Chem import AllChem

DATA = Path(__file__).resolve().parents[1] / "src" / "fragforge" / "data"

FRAGMENTS = {
    "methane": "C",
    "ammonia": "N",
    "water": "O",
    "propane": "CCC",
    "methylamine": "CN",
    "cyclopropane": "C1CC1",
    "propanamide": "CCC(N)=O",
    "acetamide": "CC(N)=O",
    "methylthiazole": "Cc1cscn1",
    "methylimidazole": "Cn1ccnc1",
    "morpholine": "C1COCCN1",
    "pyrimidine": "c1cncnc1",
    "pyrazine": "c1cnccn1",
    "pyridine": "c1ccncc1",
    "benzene": "c1ccccc1",
    "toluene": "Cc1ccccc1",
    "acetanilide": "CC(=O)Nc1ccccc1",
    "methylpiperazine": "CN1CCNCC1",
    "quinoxaline": "c1ccc2nccnc2c1",
    "phthalonitrile": "N#Cc1ccccc1C#N",
    "benzofuran": "c1ccc2occc2c1",
    "carbazole": "c1ccc2c(c1)[nH]c1ccccc12",
    "dimethylacridan": "CC1(C)c2ccccc2Nc2ccccc21",
    "glutamate": "N[C@@H](CCC(=O)O)C(=O)O",
    "asparagine": "N[C@@H](CC(N)=O)C(=O)O",
    "serine": "N[C@@H](CO)C(=O)O",
    "valine": "CC(C)[C@H](N)C(=O)O",
    "histidine": "N[C@@H](Cc1cnc[nH]1)C(=O)O",
    "leucine": "CC(C)C[C@H](N)C(=O)O",
    "tryptophan": "N[C@@H](Cc1c[nH]c2ccccc12)C(=O)O",
    "arginine": "N[C@@H](CCCNC(=N)N)C(=O)O",
    "aspartate": "N[C@@H](CC(=O)O)C(=O)O",
    "pyrrolysine": "C[C@@H]1CC=N[C@H]1C(=O)NCCCC[C@H](N)C(=O)O",
}

# (name, table formula, table atoms, table heavy, [(fragment, count), ...])
MULTISETS = [
    ("drug1", "C14H22N4OS", 42, 20,
     [("methylimidazole", 1), ("methylthiazole", 1), ("cyclopropane", 1), ("propanamide", 1)]),
    ("drug2", "C16H27N5O2", 50, 23,
     [("morpholine", 1), ("acetamide", 1), ("methane", 2), ("pyrimidine", 1),
      ("methylamine", 1), ("propane", 1)]),
    ("drug3", "C29H31N7O", 68, 37,
     [("acetanilide", 1), ("methylpiperazine", 1), ("pyrimidine", 1), ("pyridine", 1),
      ("benzene", 1), ("methane", 1), ("ammonia", 1)]),
    ("oled1", "C34H23N5", 62, 39,
     [("quinoxaline", 2), ("benzene", 3), ("ammonia", 1)]),
    ("oled2", "C49H28N4O", 82, 54,
     [("phthalonitrile", 2), ("benzene", 3), ("benzofuran", 1), ("toluene", 1)]),
    ("oled3", "C67H50N6", 123, 73,
     [("pyrazine", 2), ("benzene", 3), ("toluene", 2), ("dimethylacridan", 1), ("carbazole", 1)]),
    ("bio1", "C20H38N6O4", 69, 34,
     [("glutamate", 1), ("asparagine", 1), ("serine", 1), ("valine", 1)]),
    ("bio2", "C27H44N10O6", 122, 57,
     [("histidine", 1), ("glutamate", 1), ("leucine", 2), ("pyrrolysine", 1)]),
    ("bio3", "C46H66N12O9", 130, 63,
     [("tryptophan", 1), ("pyrrolysine", 1), ("arginine", 1), ("leucine", 1), ("aspartate", 1)]),
    ("toy", None, None, None,
     [("methane", 1), ("ammonia", 1), ("water", 1)]),
]


def embed(smiles, seed=0xF00D):
    mol = Chem.AddHs(Chem.MolFromSmiles(smiles))
    params = AllChem.ETKDGv3()
    params.randomSeed = seed
    if AllChem.EmbedMolecule(mol, params) != 0:
        raise RuntimeError(f"embedding failed for {smiles}")
    if mol.GetNumAtoms() > 1:
        AllChem.MMFFOptimizeMolecule(mol, maxIters=2000)
    return mol


def to_xyz(mol, comment):
    conf = mol.GetConformer()
    lines = [str(mol.GetNumAtoms()), comment]
    for atom in mol.GetAtoms():
        p = conf.GetAtomPosition(atom.GetIdx())
        lines.append(f"{atom.GetSymbol()} {p.x:.6f} {p.y:.6f} {p.z:.6f}")
    return "\n".join(lines) + "\n"


def main():
    frag_dir = DATA / "fragments"
    frag_dir.mkdir(parents=True, exist_ok=True)
    for name, smiles in FRAGMENTS.items():
        mol = embed(smiles)
        (frag_dir / f"{name}.xyz").write_text(to_xyz(mol, f"{name} {smiles}"))
    man_dir = DATA / "manifests"
    man_dir.mkdir(parents=True, exist_ok=True)
    for name, formula, atoms, heavy, entries in MULTISETS:
        out = [f"name: {name}"]
        if formula is not None:
            out += ["reference:", f"  formula: {formula}", f"  atoms: {atoms}", f"  heavy_atoms: {heavy}"]
        out.append("fragments:")
        for frag, count in entries:
            out += [f"  - id: {frag}", f"    path: ../fragments/{frag}.xyz", f"    count: {count}"]
        (man_dir / f"{name}.yaml").write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
