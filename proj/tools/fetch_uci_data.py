#!/usr/bin/env python3
"""Fetch the small UCI regression datasets into data/uci/ as plain CSV.

Each dataset is tried from the UCI archive first. When the archive is not
reachable, Boston Housing and Concrete Strength fall back to copies that ship
inside PyPI wheels (scikit-learn 1.1.3 and rdatasets). Energy Efficiency and
Yacht Hydrodynamics have no packaged fallback; place them by hand if the
archive is unreachable (see README.md for the expected layout).

Usage: tools/fetch_uci_data.py [--out data/uci]
"""

import argparse
import csv
import io
import lzma
import pickle
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"

BOSTON_COLUMNS = ["CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS",
                  "RAD", "TAX", "PTRATIO", "B", "LSTAT", "MEDV"]
ENERGY_COLUMNS = ["X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8", "Y1", "Y2"]
YACHT_COLUMNS = ["LC", "PC", "LDR", "BDR", "LBR", "FN", "RR"]
CONCRETE_COLUMNS = ["cement", "blast_furnace_slag", "fly_ash", "water",
                    "superplasticizer", "coarse_aggregate", "fine_aggregate",
                    "age", "compressive_strength"]


def fetch(url, timeout=15):
    with urllib.request.urlopen(url, timeout=timeout) as r:
        return r.read()


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in row])
    print(f"wrote {path} ({len(rows)} rows)")


def pip_wheel(spec, workdir):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                    spec, "-d", str(workdir)], check=True)
    wheels = sorted(Path(workdir).glob("*.whl"))
    if not wheels:
        raise RuntimeError(f"no wheel for {spec}")
    return zipfile.ZipFile(wheels[-1])


def boston(out):
    try:
        text = fetch(f"{UCI}/housing/housing.data").decode()
        rows = [line.split() for line in text.splitlines() if line.strip()]
    except Exception as e:
        print(f"boston: archive unavailable ({e}); using scikit-learn 1.1.3 wheel")
        with tempfile.TemporaryDirectory() as d:
            z = pip_wheel("scikit-learn==1.1.3", d)
            text = z.read("sklearn/datasets/data/boston_house_prices.csv").decode()
        lines = text.splitlines()[2:]  # count line, then header
        rows = [line.split(",") for line in lines if line.strip()]
    write_csv(out / "boston.csv", BOSTON_COLUMNS, rows)


def concrete(out):
    try:
        import pandas as pd
        raw = fetch(f"{UCI}/concrete/compressive/Concrete_Data.xls")
        df = pd.read_excel(io.BytesIO(raw))
        rows = df.values.tolist()
    except Exception as e:
        print(f"concrete: archive unavailable ({e}); using rdatasets wheel")
        with tempfile.TemporaryDirectory() as d:
            z = pip_wheel("rdatasets==0.2.10", d)
            blob = z.read("rdatasets/_data/modeldata/concrete.pkl.compress")
        df = pickle.loads(lzma.decompress(blob))
        rows = df[CONCRETE_COLUMNS].values.tolist()
    write_csv(out / "concrete.csv", CONCRETE_COLUMNS, rows)


def energy(out):
    import pandas as pd
    raw = fetch(f"{UCI}/00242/ENB2012_data.xlsx")
    df = pd.read_excel(io.BytesIO(raw)).dropna(how="all")
    write_csv(out / "energy.csv", ENERGY_COLUMNS, df.iloc[:, :10].values.tolist())


def yacht(out):
    text = fetch(f"{UCI}/00243/yacht_hydrodynamics.data").decode()
    rows = [line.split() for line in text.splitlines() if line.strip()]
    write_csv(out / "yacht.csv", YACHT_COLUMNS, rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "uci"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = []
    for name, fn in [("boston", boston), ("concrete", concrete),
                     ("energy", energy), ("yacht", yacht)]:
        try:
            fn(out)
        except Exception as e:
            print(f"{name}: not fetched ({e})", file=sys.stderr)
            failed.append(name)
    if failed:
        print("missing: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
