"""Materialize the benchmark CSV files under ``data/``.

The UCI files are not reachable from the build sandbox, so they are taken from
wheels on the Python package index that bundle them:

* ``keel-ds``   -> iris (150x4), wisconsin breast cancer (683x9), spambase (4597x57)
* ``mnist-dnn`` -> MNIST as CSV; the first 10 000 training rows and the first
  2 000 test rows are kept (12 000 rows, 784 pixel columns).

Usage::

    python scripts/fetch_data.py [--out data]
"""

from __future__ import annotations

import argparse
import csv
import gzip
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

KEEL = {
    "iris": ("keel_ds/data/balanced/raw/iris.dat", 4),
    "wisconsin": ("keel_ds/data/balanced/raw/wisconsin.dat", 9),
    "spambase": ("keel_ds/data/balanced/raw/spambase.dat", 57),
}
MNIST_TRAIN_ROWS = 10_000
MNIST_TEST_ROWS = 2_000


def _download(package: str, dest: Path) -> Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", package, "-d", str(dest)],
        check=True,
    )
    wheels = sorted(dest.glob(package.replace("-", "_") + "-*.whl"))
    if not wheels:
        raise FileNotFoundError(f"no wheel downloaded for {package}")
    return wheels[-1]


def _write_keel(wheel: Path, out: Path) -> None:
    with zipfile.ZipFile(wheel) as zf:
        for name, (member, n_features) in KEEL.items():
            text = zf.read(member).decode("utf-8")
            header = [f"x{i}" for i in range(n_features)] + ["class"]
            path = out / f"{name}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for line in text.splitlines():
                    if not line.strip() or line.startswith("@"):
                        continue
                    writer.writerow([cell.strip() for cell in line.split(",")])
            print(f"wrote {path}")


def _write_mnist(wheel: Path, out: Path) -> None:
    path = out / "mnist_12k.csv.gz"
    with zipfile.ZipFile(wheel) as zf, gzip.open(path, "wt", newline="") as dst:
        for member, limit, write_header in (
            ("mnist_dnn/data/mnist_train.csv", MNIST_TRAIN_ROWS, True),
            ("mnist_dnn/data/mnist_test.csv", MNIST_TEST_ROWS, False),
        ):
            with zf.open(member) as raw:
                reader = io.TextIOWrapper(raw, encoding="utf-8")
                header = reader.readline()
                if write_header:
                    # pixels first, label last
                    cols = header.strip().split(",")
                    dst.write(",".join(cols[1:] + ["label"]) + "\n")
                for i, line in enumerate(reader):
                    if i >= limit:
                        break
                    cells = line.strip().split(",")
                    dst.write(",".join(cells[1:] + [cells[0]]) + "\n")
    print(f"wrote {path}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data"))
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        _write_keel(_download("keel-ds", Path(tmp)), out)
        _write_mnist(_download("mnist-dnn", Path(tmp)), out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
