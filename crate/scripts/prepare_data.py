#!/usr/bin/env python3
"""Regenerate the files under data/ from locally available package caches.

Sources:
  breast-cancer, wine   scikit-learn bundled copies of the UCI files
  COMPAS                ProPublica compas-scores-two-years.csv (as bundled in the
                        `responsibly` wheel); personal-name and birth-date columns
                        are dropped before writing
  MNIST                 original IDX files (as bundled in the `mnist-data` npm
                        package), gzip-compressed

Usage: scripts/prepare_data.py <responsibly.whl> <mnist-data package dir>
"""
import csv
import gzip
import io
import json
import os
import sys
import zipfile

import sklearn
from sklearn.datasets import load_breast_cancer, load_wine

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def write_sklearn(name, bunch, label):
    path = os.path.join(ROOT, f"{name}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        names = [n.replace(" ", "_") for n in bunch.feature_names]
        w.writerow(names + [label])
        for row, y in zip(bunch.data, bunch.target):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def write_compas(wheel):
    raw = zipfile.ZipFile(wheel).read("responsibly/dataset/compas/compas-scores-two-years.csv")
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"))))
    drop = {"name", "first", "last", "dob"}
    keep = [i for i, h in enumerate(rows[0]) if h not in drop]
    with open(os.path.join(ROOT, "compas-scores-two-years.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        for r in rows:
            w.writerow([r[i] for i in keep])


def write_mnist(pkg):
    os.makedirs(os.path.join(ROOT, "mnist"), exist_ok=True)
    for f in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte",
              "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]:
        with open(os.path.join(pkg, "data", f), "rb") as src:
            data = src.read()
        with gzip.GzipFile(os.path.join(ROOT, "mnist", f + ".gz"), "wb", mtime=0) as dst:
            dst.write(data)


def main():
    os.makedirs(ROOT, exist_ok=True)
    write_sklearn("breast-cancer", load_breast_cancer(), "benign")
    write_sklearn("wine", load_wine(), "cultivar")
    if len(sys.argv) > 1:
        write_compas(sys.argv[1])
    if len(sys.argv) > 2:
        write_mnist(sys.argv[2])
    manifest = [
        {"name": "breast-cancer", "path": "breast-cancer.csv", "label_column": "benign",
         "task": "uci", "url": "https://archive.ics.uci.edu/dataset/17",
         "source": f"scikit-learn {sklearn.__version__} bundled copy"},
        {"name": "wine", "path": "wine.csv", "label_column": "cultivar",
         "task": "uci", "url": "https://archive.ics.uci.edu/dataset/109",
         "source": f"scikit-learn {sklearn.__version__} bundled copy"},
        {"name": "compas", "path": "compas-scores-two-years.csv", "label_column": "score_text",
         "task": "compas", "url": "https://github.com/propublica/compas-analysis",
         "source": "compas-scores-two-years.csv, identifying columns removed"},
        {"name": "mnist", "path": "mnist", "label_column": "",
         "task": "mnist", "url": "http://yann.lecun.com/exdb/mnist/",
         "source": "original IDX files, gzip-compressed"},
    ]
    with open(os.path.join(ROOT, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
