#!/usr/bin/env python3
"""Regenerate the benchmark CSVs under data/ from locally available sources.

diabetes.csv  scikit-learn's bundled raw diabetes table (442 x 10, target y)
boston.csv    ISLP's Boston table (506 x 12, target medv); pass --islp-wheel
              or have the ISLP package installed
abalone.csv   UCI abalone table (4177 x 7 numeric features, target rings),
              read from scikit-lego's bundled copy (--sklego-wheel or the
              installed package) or a raw abalone.data file (--abalone-data);
              the categorical sex column is dropped
"""
import argparse
import csv
import gzip
import io
import os
import zipfile


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def diabetes(out_dir):
    import sklearn

    base = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "data")
    with gzip.open(os.path.join(base, "diabetes_data_raw.csv.gz"), "rt") as fh:
        xs = [line.split() for line in fh if line.strip()]
    with gzip.open(os.path.join(base, "diabetes_target.csv.gz"), "rt") as fh:
        ys = [repr(float(line)) for line in fh if line.strip()]
    header = ["age", "sex", "bmi", "bp", "s1", "s2", "s3", "s4", "s5", "s6", "y"]
    write_csv(os.path.join(out_dir, "diabetes.csv"), header, [x + [y] for x, y in zip(xs, ys)])


def boston(out_dir, wheel):
    if wheel:
        text = zipfile.ZipFile(wheel).read("ISLP/data/Boston.csv").decode()
    else:
        import ISLP

        with open(os.path.join(os.path.dirname(ISLP.__file__), "data", "Boston.csv")) as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    write_csv(os.path.join(out_dir, "boston.csv"), rows[0], rows[1:])


ABALONE_HEADER = ["length", "diameter", "height", "whole", "shucked", "viscera", "shell", "rings"]


def abalone_raw(out_dir, path):
    with open(path) as fh:
        rows = [line.strip().split(",")[1:] for line in fh if line.strip()]
    write_csv(os.path.join(out_dir, "abalone.csv"), ABALONE_HEADER, rows)


def abalone_sklego(out_dir, wheel):
    if wheel:
        blob = zipfile.ZipFile(wheel).read("sklego/data/abalone.zip")
    else:
        import sklego

        with open(os.path.join(os.path.dirname(sklego.__file__), "data", "abalone.zip"), "rb") as fh:
            blob = fh.read()
    inner = zipfile.ZipFile(io.BytesIO(blob))
    text = inner.read(inner.namelist()[0]).decode()
    rows = list(csv.reader(io.StringIO(text)))
    # drop the header and the leading sex column
    write_csv(os.path.join(out_dir, "abalone.csv"), ABALONE_HEADER, [r[1:] for r in rows[1:] if r])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    ap.add_argument("--islp-wheel")
    ap.add_argument("--abalone-data")
    ap.add_argument("--sklego-wheel")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    diabetes(args.out)
    boston(args.out, args.islp_wheel)
    if args.abalone_data:
        abalone_raw(args.out, args.abalone_data)
    else:
        abalone_sklego(args.out, args.sklego_wheel)


if __name__ == "__main__":
    main()
