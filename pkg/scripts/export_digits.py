"""Export scikit-learn's handwritten digits to the CSV layout tailbench reads.

Output: header ``p0,...,p63,label`` then one row per image (1797 rows),
pixel intensities 0..16 and the class label 0..9 in the last column.

    python3 scripts/export_digits.py digits.csv
"""
import argparse
import csv

from sklearn.datasets import load_digits


def export(path):
    data = load_digits()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"p{j}" for j in range(data.data.shape[1])] + ["label"])
        for row, label in zip(data.data, data.target):
            w.writerow([int(v) for v in row] + [int(label)])
    return data.data.shape


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path", nargs="?", default="digits.csv")
    shape = export(ap.parse_args().path)
    print(f"wrote {shape[0]} rows x {shape[1]} features")
