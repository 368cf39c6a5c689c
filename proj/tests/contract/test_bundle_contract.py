"""Bundle import contract: a bundle written from Python with numpy must be
accepted by the command-line tool, and a one-hot symbolic bundle must pass
every test."""

import argparse
import csv
import json
import struct
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

LAYOUTS = ["horizontal", "vertical", "ring"]
SHAPES = ["rectangle", "oval", "polygon"]
STROKES = ["clean", "fuzzy"]
CLASSES = [(l, s, k) for l in LAYOUTS for s in SHAPES for k in STROKES]

CLI = None


def write_cbm(path, matrix):
    m = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"CBM1")
        f.write(struct.pack("<QQI", m.shape[0], m.shape[1], 1))
        f.write(m.tobytes(order="C"))


def one_hot(cls):
    layout, shape, stroke = cls
    v = np.zeros(8)
    v[LAYOUTS.index(layout)] = 1
    v[3 + SHAPES.index(shape)] = 1
    v[6 + STROKES.index(stroke)] = 1
    return v


def write_bundle(root, per_class, seed, noise_columns=8):
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for split in ("train", "test"):
        for _ in range(per_class):
            for cls in CLASSES:
                labels.append((len(labels), cls, split))
                rows.append(one_hot(cls))
    final = np.stack(rows)
    noisy = 0.3 * final[:, :noise_columns] + rng.standard_normal((len(rows), noise_columns))

    (root / "layers").mkdir(parents=True)
    write_cbm(root / "layers" / "noisy.cbm", noisy)
    write_cbm(root / "layers" / "final.cbm", final)
    manifest = {
        "format": "unitconcepts-bundle",
        "version": 1,
        "n_items": len(rows),
        "encoder": "numpy-one-hot",
        "dtype": "float32",
        "layers": [
            {"name": "noisy", "dim": noise_columns, "file": "layers/noisy.cbm"},
            {"name": "final", "dim": 8, "file": "layers/final.cbm"},
        ],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(root / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["item_id", "class", "layout", "shape", "stroke", "color", "split"])
        for item_id, (layout, shape, stroke), split in labels:
            w.writerow([item_id, f"{layout}-{shape}-{stroke}", layout, shape, stroke, "#000000", split])


def run_cli(*args):
    return subprocess.run([CLI, *args], capture_output=True, text=True, timeout=600)


class BundleContract(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        write_bundle(self.root / "bundle", per_class=20, seed=1)
        write_bundle(self.root / "pairs", per_class=2, seed=2)

    def tearDown(self):
        self.tmp.cleanup()

    def run_import(self, out):
        return run_cli(
            "run",
            "-q",
            "-o",
            str(out),
            f"--bundle.path={self.root / 'bundle'}",
            f"--bundle.pairs_path={self.root / 'pairs'}",
        )

    def test_cbm_header_layout(self):
        raw = (self.root / "bundle" / "layers" / "final.cbm").read_bytes()
        self.assertEqual(raw[:4], b"CBM1")
        rows, cols, dtype = struct.unpack("<QQI", raw[4:24])
        self.assertEqual((rows, cols, dtype), (2 * 20 * 18, 8, 1))
        self.assertEqual(len(raw), 24 + rows * cols * 4)

    def test_one_hot_bundle_passes_everything(self):
        out = self.root / "out"
        proc = self.run_import(out)
        self.assertEqual(proc.returncode, 0, proc.stderr)
        self.assertEqual(proc.stdout.strip(), str(out / "report.json"))
        report = json.loads((out / "report.json").read_text())
        self.assertEqual(report["grounding"][0]["result"]["verdict"], "PASS")
        tests = report["tests"]
        self.assertEqual({t["test"] for t in tests}, {"is_token_of_type", "is_modular", "is_causal"})
        for t in tests:
            self.assertEqual(t["verdict"], "PASS", (t["test"], t["mode"], t["dimension"]))
        self.assertEqual(report["encoders"], [])
        self.assertEqual([r["layer"] for r in report["layerwise"]], ["noisy", "final"])

        with open(out / "fig3.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertTrue(any(r["seed"] == "mean" for r in rows))
        self.assertEqual(json.loads((out / "config.json").read_text())["bundle"]["path"], str(self.root / "bundle"))

    def test_truncated_layer_fails_extract(self):
        path = self.root / "bundle" / "layers" / "final.cbm"
        path.write_bytes(path.read_bytes()[:-4])
        proc = self.run_import(self.root / "bad")
        self.assertEqual(proc.returncode, 1)
        self.assertIn("extract", proc.stderr)
        self.assertIn("final", proc.stderr)

    def test_unknown_override_is_a_config_error(self):
        proc = run_cli("run", "-q", "-o", str(self.root / "x"), "--bundle.nope=1")
        self.assertEqual(proc.returncode, 2)


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--cli", required=True)
    args, rest = parser.parse_known_args()
    CLI = args.cli
    unittest.main(argv=[sys.argv[0], *rest])
