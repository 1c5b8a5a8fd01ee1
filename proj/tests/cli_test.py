"""End-to-end checks of the clipot command line, including embedding files
written and read from Python independently of the C++ codec.

usage: python3 cli_test.py <path-to-clipot>
"""

import os
import struct
import subprocess
import sys
import tempfile
import unittest

import numpy as np

CLI = None

FLAG_LABELS = 1
FLAG_PROTOTYPES = 2


def write_oteb(path, items, prototypes=None, labels=None, classes=0):
    """items: (n, d); prototypes: (M, K, d); labels: (n,)."""
    items = np.asarray(items, dtype="<f4")
    n, d = items.shape
    flags = 0
    m = 0
    if prototypes is not None:
        prototypes = np.asarray(prototypes, dtype="<f4")
        m, classes, _ = prototypes.shape
        flags |= FLAG_PROTOTYPES
    if labels is not None:
        flags |= FLAG_LABELS
    with open(path, "wb") as f:
        f.write(b"OTEB")
        f.write(struct.pack("<6I", 1, d, n, classes, m, flags))
        if prototypes is not None:
            f.write(prototypes.tobytes(order="C"))
        f.write(items.tobytes(order="C"))
        if labels is not None:
            f.write(np.asarray(labels, dtype="<i4").tobytes())


def read_oteb(path):
    raw = slurp(path)
    assert raw[:4] == b"OTEB"
    version, d, n, k, m, flags = struct.unpack_from("<6I", raw, 4)
    offset = 28
    protos = None
    if flags & FLAG_PROTOTYPES:
        protos = np.frombuffer(raw, "<f4", m * k * d, offset).reshape(m, k, d)
        offset += 4 * m * k * d
    items = np.frombuffer(raw, "<f4", n * d, offset).reshape(n, d)
    offset += 4 * n * d
    labels = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(raw, "<i4", n, offset)
        offset += 4 * n
    assert offset == len(raw), "trailing bytes"
    return dict(version=version, d=d, n=n, K=k, M=m, flags=flags, prototypes=protos,
                items=items, labels=labels)


def slurp(path, mode="rb"):
    with open(path, mode) as f:
        return f.read()


def run(*args):
    return subprocess.run([CLI, *args], capture_output=True, text=True)


def summary(stdout):
    line = stdout.strip().splitlines()[-1]
    return dict(pair.split("=", 1) for pair in line.split())


def unit(x, axis=-1):
    return x / np.linalg.norm(x, axis=axis, keepdims=True)


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_adapt_with_default_hyperparameters(self):
        r = run("adapt", "--variant", "clip_ot", "--epsilon", "0.7", "--sinkhorn-iters", "3",
                "--lr", "1e-4", "--batch-size", "128", "--seed", "1", "--synthetic", "default")
        self.assertEqual(r.returncode, 0, r.stderr)
        s = summary(r.stdout)
        self.assertIn("accuracy", s)
        self.assertTrue(0 <= float(s["accuracy"]) <= 100)
        self.assertEqual(s["batches"], "20")
        self.assertEqual(len(r.stdout.strip().splitlines()), 1)
        # Same argv, same summary line.
        again = run("adapt", "--variant", "clip_ot", "--epsilon", "0.7", "--sinkhorn-iters", "3",
                    "--lr", "1e-4", "--batch-size", "128", "--seed", "1", "--synthetic", "default")
        self.assertEqual(r.stdout, again.stdout)

    def test_usage_errors_exit_1(self):
        for argv in (["adapt", "--epsilon", "-1"],
                     ["adapt", "--sinkhorn-iters", "0"],
                     ["adapt", "--tau", "0"],
                     ["adapt", "--no-such-flag"],
                     ["adapt", "--variant", "clip"],
                     ["sweep", "--epsilons", "0.7,x"],
                     ["sweep", "--templates", "9"],
                     ["frobnicate"],
                     []):
            with self.subTest(argv=argv):
                r = run(*argv)
                self.assertEqual(r.returncode, 1, r.stderr)
                self.assertEqual(r.stdout, "")
                self.assertIn("Usage", r.stderr)

    def test_runtime_errors_exit_2(self):
        r = run("inspect", self.path("missing.oteb"))
        self.assertEqual(r.returncode, 2)
        r = run("adapt", "--epsilon", "0.05", "--stabilization", "plain", "--batches", "1")
        self.assertEqual(r.returncode, 2)
        self.assertIn("NonFiniteKernel", r.stderr)
        r = run("adapt", "--epsilon", "0.05", "--stabilization", "log_domain", "--batches", "1")
        self.assertEqual(r.returncode, 0, r.stderr)

    def test_inspect_python_written_file(self):
        path = self.path("tiny.oteb")
        write_oteb(path, [[1.0, 2.0]])
        self.assertEqual(os.path.getsize(path), 36)
        r = run("inspect", path)
        self.assertEqual(r.returncode, 0, r.stderr)
        s = summary(r.stdout)
        self.assertEqual((s["d"], s["n"], s["K"], s["M"], s["flags"]), ("2", "1", "0", "0", "0"))

    def test_truncated_file_names_block(self):
        path = self.path("cut.oteb")
        rng = np.random.default_rng(0)
        write_oteb(path, rng.normal(size=(5, 4)), rng.normal(size=(2, 3, 4)), [0, 1, 2, 0, 1])
        data = slurp(path)
        with open(path, "wb") as f:
            f.write(data[:-3])
        r = run("inspect", path)
        self.assertEqual(r.returncode, 2)
        self.assertIn("labels", r.stderr)

    def test_python_file_zero_shot_matches_numpy(self):
        rng = np.random.default_rng(7)
        d, k, m, n = 16, 5, 3, 300
        directions = unit(rng.normal(size=(k, d)))
        protos = unit(directions[None] + 0.3 * rng.normal(size=(m, k, d)))
        labels = rng.integers(0, k, size=n)
        items = unit(directions[labels] + 0.35 * rng.normal(size=(n, d)))
        path = self.path("real.oteb")
        write_oteb(path, items, protos, labels)

        # Independent zero-shot: normalize, average, renormalize, argmax.
        p32 = protos.astype(np.float32).astype(np.float64)
        avg = unit(unit(p32).mean(axis=0))
        pred = np.argmax(items.astype(np.float32).astype(np.float64) @ avg.T, axis=1)
        expected = 100.0 * np.mean(pred == labels)

        r = run("adapt", "--input", path, "--variant", "zero_shot", "--batch-size", "64")
        self.assertEqual(r.returncode, 0, r.stderr)
        s = summary(r.stdout)
        self.assertAlmostEqual(float(s["accuracy"]), expected, places=3)
        self.assertEqual(s["items"], str(n))

        r = run("adapt", "--input", path, "--variant", "training_free", "--batch-size", "64")
        self.assertEqual(r.returncode, 0, r.stderr)
        r = run("adapt", "--input", path, "--variant", "clip_ot")
        self.assertEqual(r.returncode, 1)

    def test_generated_file_reads_in_python(self):
        path = self.path("gen.oteb")
        r = run("gen", "--out", path, "--seed", "3", "--per-class", "20")
        self.assertEqual(r.returncode, 0, r.stderr)
        f = read_oteb(path)
        self.assertEqual((f["version"], f["d"], f["K"], f["M"], f["n"]), (1, 32, 10, 8, 200))
        self.assertEqual(f["flags"], FLAG_LABELS | FLAG_PROTOTYPES)
        norms = np.linalg.norm(f["prototypes"].astype(np.float64), axis=-1)
        self.assertLess(np.max(np.abs(norms - 1)), 1e-5)
        self.assertEqual(sorted(np.bincount(f["labels"])), [20] * 10)

        # Rewriting the parsed arrays from Python reproduces the bytes.
        copy = self.path("copy.oteb")
        write_oteb(copy, f["items"], f["prototypes"], f["labels"])
        self.assertEqual(slurp(copy), slurp(path))

    def test_sweep_reports(self):
        csv, md, timing = self.path("a.csv"), self.path("a.md"), self.path("t.csv")
        r = run("sweep", "--variants", "zero_shot,clip_ot", "--templates", "1,8", "--seeds", "0,1",
                "--batches", "3", "--jobs", "2", "--csv", csv, "--markdown", md,
                "--timing-csv", timing)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(summary(r.stdout)["cells"], "4")
        lines = slurp(csv, "r").splitlines()
        self.assertEqual(lines[0], "variant,epsilon,templates,severity,seeds,accuracy_mean,"
                                   "accuracy_std,collapse_mean")
        self.assertEqual(len(lines), 5)
        self.assertIn("clip_ot", slurp(md, "r"))
        self.assertIn("wall_time", slurp(timing, "r").splitlines()[0])

        r = run("sweep", "--variants", "clip_ot", "--epsilons", "0.05,0.7", "--stabilization",
                "plain", "--batches", "2", "--csv", csv)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(summary(r.stdout)["failed"], "1")
        self.assertIn("ERR(NonFiniteKernel)", slurp(csv, "r"))


if __name__ == "__main__":
    CLI = sys.argv.pop(1)
    unittest.main(verbosity=2)
