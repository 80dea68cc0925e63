#!/usr/bin/env python3
"""Tests for the hrwarp command-line surface."""

import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest.mock import patch

import numpy as np

from hrwarp.cli import EXIT_ARGUMENT, EXIT_FORMAT, EXIT_OK, EXIT_SIZE_CAP, main
from hrwarp.config import config
from hrwarp.key_sampler import expected_evaluations
from hrwarp.tensor_io import (
    Image,
    LabelMap,
    Mask,
    load_tensor,
    save_image,
    save_label_map,
    save_mask,
)


class CliTestCase(unittest.TestCase):
    """Shared fixture: a 40x40 scene whose layout moves one band of labels."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        env_patch = patch.dict(os.environ, {"HRWARP_ENV_FILE": ""})
        env_patch.start()
        self.addCleanup(env_patch.stop)
        for name in ("HRWARP_SEED", "HRWARP_THREADS", "HRWARP_GAMMA", "HRWARP_LOG_LEVEL"):
            os.environ.pop(name, None)

        rng = np.random.default_rng(0)
        labels = np.zeros((40, 40), dtype=np.uint8)
        labels[:, 20:] = 1
        labels[10:20, :] = 2
        target = np.array(labels)
        target[10:20, :] = 0
        target[22:32, :] = 2
        editable = np.zeros((40, 40), dtype=bool)
        editable[8:34, :] = True

        save_image(Image(rng.random((40, 40, 3))), self.path("image.png"))
        save_label_map(LabelMap(labels), self.path("labels.png"))
        save_label_map(LabelMap(target), self.path("target.png"))
        save_mask(Mask(editable), self.path("mask.png"))

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return str(self.root / name)

    def inputs(self):
        return [
            "--image", self.path("image.png"),
            "--labels", self.path("labels.png"),
            "--target-labels", self.path("target.png"),
        ]

    def run_cli(self, argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with redirect_stdout(stdout), redirect_stderr(stderr):
            code = main(argv)
        return code, stdout.getvalue(), stderr.getvalue()


class TestWarpCommand(CliTestCase):
    """Test the warp subcommand."""

    def test_outputs_do_not_depend_on_threads(self):
        """Test byte-identical PNG and key dumps with 1 and 8 threads."""
        blobs = {}
        for threads in (1, 8):
            out, keys = self.path(f"out{threads}.png"), self.path(f"keys{threads}.hrt")
            argv = ["--threads", str(threads), "warp", *self.inputs(), "--mask", self.path("mask.png"),
                    "--seed", "3", "--output", out, "--dump-keys", keys]
            code, stdout, _ = self.run_cli(argv)
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(json.loads(stdout)["command"], "warp")
            blobs[threads] = (Path(out).read_bytes(), Path(keys).read_bytes())
        self.assertEqual(blobs[1], blobs[8])

    def test_raw_output_written(self):
        """Test the optional raw warp output."""
        raw = self.path("raw.png")
        code, _, _ = self.run_cli(["warp", *self.inputs(), "--output", self.path("out.png"), "--raw-output", raw])
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(Path(raw).exists())

    def test_reconstruction_needs_mask(self):
        """Test that reconstruction mode without a mask is an argument error."""
        code, _, stderr = self.run_cli(["warp", *self.inputs(), "--reconstruction", "--output", self.path("out.png")])
        self.assertEqual(code, EXIT_ARGUMENT)
        self.assertIn("--mask", stderr)


class TestExitCodes(CliTestCase):
    """Test error classification."""

    def test_bad_magic_features(self):
        """Test that malformed feature files exit with the format code."""
        bad = self.root / "bad.hrt"
        bad.write_bytes(b"HRT0" + bytes(16))
        code, _, stderr = self.run_cli(
            ["warp", *self.inputs(), "--features-src", str(bad), "--features-tgt", str(bad), "--output", self.path("o.png")]
        )
        self.assertEqual(code, EXIT_FORMAT)
        self.assertIn("bad magic", stderr)

    def test_missing_image(self):
        """Test that an unreadable input exits with the format code."""
        argv = ["warp", "--image", self.path("missing.png"), "--labels", self.path("labels.png"),
                "--target-labels", self.path("target.png"), "--output", self.path("o.png")]
        self.assertEqual(self.run_cli(argv)[0], EXIT_FORMAT)

    def test_zero_iterations(self):
        """Test that --iters 0 exits with the argument code."""
        code, _, _ = self.run_cli(["warp", *self.inputs(), "--iters", "0", "--output", self.path("o.png")])
        self.assertEqual(code, EXIT_ARGUMENT)

    def test_cutoff_above_iterations(self):
        """Test that an explicit cutoff beyond the iteration count is rejected."""
        code, _, _ = self.run_cli(["sample-keys", *self.inputs(), "--iters", "3", "--cutoff", "5",
                                   "--dump-keys", self.path("k.hrt")])
        self.assertEqual(code, EXIT_ARGUMENT)

    def test_shape_mismatch(self):
        """Test that label maps of another size exit with the argument code."""
        save_label_map(LabelMap(np.zeros((40, 30), dtype=np.uint8)), self.path("narrow.png"))
        argv = ["warp", "--image", self.path("image.png"), "--labels", self.path("labels.png"),
                "--target-labels", self.path("narrow.png"), "--output", self.path("o.png")]
        self.assertEqual(self.run_cli(argv)[0], EXIT_ARGUMENT)

    def test_dense_size_cap(self):
        """Test that the bench preset refuses a 65x65 dense run."""
        code, stdout, stderr = self.run_cli(["--preset", "bench", "bench", "--sizes", "8", "--dense-sizes", "65"])
        self.assertEqual(code, EXIT_SIZE_CAP)
        self.assertEqual(stdout, "")
        self.assertIn("--force-dense", stderr)

    def test_negative_synth_seed(self):
        """Test that a negative synth-dataset seed exits with the argument code."""
        argv = ["synth-dataset", "--image", self.path("image.png"), "--labels", self.path("labels.png"),
                "--seed", "-1", "--out-dir", self.path("synth")]
        code, stdout, stderr = self.run_cli(argv)
        self.assertEqual(code, EXIT_ARGUMENT)
        self.assertEqual(stdout, "")
        self.assertIn("--seed", stderr)

    def test_missing_required_argument(self):
        """Test that argparse usage errors exit with status 2."""
        with redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                main(["warp"])
        self.assertEqual(ctx.exception.code, 2)

    def test_missing_env_file(self):
        """Test that an explicit but missing env file is an argument error."""
        code, _, _ = self.run_cli(["--env-file", self.path("absent.env"), "bench", "--sizes", "4"])
        self.assertEqual(code, EXIT_ARGUMENT)

    def test_bad_log_level(self):
        """Test that an unknown log level from the env file is rejected."""
        env_file = self.root / "run.env"
        env_file.write_text("HRWARP_LOG_LEVEL=chatty\n", encoding="utf-8")
        code, _, stderr = self.run_cli(["--env-file", str(env_file), "bench", "--sizes", "4"])
        self.assertEqual(code, EXIT_ARGUMENT)
        self.assertIn("HRWARP_LOG_LEVEL", stderr)


class TestOtherCommands(CliTestCase):
    """Test sample-keys, dense-warp, cycle-loss, bench and synth-dataset."""

    def test_sample_keys_dump(self):
        """Test the (y, x, weight) dump layout and normalisation."""
        dump = self.path("keys.hrt")
        code, stdout, _ = self.run_cli(["sample-keys", *self.inputs(), "--dump-keys", dump])
        self.assertEqual(code, EXIT_OK)
        tensor = load_tensor(dump)
        self.assertEqual(tensor.data.shape, (40, 40, 90))
        np.testing.assert_allclose(tensor.data[..., 2::3].sum(axis=-1), 1.0, atol=1e-5)
        self.assertEqual(json.loads(stdout)["keys_per_query"], 30)

    def test_dense_warp(self):
        """Test the dense oracle command on a small scene."""
        out = self.path("dense.png")
        code, stdout, _ = self.run_cli(["dense-warp", *self.inputs(), "--output", out])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(stdout)["evaluations"], 1600 * 1600)
        self.assertTrue(Path(out).exists())

    def test_cycle_loss(self):
        """Test the cycle-loss report."""
        code, stdout, _ = self.run_cli(["cycle-loss", *self.inputs(), "--downsample", "4"])
        self.assertEqual(code, EXIT_OK)
        report = json.loads(stdout)
        self.assertEqual((report["height"], report["width"]), (10, 10))
        self.assertGreaterEqual(report["cycle_loss"], 0.0)

    def test_bench_counts(self):
        """Test that reported evaluations match the closed form."""
        report_path = self.path("bench.jsonl")
        code, _, _ = self.run_cli(["bench", "--sizes", "8", "16", "--iters", "3", "--dense-sizes", "8",
                                   "--output", report_path])
        self.assertEqual(code, EXIT_OK)
        entries = [json.loads(line) for line in Path(report_path).read_text(encoding="utf-8").splitlines()]
        sampler = config["default"].pipeline(iterations=3).sampler
        sparse = [entry for entry in entries if entry["mode"] == "sparse"]
        dense = [entry for entry in entries if entry["mode"] == "dense"]
        self.assertEqual([entry["evaluations"] for entry in sparse],
                         [expected_evaluations(size, size, sampler) for size in (8, 16)])
        self.assertEqual(dense[0]["evaluations"], 64 * 64)

    def test_synth_dataset_reruns_identically(self):
        """Test that a rerun rebuilds the same records file."""
        labels = np.zeros((64, 64), dtype=np.uint8)
        labels[:, 42:] = 1
        save_label_map(LabelMap(labels), self.path("rects.png"))
        save_image(Image(np.random.default_rng(1).random((64, 64, 3))), self.path("rects_image.png"))
        argv = ["synth-dataset", "--image", self.path("rects_image.png"), "--labels", self.path("rects.png"),
                "--seed", "5", "--count", "3", "--out-dir", self.path("synth")]

        code, stdout, _ = self.run_cli(argv)
        self.assertEqual(code, EXIT_OK)
        records = (self.root / "synth" / "records.jsonl").read_text(encoding="utf-8")
        self.assertGreaterEqual(len(records.splitlines()), 1)
        self.assertEqual([json.loads(line) for line in stdout.splitlines()],
                         [json.loads(line) for line in records.splitlines()])

        self.run_cli(argv)
        self.assertEqual((self.root / "synth" / "records.jsonl").read_text(encoding="utf-8"), records)

    def test_env_file_seed(self):
        """Test that HRWARP_SEED from an env file reaches the sampler."""
        env_file = self.root / "seed.env"
        env_file.write_text("export HRWARP_SEED=9\n", encoding="utf-8")
        from_env, explicit = self.path("env.hrt"), self.path("explicit.hrt")
        self.run_cli(["--env-file", str(env_file), "sample-keys", *self.inputs(), "--dump-keys", from_env])
        os.environ.pop("HRWARP_SEED", None)
        self.run_cli(["sample-keys", *self.inputs(), "--seed", "9", "--dump-keys", explicit])
        self.assertEqual(Path(from_env).read_bytes(), Path(explicit).read_bytes())


if __name__ == "__main__":
    unittest.main()
