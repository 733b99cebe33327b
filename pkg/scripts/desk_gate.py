"""Private two-digit MNIST gate: distill at epsilon = 10, evaluate, compare to the
majority-class baseline.

Exports the data from mlxtend's bundled digits into data/desk_mnist when the
IDX files are missing, then runs ``privset distill`` and ``privset eval`` with
configs/desk_mnist.ini. Exit status 0 means the margin is at least 20 points.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from privset import cli
from privset.mnist_subset import FILES, export_desk_mnist

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "desk_mnist.ini")
    p.add_argument("--out", type=Path, default=Path("runs/desk_gate"))
    a = p.parse_args()

    cfg = cli.validate_config(cli.read_config(a.config))
    data_dir = Path(cfg.data.train_images).parent
    if not all((data_dir / f).is_file() for pair in FILES.values() for f in pair):
        print(f"exporting desk MNIST to {data_dir}")
        export_desk_mnist(data_dir)

    start = time.perf_counter()
    for argv in (["distill", "--config", a.config, "--out", a.out],
                 ["eval", "--config", a.config, "--synthetic", a.out / "synthetic.psg",
                  "--out", a.out]):
        code = cli.run_command([str(v) for v in argv])
        if code:
            sys.exit(code)
    elapsed = time.perf_counter() - start

    report = json.loads((a.out / "report.json").read_text())
    table = json.loads((a.out / "eval_report.json").read_text())["table"]
    test = cli.load_test(cfg, cli.data_mod.Normalization(**report["normalization"]), 2)
    baseline = np.bincount(test.labels).max() / len(test)
    acc = table[cfg.eval.arch]["mean"]
    ok = acc - baseline >= 0.20 and report["epsilon"] <= 10
    print(f"accuracy {acc:.3f}  baseline {baseline:.3f}  epsilon {report['epsilon']:.4f}  "
          f"steps {report['steps']}  {elapsed / 60:.1f} min  {'PASS' if ok else 'FAIL'}")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
