"""Smoke test for the `fsrlab` Python module.

Builds the extension with cargo unless --lib points at an existing build,
then exercises budget, run, report and select_demo on tiny inputs.

    python3 python/smoke.py
"""

import argparse
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build() -> Path:
    subprocess.run(["cargo", "build", "-p", "fsrlab-py"], cwd=REPO, check=True)
    return REPO / "target" / "debug" / "libfsrlab.so"


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--lib", type=Path, help="prebuilt libfsrlab.so")
    args = ap.parse_args()
    lib = args.lib or build()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        shutil.copy(lib, tmp / "fsrlab.so")
        sys.path.insert(0, str(tmp))
        import fsrlab

        b = fsrlab.budget("mnist-mlp", 784, 10, 20)
        assert b["params"] == 3_958_784 and b["images_per_task"] == 498, b

        runs = fsrlab.run(str(REPO / "configs" / "toy.toml"), out=str(tmp / "runs"), seeds=[0, 1])
        assert len(runs) == 2 and all("final_avg_accuracy" in r for r in runs), runs
        summary = fsrlab.report(str(tmp / "runs" / "toy"))
        (arm,) = summary.values()
        assert len(arm["avg_accuracy"]) == 3, arm

        csv = tmp / "points.csv"
        csv.write_text("0,0.1,0.1\n0,0.22,0.1\n0,0.15,0.2\n1,0.8,0.8\n1,0.9,0.7\n1,0.85,0.75\n")
        picked = fsrlab.select_demo(str(csv), "herding", 1, out=str(tmp / "sel"))
        assert picked == [0, 5], picked

        try:
            fsrlab.select_demo(str(csv), "herding", 5, out=str(tmp / "sel"))
        except RuntimeError as e:
            assert "class 0" in str(e), e
        else:
            raise AssertionError("oversized selection accepted")

        print(f"fsrlab {fsrlab.__version__}: smoke ok, final toy accuracies "
              + ", ".join(f"{r['final_avg_accuracy']:.3f}" for r in runs))
    return 0


if __name__ == "__main__":
    sys.exit(main())
