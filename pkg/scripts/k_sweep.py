"""Position RMSE against sample count for every mode; thin wrapper over
``dmmppi offline`` followed by ``dmmppi sweep``.

    python scripts/k_sweep.py --out runs/ksweep --jobs 4

Extra arguments are forwarded to the sweep (e.g. ``--k-grid 50,100,200``).
"""
import os
import sys

from dmmppi.cli import main as cli_main


def main(argv):
    out = "runs/ksweep"
    if "--out" in argv:
        out = argv[argv.index("--out") + 1]
    else:
        argv = argv + ["--out", out]
    if not os.path.exists(os.path.join(out, "offline", "model.bin")):
        code = cli_main(["offline", "--out", out])
        if code:
            return code
    return cli_main(["sweep"] + argv)


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
