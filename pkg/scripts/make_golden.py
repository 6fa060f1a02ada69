"""Regenerate tests/golden/*.json from the pinned fixtures in tests/experiments.py.

Usage: python3 scripts/make_golden.py [name ...]
Names: mc_standard oracle_2d oracle_ratio rate structure (default: all).
"""

import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

import experiments as ex  # noqa: E402

import supkde  # noqa: E402

JOBS = {
    "mc_standard": lambda: {"params": ex.MC_STANDARD, "sigma": 1.0, "kappa": ex.KAPPA, **ex.run_mc_standard()},
    "oracle_2d": lambda: {"params": ex.ORACLE_2D, "sigma": ex.SIGMA, **ex.run_oracle_2d()},
    "oracle_ratio": lambda: {"params": ex.ORACLE_RATIO, "sigma": ex.SIGMA, "kappa": ex.KAPPA, **json.loads(ex.cached("oracle_ratio"))},
    "rate": lambda: {
        "params": ex.RATE,
        "sigma": ex.SIGMA,
        "kappa": ex.KAPPA,
        "target_slope": ex.target_slope(),
        **json.loads(ex.cached("rate")),
    },
    "structure": lambda: {"params": ex.STRUCTURE, "sigma": ex.SIGMA, "kappa": ex.KAPPA, **json.loads(ex.cached("structure"))},
}


def main(names):
    ex.GOLDEN.mkdir(exist_ok=True)
    for name in names or JOBS:
        t = time.time()
        body = {"version": supkde.__version__, **JOBS[name]()}
        (ex.GOLDEN / f"{name}.json").write_text(json.dumps(body, indent=2, sort_keys=True, default=float) + "\n")
        print(f"{name}: {time.time() - t:.0f}s", flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
