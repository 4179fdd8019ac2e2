#!/usr/bin/env python3
"""Reference values for the C++ tests, computed with numpy alone.

    oracles.py --write   regenerate tests/data/oracles.json
    oracles.py --check   recompute and compare with the frozen file
"""
import argparse
import itertools
import json
import math
import pathlib
import sys

import numpy as np

FROZEN = pathlib.Path(__file__).resolve().parent.parent / "data" / "oracles.json"


def fibonacci_dirs(n, hemisphere=False):
    golden = math.pi * (3.0 - math.sqrt(5.0))
    out = []
    for i in range(n):
        y = 1.0 - 2.0 * (i + 0.5) / n
        r = math.sqrt(max(0.0, 1.0 - y * y))
        d = np.array([math.cos(golden * i) * r, abs(y) if hemisphere else y, math.sin(golden * i) * r])
        out.append(d / np.linalg.norm(d))
    return out


def min_separation_deg(dirs):
    best = math.inf
    for a, b in itertools.combinations(dirs, 2):
        c = float(np.clip(np.dot(a, b), -1.0, 1.0))
        best = min(best, math.degrees(math.acos(c)))
    return best


def alpha_bar_table():
    betas = np.linspace(math.sqrt(0.00085), math.sqrt(0.012), 1000, dtype=np.float64) ** 2
    return np.cumprod(1.0 - betas)


def ddim_toy_final(x, target, abar_seq):
    """Runs eta=0 DDIM with the exact toy noise estimate; abar_seq is the
    decreasing-noise order of alpha_bar values, finishing at 1."""
    for a_t, a_prev in zip(abar_seq[:-1], abar_seq[1:]):
        eps = (x - math.sqrt(a_t) * target) / math.sqrt(1.0 - a_t)
        x0 = (x - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
        x = math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps
    return x


def ridge_fit(dirs, values, weights, ridge):
    """Order-1 fit with the ridge on the degree-1 terms only."""
    k = math.sqrt(3.0)
    A = np.array([[1.0, k * d[1], k * d[2], k * d[0]] for d in dirs])
    W = np.diag(weights)
    P = np.diag([0.0, ridge, ridge, ridge])
    return np.linalg.solve(A.T @ W @ A + P, A.T @ W @ np.array(values)), A


def compute():
    out = {}
    sphere = fibonacci_dirs(8)
    out["fibonacci_sphere8_min_separation_deg"] = min_separation_deg(sphere)
    out["fibonacci_sphere8_dirs"] = [list(map(float, d)) for d in sphere]
    hemi = fibonacci_dirs(8, hemisphere=True)
    out["fibonacci_hemisphere8_dirs"] = [list(map(float, d)) for d in hemi]

    ab = alpha_bar_table()
    out["train_alpha_bar_first"] = float(ab[0])
    out["train_alpha_bar_last"] = float(ab[999])
    out["schedule50_timesteps"] = [k * 20 + 1 for k in range(50)]
    out["schedule50_alpha_bar"] = {str(t): float(ab[t]) for t in (1, 21, 481, 981)}

    # DDIM with exact noise estimates lands on the target once alpha_bar
    # reaches 1; the error is pure rounding.
    seq = [float(ab[k * 20 + 1]) for k in reversed(range(50))] + [1.0]
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        x, t = rng.standard_normal(2)
        worst = max(worst, abs(ddim_toy_final(x, t, seq) - t))
    out["ddim_toy_max_abs_error"] = worst

    out["sh_degree1_scale"] = math.sqrt(3.0)

    # Two samples, ridge 1e-4: residual at the sample directions.
    dirs = [np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])]
    values = [0.7, -0.2]
    c, A = ridge_fit(dirs, values, [1.0, 2.0], 1e-4)
    out["ridge_two_sample"] = {
        "directions": [list(map(float, d)) for d in dirs],
        "values": values,
        "weights": [1.0, 2.0],
        "ridge": 1e-4,
        "coefficients": list(map(float, c)),
        "max_residual": float(np.max(np.abs(A @ c - np.array(values)))),
    }

    mix = np.array([[0.298, 0.207, 0.208], [0.187, 0.286, 0.173], [-0.158, 0.189, 0.264], [-0.184, -0.271, -0.473]])
    out["toy_decoder_basis_colors"] = [list(map(float, 0.5 + mix[k])) for k in range(4)]
    return out


def compare(a, b, path="", tol=1e-12):
    if isinstance(a, dict):
        for k in a:
            compare(a[k], b[k], f"{path}.{k}", tol)
    elif isinstance(a, list):
        assert len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            compare(x, y, f"{path}[{i}]", tol)
    elif isinstance(a, float):
        assert abs(a - b) <= tol * max(1.0, abs(a)), f"{path}: {a} != {b}"
    else:
        assert a == b, f"{path}: {a} != {b}"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--write", action="store_true")
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    values = compute()
    if args.write:
        FROZEN.write_text(json.dumps(values, indent=2) + "\n")
        return 0
    if args.check:
        frozen = json.loads(FROZEN.read_text())
        frozen.pop("ddim_toy_max_abs_error")
        values.pop("ddim_toy_max_abs_error")
        compare(frozen, values)
        print("oracles match")
        return 0
    print(json.dumps(values, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
