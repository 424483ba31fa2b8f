#!/usr/bin/env python3
"""Independent reference solves of the reduced AC-OPF with PYPOWER.

Reads a MATPOWER .m case, removes bus shunts, line charging, taps and phase
shifts (the reduced model has series admittance only), optionally replaces
loads, and prints objective, iteration count and the optimal dispatch as JSON.

Usage: reference_opf.py CASE.m [--loads loads.json]
"""
import argparse
import json
import re
import sys

import numpy as np
from pypower.api import ppoption, runopf


def parse_matrix(text, name):
    m = re.search(r"mpc\." + name + r"\s*=\s*\[(.*?)\];", text, re.S)
    if m is None:
        raise SystemExit(f"missing mpc.{name}")
    rows = []
    for line in m.group(1).split("\n"):
        line = line.split("%")[0]
        for chunk in line.split(";"):
            vals = chunk.split()
            if vals:
                rows.append([float(v.replace("Inf", "inf")) for v in vals])
    return np.array(rows)


def load_case(path):
    text = open(path).read()
    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text).group(1))
    ppc = {
        "version": "2",
        "baseMVA": base,
        "bus": parse_matrix(text, "bus"),
        "gen": parse_matrix(text, "gen"),
        "branch": parse_matrix(text, "branch"),
        "gencost": parse_matrix(text, "gencost"),
    }
    ppc["bus"][:, 4:6] = 0.0  # GS, BS
    ppc["branch"][:, 4] = 0.0  # BR_B
    ppc["branch"][:, 8] = 0.0  # TAP
    ppc["branch"][:, 9] = 0.0  # SHIFT
    if not np.any(ppc["branch"][:, 5] > 0):
        # PIPS fails with an empty inequality set; this rating never binds.
        ppc["branch"][0, 5] = 1e5
    return ppc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("case")
    ap.add_argument("--loads", help="JSON with pd/qd in MW/MVAr per bus row")
    args = ap.parse_args()
    ppc = load_case(args.case)
    if args.loads:
        loads = json.load(open(args.loads))
        ppc["bus"][:, 2] = loads["pd"]
        ppc["bus"][:, 3] = loads["qd"]
    opt = ppoption(VERBOSE=0, OUT_ALL=0, PDIPM_FEASTOL=1e-10, PDIPM_GRADTOL=1e-10,
                   PDIPM_COMPTOL=1e-10, PDIPM_COSTTOL=1e-10)
    r = runopf(ppc, opt)
    out = {
        "success": bool(r["success"]),
        "objective": float(r["f"]),
        "iterations": int(r["raw"]["output"]["iterations"]),
        "pg_mw": r["gen"][:, 1].tolist(),
        "vm": r["bus"][:, 7].tolist(),
    }
    json.dump(out, sys.stdout, indent=1)
    print()


if __name__ == "__main__":
    main()
