#!/usr/bin/env python3
"""Write MATPOWER-format case files whose bus/gen tables hold a converged
Newton-Raphson solution at full double precision.

The published IEEE case files store voltages rounded to a few digits (case30
stores a flat start), so they cannot serve as a tight reference solution.
This script solves each case with PYPOWER (no reactive limits) and writes the
result in MATPOWER's savecase layout.

    pip install pypower
    python3 scripts/make_solved_cases.py cases/
"""
import sys
from pathlib import Path

from pypower.api import case14, case30, case57, case118, ppoption, runpf


def fmt_row(row, int_cols):
    out = []
    for j, v in enumerate(row):
        if j in int_cols:
            out.append("%d" % int(v))
        else:
            out.append("%.17g" % v)
    return "\t" + "\t".join(out) + ";"


def write_case(name, ppc, path):
    lines = [
        "function mpc = %s" % name,
        "%% %s  Solved power flow data (Newton-Raphson, tol 1e-12, no Q limits)." % name.upper(),
        "%   Bus Vm/Va and generator Pg/Qg hold the converged state.",
        "",
        "%% MATPOWER Case Format : Version 2",
        "mpc.version = '2';",
        "",
        "%%-----  Power Flow Data  -----%%",
        "%% system MVA base",
        "mpc.baseMVA = %g;" % ppc["baseMVA"],
        "",
        "%% bus data",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [",
    ]
    lines += [fmt_row(r[:13], {0, 1, 6, 10}) for r in ppc["bus"]]
    lines += [
        "];",
        "",
        "%% generator data",
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\tPc1\tPc2\tQc1min\tQc1max\tQc2min\tQc2max\tramp_agc\tramp_10\tramp_30\tramp_q\tapf",
        "mpc.gen = [",
    ]
    lines += [fmt_row(r[:21], {0, 7}) for r in ppc["gen"]]
    lines += [
        "];",
        "",
        "%% branch data",
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
        "mpc.branch = [",
    ]
    lines += [fmt_row(r[:13], {0, 1, 10}) for r in ppc["branch"]]
    lines += ["];", ""]
    if "gencost" in ppc:
        lines += [
            "%%-----  OPF Data  -----%%",
            "%% generator cost data",
            "mpc.gencost = [",
        ]
        lines += [fmt_row(r, {0, 3}) for r in ppc["gencost"]]
        lines += ["];", ""]
    Path(path).write_text("\n".join(lines))


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "cases")
    out.mkdir(parents=True, exist_ok=True)
    opt = ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12, ENFORCE_Q_LIMS=0)
    for fn in (case14, case30, case57, case118):
        ppc = fn()
        res, ok = runpf(ppc, opt)
        if not ok:
            raise SystemExit("%s did not converge" % fn.__name__)
        solved = dict(ppc)
        solved["bus"] = res["bus"]
        solved["gen"] = res["gen"]
        write_case(fn.__name__, solved, out / ("%s.m" % fn.__name__))
        print("wrote", out / ("%s.m" % fn.__name__))


if __name__ == "__main__":
    main()
