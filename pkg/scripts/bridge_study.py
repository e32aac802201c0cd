"""Bridge joint-stiffness study: weak (Ej=1) vs stiff (Ej=16) joints on the same mesh.

    python scripts/bridge_study.py [--nelx 120 --nely 60] [--out results/bridge]
"""
import argparse
import json
import time
from pathlib import Path

from mtoa.adjoint import Evaluator, Schedule
from mtoa.export import write_bundle
from mtoa.model import build_problem
from mtoa.optimizer import run_optimization


def run(nelx, nely, Ej, seed, out):
    pb = build_problem({"preset": "bridge2d", "mesh": {"nelx": nelx, "nely": nely}, "joint": {"Ej": Ej}})
    t0 = time.perf_counter()
    rec = run_optimization(pb, seed)
    elapsed = time.perf_counter() - t0
    evaluator = Evaluator(pb)
    ev = evaluator.evaluate(rec.final_state, Schedule.from_config(pb.config, rec.final_beta), gradients=False)
    write_bundle(out, pb, evaluator, ev, rec)
    f = rec.final
    return {"Ej": Ej, "status": rec.status, "feasible": rec.feasible, "iterations": len(rec.history),
            "F": f["F"], "g1": f["g1"], "g2": f["g2"], "gray_level": f["gray_level"],
            "membership_discreteness": f["membership_discreteness"], "seconds": elapsed}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nelx", type=int, default=120)
    ap.add_argument("--nely", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/bridge")
    args = ap.parse_args()
    out = Path(args.out)
    rows = {}
    for Ej in (1.0, 16.0):
        rows[Ej] = run(args.nelx, args.nely, Ej, args.seed, out / f"Ej{Ej:g}")
        print(json.dumps(rows[Ej]), flush=True)
    ratio = rows[16.0]["F"] / rows[1.0]["F"]
    (out / "report.json").write_text(json.dumps({"runs": list(rows.values()), "ratio": ratio}, indent=2) + "\n")
    print(f"F(Ej=16) / F(Ej=1) = {ratio:.3f}")


if __name__ == "__main__":
    main()
