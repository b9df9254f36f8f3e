"""Print the eps-rate table of the cubic benchmark for every configured defect.

Usage: python3 scripts/defect_rate_table.py [config.json]
"""

import pathlib
import sys

from defect_homog.config import load_config
from defect_homog.harness import defect_sweep
from defect_homog.operators import make_instance

ROOT = pathlib.Path(__file__).resolve().parents[1]


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    cfg = load_config(argv[0] if argv else ROOT / "configs" / "cubic.json")
    inst = make_instance(cfg.field_A(), cfg.field_B(), cfg.model(), cfg.epsilons[0], r=cfg.r,
                         N_target=cfg.mesh.N_target, cap=cfg.mesh.cap)
    sweep = defect_sweep(inst, cfg.epsilons, cfg.defect_list())
    ids = [t.defect_id for t in sweep.tables]
    print(f"{'eps':>12} " + " ".join(f"{i:>12}" for i in ids) + f" {'max ratio':>10}")
    for k, eps in enumerate(sweep.epsilons):
        errs = " ".join(f"{t.rows[k].sup_error:12.4e}" if t.rows[k].converged else f"{'--':>12}"
                        for t in sweep.tables)
        print(f"{eps:12.6f} {errs} {sweep.spread[k]:10.3f}")
    print(f"{'slope':>12} " + " ".join(
        f"{t.fitted_slope:12.4f}" if t.fitted_slope is not None else f"{'--':>12}"
        for t in sweep.tables))
    return 0


if __name__ == "__main__":
    sys.exit(main())
