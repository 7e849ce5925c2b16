"""Second-order convergence on a contact-rich control frame.

Solves one frame of the bar-hop scene three ways from the same
gradient-descent warm start: full Newton with mixed-differentiation
Hessians, plain gradient descent, and an L-BFGS baseline.  The barrier
terms make the landscape stiff and anisotropic, which is precisely where
curvature information pays off.

Writes newton_vs_first_order.png/.csv next to this script.  The default
budget keeps the run to roughly a minute; pass --budget-multiplier 50 to
reproduce the full acceptance-scale comparison.
"""

import argparse
import dataclasses
import pathlib

import numpy as np

from softloco import optimize as OPT
from softloco import scenario as SC

HERE = pathlib.Path(__file__).parent


def run(budget_multiplier):
    sn = SC.builtin_scenario("bar-hop")
    spec = sn.loss_spec(0)
    m = sn.scene.num_activations
    cfg = sn.opt_cfg
    a_init = np.zeros(m)

    print("warm start: 10 gradient-descent iterations (shared)")
    fl = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                       a_prev=a_init)
    a_warm, l0 = OPT.gradient_descent(fl.value, fl.gradient, a_init, 10, cfg)
    print(f"L0 after warm start: {l0:.6e}")

    curves = {}

    fl_n = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                         a_prev=a_init)
    hess_calls = [0]

    def hess_fn(a):
        hess_calls[0] += 1
        h = fl_n.hessian(a, cfg.h, cfg.workers)
        return 0.5 * (h + h.T)

    rep = OPT.SolveReport()
    cfg_n = dataclasses.replace(cfg, newton_max=10, gtol=1e-16)
    _, l_n = OPT.newton_minimize(fl_n.value, fl_n.gradient, hess_fn, a_warm,
                                 cfg_n, report=rep)
    curves["newton"] = [(h[1], h[2]) for h in rep.history if h[0] == "newton"]
    budget = budget_multiplier * (fl_n.grad_evals + hess_calls[0] * m)
    print(f"newton: {l_n / l0:.2e} * L0 in {rep.newton_iterations} iterations "
          f"({fl_n.grad_evals} sweeps + {hess_calls[0] * m} Hessian columns)")
    print(f"first-order budget: {budget} gradient evaluations")

    for name, runner in (
            ("gd", lambda r: OPT.gradient_descent(
                fl_x.value, fl_x.gradient, a_warm, budget, cfg, report=r,
                phase="gd")),
            ("lbfgs", lambda r: OPT.lbfgs(
                fl_x.value, fl_x.gradient, a_warm, grad_budget=budget,
                cfg=cfg, report=r, phase="lbfgs"))):
        fl_x = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                             a_prev=a_init)
        r = OPT.SolveReport()
        _, l_end = runner(r)
        curves[name] = [(h[1], h[2]) for h in r.history if h[0] == name]
        print(f"{name}: {l_end / l0:.2e} * L0 after {len(curves[name]) - 1} "
              f"iterations")

    with open(HERE / "newton_vs_first_order.csv", "w") as fh:
        fh.write("method,iteration,loss\n")
        for name, pts in curves.items():
            for it, loss in pts:
                fh.write(f"{name},{it},{loss:.12e}\n")

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipped the plot")
        return
    plt.figure(figsize=(6, 4))
    for name, pts in curves.items():
        arr = np.array(pts)
        plt.semilogy(arr[:, 0], arr[:, 1] / l0, "o-", label=name, ms=3)
    plt.xlabel("iteration after warm start")
    plt.ylabel("loss / L0")
    plt.title("bar-hop frame: Newton vs first-order methods")
    plt.legend()
    plt.grid(True, which="both", alpha=0.3)
    plt.tight_layout()
    plt.savefig(HERE / "newton_vs_first_order.png", dpi=130)
    print(f"wrote {HERE / 'newton_vs_first_order.png'}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--budget-multiplier", type=int, default=5,
                    help="first-order budget as a multiple of Newton's")
    run(ap.parse_args().budget_multiplier)
