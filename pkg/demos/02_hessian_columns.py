"""One perturbed reverse sweep = one exact Hessian column.

Walks through the self-inner-product example by hand, then computes the
full activation Hessian of a contact-in-the-loop frame loss and checks it
against finite differences of the gradient and against an independent
bicomplex implementation.
"""

import numpy as np

from softloco import bicomplex as B
from softloco import clinalg as L
from softloco import objectives as OBJ
from softloco import optimize as OPT
from softloco import scenario as SC
from softloco import tape as T


def worked_example():
    print("== f = x . x at (1, 2, 3), x1 perturbed by h*i ==")
    tape = T.Tape()
    x = tape.input_vector([1.0, 2.0, 3.0], perturb=0)
    y = L.sqnorm(x)
    print(f"forward: {y.value.real} + {y.value.imag / tape.h:.0f} h i")
    adj = tape.input_adjoints(y)[0]
    print("adjoint real parts (gradient):     ", adj.real)
    print("adjoint imag parts / h (H column): ", adj.imag / tape.h)


def sim_hessian():
    print("\n== activation Hessian of the single-tet frame loss ==")
    sn = SC.builtin_scenario("single-tet-on-plane")
    spec = sn.loss_spec(0)
    a0 = np.array([40.0, -25.0])
    a_prev = np.zeros(2)
    fl = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                       a_prev=a_prev)
    hess, defect = OPT.loss_hessian(sn.scene, sn.initial_state, a0, spec,
                                    sn.step_cfg, a_prev=a_prev,
                                    return_defect=True)
    print("H (2 perturbed passes):\n", hess)
    print(f"symmetry defect before symmetrization: {defect:.2e}")

    step = 1e-3 * sn.activation_scale
    hfd = np.zeros((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        hfd[:, k] = (fl.gradient(a0 + e) - fl.gradient(a0 - e)) / (2 * step)
    print(f"max rel err vs FD-of-gradient: "
          f"{np.abs(hess - 0.5 * (hfd + hfd.T)).max() / np.abs(hfd).max():.2e}")

    def f_bc(a_bc):
        tp = T.Tape(recording=False)
        loss, _ = OBJ.total_loss(tp, sn.scene, sn.initial_state,
                                 tp.input_bicomplex(a_bc), spec, sn.step_cfg,
                                 a_prev=a_prev, cache=fl.cache)
        return loss.value

    hbc = B.hessian(f_bc, a0)
    print(f"max rel err vs bicomplex oracle: "
          f"{np.abs(hess - hbc).max() / np.abs(hbc).max():.2e}")


if __name__ == "__main__":
    worked_example()
    sim_hessian()
