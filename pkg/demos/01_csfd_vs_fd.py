"""Why the imaginary step: derivative error vs step size.

Real finite differences trade truncation error against subtractive
cancellation, so their error curve is a V: shrink the step too far and the
estimate disintegrates.  The complex-step estimate has no subtraction in
the numerator; its error just keeps falling until it hits roundoff and
stays there, for any step down to 1e-40 and beyond.

Writes csfd_vs_fd.png and csfd_vs_fd.csv next to this script.
"""

import pathlib

import numpy as np

from softloco import csfd

HERE = pathlib.Path(__file__).parent


def f_complex(x):
    s, c = csfd.sin(x), csfd.cos(x)
    return csfd.exp(x) / csfd.sqrt(s * s * s + c * c * c)


def f_real(x):
    return float(np.exp(x) / np.sqrt(np.sin(x) ** 3 + np.cos(x) ** 3))


def main():
    x0 = 1.5
    # high-precision reference via mpmath
    import mpmath
    mpmath.mp.dps = 50
    ref = float(mpmath.diff(
        lambda x: mpmath.exp(x) / mpmath.sqrt(mpmath.sin(x) ** 3
                                              + mpmath.cos(x) ** 3), x0))
    print(f"f'(1.5) = {ref:.16e}")

    hs = np.array([10.0 ** (-k) for k in range(1, 41)])
    rows = []
    for h in hs:
        fd = (f_real(x0 + h) - f_real(x0 - h)) / (2 * h)
        cs = csfd.csfd_derivative(f_complex, x0, h=h)
        rows.append((h, abs(fd - ref) / abs(ref), abs(cs - ref) / abs(ref)))
        print(f"h={h:8.1e}  fd_rel_err={rows[-1][1]:9.2e}  "
              f"csfd_rel_err={rows[-1][2]:9.2e}")

    with open(HERE / "csfd_vs_fd.csv", "w") as fh:
        fh.write("h,fd_rel_err,csfd_rel_err\n")
        for h, e1, e2 in rows:
            fh.write(f"{h:.1e},{e1:.6e},{e2:.6e}\n")

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipped the plot")
        return
    rows = np.array(rows)
    plt.figure(figsize=(6, 4))
    plt.loglog(rows[:, 0], np.maximum(rows[:, 1], 1e-18), "o-",
               label="central finite difference")
    plt.loglog(rows[:, 0], np.maximum(rows[:, 2], 1e-18), "s-",
               label="complex step")
    plt.gca().invert_xaxis()
    plt.xlabel("step size h")
    plt.ylabel("relative error")
    plt.title("derivative error vs step size")
    plt.legend()
    plt.grid(True, which="both", alpha=0.3)
    plt.tight_layout()
    plt.savefig(HERE / "csfd_vs_fd.png", dpi=130)
    print(f"wrote {HERE / 'csfd_vs_fd.png'}")


if __name__ == "__main__":
    main()
