"""Convergence of the backward Riccati solver on an instance with a
closed-form answer.

With scalar state, unit drift/control weights and zero terminal weight the
follower's Riccati solution is P(t) = tanh(T - t), so the error at t = 0 can
be measured exactly.  The table below shows classic fourth-order decay until
the double-precision floor.
"""
import numpy as np

import lqstackelberg as lq


def main():
    spec = lq.tanh_benchmark_spec()
    exact = np.tanh(1.0)

    print("N      P1(0)                 error        ratio")
    prev = None
    for N in (25, 50, 100, 200, 400, 800):
        fs = lq.solve_follower_riccati(spec, lq.TimeGrid(1.0, N))
        p0 = fs.P1.values[0, 0, 0]
        err = abs(p0 - exact)
        ratio = "" if prev is None else "%6.1f" % (prev / err)
        print("%-6d %.17f  %9.2e  %s" % (N, p0, err, ratio))
        prev = err

    print()
    print("exact  %.17f   (tanh 1)" % exact)
    print("gain at t=0: %.6f (= -P1(0), feedback u1 = gain * x)"
          % fs.Theta1.values[0, 0, 0])
    print("certificates: psd_ok=%s range_ok=%s blow_up=%s"
          % (fs.certificates.psd_ok, fs.certificates.range_ok,
             fs.certificates.blow_up))


if __name__ == "__main__":
    main()
