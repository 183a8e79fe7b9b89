"""A game the solver must refuse: solvable open-loop, not closed-loop.

The built-in instance has a singular follower control weight arranged so the
follower's Riccati solution stays perfectly finite (identically one) while
the range certificate fails at every node.  A correct implementation does
not blow up and does not invent an answer -- it reports the obstruction and
the CLI maps it to exit code 2.
"""
import numpy as np

import lqstackelberg as lq


def main():
    spec = lq.open_loop_only_spec()
    grid = lq.TimeGrid(spec.horizon, 400)

    fs = lq.solve_follower_riccati(spec, grid)
    print("follower stage:")
    print("  P1 constant at 1.0: max deviation %.1e"
          % np.max(np.abs(fs.P1.values - 1.0)))
    print("  psd certificate:    %s" % fs.certificates.psd_ok)
    print("  range certificate:  %s  <-- the obstruction"
          % fs.certificates.range_ok)
    print("  reason: %s" % fs.certificates.failure_reason())

    sol = lq.solve_game(spec, grid)
    print()
    print("pipeline verdict: solvable=%s" % sol.report.solvable)
    print("  reason: %s" % sol.report.reason)
    print("  leader stage ran: %s" % (sol.leader is not None))
    print()
    print("CLI equivalent:  game example-openloop   (exits with code 2)")


if __name__ == "__main__":
    main()
