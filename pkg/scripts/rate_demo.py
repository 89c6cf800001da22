"""Drive the CH skeleton with a known control, store the trajectory, and recover the rate.

The recovered value should match half the squared L2L2 norm of the control.
"""
import sys
from pathlib import Path

import numpy as np

from kaclab.ch import CHParams
from kaclab.cli import main as cli
from kaclab.grid import Field, grid_points
from kaclab.skeleton import solve_skeleton_ch
from kaclab.trajectory import FunctionControl, write_trajectory


def main(out=Path("results/rate_demo")):
    T, n = 0.05, 64
    p = CHParams(noise_mode="off", N=n, T=T, dt=1e-5, stride=4)
    fn = lambda t, x: 2 * np.sin(np.pi * t / T) * np.cos(2 * np.pi * x)
    u0 = Field.from_function(lambda x: 0.5 * np.cos(2 * np.pi * x), n)
    traj = solve_skeleton_ch(u0, FunctionControl(fn, n), p)
    path = Path(out) / "skeleton_ch.traj"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory(path, traj, seed=0, stride=p.stride)
    ts = np.linspace(0, T, 2001)
    x = grid_points(n)
    exact = 0.5 * np.trapezoid([np.mean(fn(s, x) ** 2) for s in ts], ts)
    print(f"expected {float(exact)!r}")
    return cli(["rate", "--traj", str(path), "--model", "ch", "--out", str(out)])


if __name__ == "__main__":
    sys.exit(main())
