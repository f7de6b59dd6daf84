"""Small exact instances shared by the solver and acceptance tests."""

import numpy as np

from liqimpulse.costs import CostSpec
from liqimpulse.lattice import GridSpec
from liqimpulse.market import MarketModel

# Binomial toy: b*dt = 0.5 and sigma*sqrt(dt) = 1, so each step moves x by +1.5 or -0.5.
# Positions are integers and trade costs are multiples of 0.25, so every wealth
# reached from a node is again a node of the 0.25-spaced y axis. Trading is cheap
# enough that opening a position and closing it later beats doing nothing.
BINOMIAL_MARKET = MarketModel.constant(0.5, 1.0)
BINOMIAL_UP, BINOMIAL_DOWN = 1.5, -0.5
TOY_COST = CostSpec("tabulated", M=2.0, table_z=tuple(float(v) for v in range(-4, 5)),
                    table_c=(1.25, 1.0, 0.75, 0.5, 0.0, 0.5, 0.75, 1.0, 1.25))


def binomial_grid(n_steps=2):
    t = np.arange(n_steps + 1, dtype=float)
    x = np.arange(-2.0, 3.0 * n_steps / 2 + 2.0 + 0.25, 0.5)
    y = np.arange(-20.0, 20.0 + 0.125, 0.25)
    z = np.arange(-2.0, 3.0)
    return GridSpec(t, x, y, z)
