"""Shared builders for tests."""

import numpy as np

from distsubgrad.engine import SimConfig
from distsubgrad.mixing import WeightSchedule
from distsubgrad.problem import Box, Problem, Quadratic
from distsubgrad.stochastic import NoiseModel, StepsizeSchedule
from distsubgrad.topology import TopologySchedule, preset_edges

CENTERS = (-2.0, 0.0, 2.0)


def quadratic_problem():
    return Problem([Quadratic([c]) for c in CENTERS], Box([-1.0], [1.0]), f_star=8.0, x_star=[0.0])


def quadratic_config(horizon=1000, sigma=0.0, stepsize=None, graph="complete", initial=((-1.0,), (0.0,), (1.0,)),
                     seed=0, bias=0.0, **kw):
    p = quadratic_problem()
    topo = TopologySchedule.static(3, preset_edges(graph, 3), symmetric=True)
    if bias:
        noise = NoiseModel("biased", 3, 1, sigma=sigma, bias=bias, seed=seed)
    elif sigma:
        noise = NoiseModel("gaussian", 3, 1, sigma=sigma, seed=seed)
    else:
        noise = NoiseModel.none(3, 1)
    steps = stepsize or StepsizeSchedule("harmonic", 1.0, 10.0)
    init = None if initial is None else np.array(initial, dtype=float)
    return SimConfig(p, WeightSchedule(topo), noise, steps, horizon, initial=init, **kw)
