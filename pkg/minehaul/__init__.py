"""minehaul: open-pit haul-road simulation and imitation-learning stack.

A deterministic 2D mining-truck world with a scripted expert, a from-scratch
numpy network that predicts evidential K-lookahead commands, uncertainty-aware
command fusion for deployment, and a three-task closed-loop benchmark.
"""

__version__ = "1.0.0"
__author__ = "minehaul maintainers"
__description__ = "Haul-road truck simulator and evidential lookahead planner"
