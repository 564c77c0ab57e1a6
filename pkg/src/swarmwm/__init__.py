"""Multi-UAV routing with a learned hierarchical symbolic world model.

Offline, a genetic-algorithm expert with potential-field collision
avoidance solves mission instances and its demonstrations are abstracted
into mission, route, and motion dictionaries with smoothed reference
distributions and inter-level transition matrices. Online, candidate
actions at each level are scored by the KL divergence between their
posterior symbolic belief and the expert reference, with EKF/PF state
estimation feeding the motion level.
"""

__version__ = "0.1.0"
