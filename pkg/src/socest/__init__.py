"""Battery state-of-charge estimation toolkit.

Second-order Thevenin equivalent-circuit model, OCV and passive-component
fitting, four SoC estimators (Coulomb counting, EKF, two adaptive EKFs),
and a Monte Carlo benchmark harness.
"""

__version__ = "0.1.0"

from .ecm import CellState, EcmParams, OcvTable, Profile

__all__ = ["CellState", "EcmParams", "OcvTable", "Profile", "__version__"]
