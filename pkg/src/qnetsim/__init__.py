"""qnetsim: a distributed quantum network simulator.

Applications talk to per-node simulation servers over a compact binary
protocol; entanglement between nodes is simulated by migrating and
merging state-vector registers behind the scenes.
"""

__version__ = "0.1.0"
