from ddic.bell import BellInequality, chsh, tilted
from ddic.covering import Covering, biseparable_bound, full_covering, minimal_covering, ring_covering
from ddic.protocol import Certificate, MeasurementStrategy, critical_visibility, ingest_counts, run_ddic
from ddic.states import BiseparableModel, ghz, linear_cluster, tilted_ghz

__version__ = "1.0.0"
