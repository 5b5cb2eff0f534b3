"""Exception hierarchy shared by every ExpanderBench component"""


class ExpanderBenchError(Exception):
    """Base class for all errors raised by the toolkit"""


class TopologyError(ExpanderBenchError):
    """Invalid topology parameters or an unrealizable rewiring"""


class RoutingError(ExpanderBenchError):
    """Unreachable destination or disconnected switch graph"""


class TrafficError(ExpanderBenchError):
    """Infeasible traffic pattern, malformed traffic matrix or placement shortfall"""


class SimulationError(ExpanderBenchError):
    """Inputs the fluid simulator cannot handle"""


class ExpansionError(ExpanderBenchError):
    """Invalid partition or expansion-bound arguments"""


class ConfigError(ExpanderBenchError):
    """Bad experiment configuration"""


class FormatError(ExpanderBenchError):
    """Malformed text dump"""
