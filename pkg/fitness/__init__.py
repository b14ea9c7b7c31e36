from .classes import ALL_CLASSES, BaselineProfile, Category, EquivalenceClass, FitnessObservation, classify
from .base_backend import FitnessBackend
from .oracle_rules import DataEnvironment, MicroarchProfile, RuleTrace, get_profile, simulate, trace
from .sim_backend import SimulatedBackend
