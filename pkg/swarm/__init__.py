from .particle import Particle, Swarm, initialize_swarm
from .operators import crossover_with_leader, mutate_instruction, mutate_operands, reduce_dimension
from .coordinator import SubSwarm, form_subswarms, select_leader
from .phases import EvaluationRecord, Evaluator, cognitive_phase, mixed_phase
