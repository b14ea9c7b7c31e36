from .errors import SpecSwarmError
from .catalog import Catalog, InstructionInstance, InstructionPool, InstructionSpec, build_pool, load_catalog
from .encoding import PositionCode, decode_instance, decode_sequence, encode_instance, encode_sequence
from .evaluation_log import EvaluationLog
