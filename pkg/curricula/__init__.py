from . import benchgen
from . import clips
from . import config
from . import curriculum
from . import dataset
from . import exceptions
from . import metrics
from . import sampling
from . import trainer
from . import types
from . import utils
from .benchgen import generate_benchmark
from .curriculum import build_schedule
from .curriculum import run_schedule
from .curriculum import run_strategy
from .exceptions import CurriculaError
from .metrics import evaluate
from .trainer import ReferenceTrainer

# plots is not imported here: it switches matplotlib to the Agg backend

__all__ = [
    "CurriculaError",
    "ReferenceTrainer",
    "benchgen",
    "build_schedule",
    "clips",
    "config",
    "curriculum",
    "dataset",
    "evaluate",
    "exceptions",
    "generate_benchmark",
    "metrics",
    "run_schedule",
    "run_strategy",
    "sampling",
    "trainer",
    "types",
    "utils",
]
