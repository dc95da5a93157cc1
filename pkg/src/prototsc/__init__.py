from .attribution import attribute
from .attribution import AttributionRecord
from .benchmark import aggregate
from .benchmark import BenchmarkReport
from .benchmark import run_benchmark
from .config import load_config
from .config import RunConfig
from .config import TrainConfig
from .config import VARIANTS
from .data import load_ts
from .data import make_synthetic_split
from .data import parse_ts
from .data import read_csv
from .data import SyntheticSpec
from .data import TimeSeriesDataset
from .errors import DataError
from .errors import NumericError
from .errors import ParseError
from .errors import PrototscError
from .errors import SchemaError
from .errors import ShapeError
from .errors import UsageError
from .model import load_checkpoint
from .model import PrototypeClassifier
from .model import save_checkpoint
from .prototypes import GammaSchedule
from .prototypes import PrototypeBank
from .tensor import no_grad
from .tensor import Tensor
from .train import evaluate
from .train import train
from .validators import ValidationError

__all__ = [
    "attribute",
    "AttributionRecord",
    "aggregate",
    "BenchmarkReport",
    "run_benchmark",
    "load_config",
    "RunConfig",
    "TrainConfig",
    "VARIANTS",
    "load_ts",
    "make_synthetic_split",
    "parse_ts",
    "read_csv",
    "SyntheticSpec",
    "TimeSeriesDataset",
    "DataError",
    "NumericError",
    "ParseError",
    "PrototscError",
    "SchemaError",
    "ShapeError",
    "UsageError",
    "load_checkpoint",
    "PrototypeClassifier",
    "save_checkpoint",
    "GammaSchedule",
    "PrototypeBank",
    "no_grad",
    "Tensor",
    "evaluate",
    "train",
    "ValidationError",
]
