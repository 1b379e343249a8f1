"""cleanbench: a benchmark harness for data cleaning methods in ML pipelines.

Injects controlled errors into clean tabular data, runs detection and repair
strategies, trains downstream models under five train/test data-version
scenarios, and scores every stage with cell-level metrics plus Wilcoxon
signed-rank significance testing.
"""

from .tabular import (
    CellRef,
    CellValue,
    Column,
    Dataset,
    DatasetPair,
    DetectionMask,
    SplitSpec,
    diff_cells,
    load_csv,
    save_csv,
    split,
)
from .inject import ErrorProfile, ErrorSpec, InjectionReport, inject, make_synthetic
from .models import EncodedMatrix, ModelSpec, encode, silhouette
from .stats import ABTestResult, PairedSample, summarize, wilcoxon_signed_rank
from .store import ResultsStore
from .bench import (
    BenchmarkConfig,
    ExperimentGrid,
    ab_compare,
    plan_experiments,
    run_benchmark,
    run_robustness_sweep,
    run_scalability_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "ABTestResult",
    "BenchmarkConfig",
    "CellRef",
    "CellValue",
    "Column",
    "Dataset",
    "DatasetPair",
    "DetectionMask",
    "EncodedMatrix",
    "ErrorProfile",
    "ErrorSpec",
    "ExperimentGrid",
    "InjectionReport",
    "ModelSpec",
    "PairedSample",
    "ResultsStore",
    "SplitSpec",
    "ab_compare",
    "diff_cells",
    "encode",
    "inject",
    "load_csv",
    "make_synthetic",
    "plan_experiments",
    "run_benchmark",
    "run_robustness_sweep",
    "run_scalability_sweep",
    "save_csv",
    "silhouette",
    "split",
    "summarize",
    "wilcoxon_signed_rank",
]
