from .config import OUTPUT_ENV, ExperimentConfig, OptimizerSpec, load_suites
from .plots import check_svg, plot_curve, plot_panels, plot_table
from .results import ResultsTable, RunResult
from .suite import SuiteError, SuiteResult, run_bench, run_suite, write_suite
