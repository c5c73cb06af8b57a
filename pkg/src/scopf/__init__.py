"""Security-constrained optimal power flow with automatic primary response.

Library layout:

- :mod:`scopf.grid` -- grid documents, PTDF machinery, flow cuts
- :mod:`scopf.apr` -- primary-response oracle (response, bisection, scan)
- :mod:`scopf.formulations` -- MILP models and the solver contract
- :mod:`scopf.solvers` -- reference HiGHS backend
- :mod:`scopf.ccga` -- exact loop, feasibility recovery, bounds race
- :mod:`scopf.datagen` -- instance generation, labeling, dataset files
- :mod:`scopf.learner` -- dispatch predictor and dual training
- :mod:`scopf.metrics`, :mod:`scopf.cli` -- benchmark harness and CLI
"""

from .apr import ContingencyState, ViolationReport, apr_response, bisect_balance, scan_violations
from .ccga import (
    CcgaConfig,
    CcgaResult,
    GapTrace,
    MasterInfeasibleError,
    run_bounds_race,
    run_ccga,
    run_fr_ccga,
)
from .datagen import Dataset, generate_loads, label_instances, load_dataset, save_dataset, split_dataset
from .formulations import CutSet, MilpModel, SolverBackend, build_extensive, build_fr_master, build_master
from .grid import (
    FlowCuts,
    Grid,
    GridError,
    LoadVector,
    PtdfModel,
    build_ptdf,
    flow_cuts,
    load_grid,
    load_vector,
    parse_grid,
)
from .learner import (
    MlpModel,
    TrainConfig,
    TrainedModel,
    forward,
    load_model,
    predict,
    save_model,
    train_ccga_dnn,
    train_lagrangian,
)
from .solvers import HighsBackend

__version__ = "0.1.0"
