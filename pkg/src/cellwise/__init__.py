"""Cellwise robust statistics: detection, cellMCD, cellPCA, regression,
sparse precision matrices and breakdown experiments."""

__version__ = "0.1.0"

from .data import DataMatrix, column_summaries, read_csv, robust_zscores, write_csv
from .kernels import (RhoTanhParams, case_contamination_probability, mscale, psi_tanh,
                      rho_tanh, weight_tanh)
from .detect import DetectionResult, ddc, flag_marginal
from .cellmcd import CellMcdConfig, CellMcdModel, cellmcd_objective, em_update, fit_cellmcd, update_W_row
from .cellpca import CellPcaConfig, PcaModel, cellpca_objective, fit_cellpca, mcd_on_scores
from .regression import RegressionModel, fit_cellreg, predict
from .precision import PrecisionModel, glasso, pairwise_cov, psd_fix
from .breakdown import (AttackReport, ContaminationSpec, OutlierGenerator, contaminate,
                        empirical_breakdown, hyperplane_attack, maxangle)
from .render import CellmapSpec, render_cellmap
