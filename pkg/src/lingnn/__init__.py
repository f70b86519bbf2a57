"""Linear and multiscale graph neural networks: exact gradients, gradient-flow
training and numerical checks of linear-rate convergence bounds."""

from .errors import (ComparisonUndefinedError, ConfigurationError, DimensionError,
                     LinGNNError, ParseError, ReportError, UnsupportedArchitectureError)
from .graph import AggregationKind, Graph, aggregation_matrix, train_index
from .gradients import (GradientSet, LossKind, ResidualGrad, analytic_gradients,
                        finite_difference_gradients, loss_and_gradients)
from .model import Architecture, GnnParams, end_to_end, forward, init_params, layer_products
from .theory import (BoundCase, GraphProblem, condition_report, convergence_bound_trace,
                     differential_inequality_check, end_to_end_dynamics_check, global_minimum,
                     loss_reduction_decomposition, margin_trace, signal_term_report,
                     skip_acceleration_check)

__version__ = "0.1.0"
