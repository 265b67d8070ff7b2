(
    " stochastic_mtt  Multi-target tracking experiments with:"
    " - EKF, UKF, CKF and stochastic integration filters"
    " - GNN association with Mahalanobis gating"
    " - Simulated terminal-area and ADS-B replay scenarios"
    " - OSPA, SIAP and covariance-norm metrics"
)

__version__ = "0.1.0"
