"""Privacy-preserving detection and correction of global class imbalance in federated learning."""

__version__ = "0.1.0"
