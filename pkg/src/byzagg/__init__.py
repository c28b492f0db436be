"""Byzantine-robust aggregation for simulated federated learning."""

__version__ = "0.1.0"
