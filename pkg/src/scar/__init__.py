"""CQI clustering, RBF classification and RL-tuned fair scheduling for OFDMA downlinks."""

__version__ = "0.1.0"
