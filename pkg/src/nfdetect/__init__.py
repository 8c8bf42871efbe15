"""CNN-BiLSTM anomaly detection for NetFlow traffic, built on a small numpy core."""

__version__ = "0.1.0"
