"""Self-supervised embeddings for wrist accelerometer windows, linear-probe
evaluation, and unsupervised salient-activity segmentation."""

__version__ = "0.1.0"
