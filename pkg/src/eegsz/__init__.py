"""EEG schizophrenia classification: ingestion, filtering, a numpy network engine,
PSD+SVM baseline and a cross-validation ablation harness."""

__version__ = "0.1.0"
