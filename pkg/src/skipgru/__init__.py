"""Session-based sequential skip prediction: GRU encoder, enrichment,
multi-task head, track-embedding pretraining, evaluation and ensembling."""

__version__ = "0.1.0"
