"""Self-evolution fine-tuning loop: feedback-filtered data curation, refinement
inference strategies, and exact verification of the training objective."""

__version__ = "0.1.0"
