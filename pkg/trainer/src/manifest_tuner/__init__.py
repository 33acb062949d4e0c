"""manifest-tuner: adapter fine-tuning on distilled manifest corpora."""

__version__ = "0.1.0"
