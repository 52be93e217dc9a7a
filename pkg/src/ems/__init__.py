"""Cross-lingual sentence embeddings from a shared dual transformer encoder
trained with token-level reconstruction plus in-batch contrastive alignment."""

__version__ = "0.1.0"
