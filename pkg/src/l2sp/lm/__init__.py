from .model import ModelConfig, ToyModel
from .train import (
    LogProbReport,
    NodeEmbedding,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    clm_loss,
    corpus_loss,
    extract_node_embedding,
    finite_difference_gradcheck,
    sequence_logprob,
    train,
)
from .vocab import BOS, EOS, PAD, UNK, TokenizedText, Vocab, build_vocab_and_tokenize, tokenize_path, tokenize_text

__all__ = [
    "BOS",
    "EOS",
    "PAD",
    "UNK",
    "LogProbReport",
    "ModelConfig",
    "NodeEmbedding",
    "TokenizedText",
    "ToyModel",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "Vocab",
    "build_vocab_and_tokenize",
    "clm_loss",
    "corpus_loss",
    "extract_node_embedding",
    "finite_difference_gradcheck",
    "sequence_logprob",
    "tokenize_path",
    "tokenize_text",
    "train",
]
