"""Collaborative filtering with multinomial VAEs and text-estimated user priors."""

from .baselines import MatrixFactorization, RandomRanker, TextKnn, rand_rank, text_knn_rank
from .data import (FoldInPair, InteractionMatrix, ReviewRecord, SplitSpec,
                   apply_cutoffs, binarize, build_matrix, fold_in_pairs,
                   fold_in_split, load_reviews, save_reviews, split_users)
from .lda import LdaModel, build_lda_priors, lda_train, lda_user_encoding
from .metrics import EvalReport, evaluate, ndcg_at_k, recall_at_k
from .models import (VaeRecommender, anneal_beta, kl_diag_gaussians,
                     multinomial_ll)
from .text import (EmbeddingTable, PriorTable, build_embedding_priors,
                   build_random_priors, load_embeddings, review_embedding,
                   tokenize, user_prior_random)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingTable", "EvalReport", "FoldInPair", "InteractionMatrix", "LdaModel",
    "MatrixFactorization", "PriorTable", "RandomRanker", "ReviewRecord", "SplitSpec",
    "TextKnn", "VaeRecommender", "anneal_beta", "apply_cutoffs", "binarize",
    "build_embedding_priors", "build_lda_priors", "build_matrix", "build_random_priors",
    "evaluate", "fold_in_pairs", "fold_in_split", "kl_diag_gaussians", "lda_train",
    "lda_user_encoding", "load_embeddings", "load_reviews", "multinomial_ll",
    "ndcg_at_k", "rand_rank", "recall_at_k", "review_embedding", "save_reviews",
    "split_users", "text_knn_rank", "tokenize", "user_prior_random",
]
