"""Synthetic behaviour sequences, dataset files, late-fusion counts and batching."""
from causalgr.data.batching import make_batches, n_batches, synth_late_fusion
from causalgr.data.generator import (
    TASK_NAMES,
    Event,
    GeneratorConfig,
    UserSequence,
    bayes_optimal_accuracy,
    dog_cat_config,
    dog_cat_dataset,
    generate_dataset,
    generate_user,
    item_catalog,
    preference_blind_accuracy,
    task_names,
)
from causalgr.data.io import read_dataset, write_dataset


def split_users(sequences, eval_fraction: float):
    """Deterministic hold-out: the last ``eval_fraction`` of users are evaluation users."""
    n_eval = max(1, int(round(eval_fraction * len(sequences)))) if sequences else 0
    n_eval = min(n_eval, max(len(sequences) - 1, 0))
    cut = len(sequences) - n_eval
    return list(sequences[:cut]), list(sequences[cut:])


__all__ = [
    "TASK_NAMES", "Event", "GeneratorConfig", "UserSequence", "bayes_optimal_accuracy",
    "dog_cat_config", "dog_cat_dataset", "generate_dataset", "generate_user", "item_catalog",
    "make_batches", "n_batches", "preference_blind_accuracy", "read_dataset", "split_users",
    "synth_late_fusion", "task_names", "write_dataset",
]
