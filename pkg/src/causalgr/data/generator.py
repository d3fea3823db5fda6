"""Synthetic preference sequences in the spirit of the dog/cat toy example.

Each user holds a sign per category (likes dogs, dislikes cats, ...).  Events
draw a category uniformly and the primary label is ``1{preferred}`` flipped
with probability ``noise_rate``; the other tasks are further independent flips
of the primary label.  A model that can read the user's history can recover
the preference, a sequence-blind one sits at chance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from causalgr.errors import ConfigError

TASK_NAMES = ("long_dwell", "contribution", "like")
DEFAULT_FLIPS = (0.0, 0.1, 0.2)
_CATALOG_STREAM = 0x17E4


def task_names(n_tasks: int) -> list[str]:
    names = list(TASK_NAMES[:n_tasks])
    names += [f"task_{i}" for i in range(len(names), n_tasks)]
    return names


def q9(x) -> np.ndarray | float:
    """Round to 9 significant digits so values survive a text round trip."""
    if np.isscalar(x):
        return float(f"{float(x):.9g}")
    return np.vectorize(lambda v: float(f"{v:.9g}"), otypes=[np.float64])(x)


@dataclass
class GeneratorConfig:
    n_users: int = 2000
    n_categories: int = 2
    items_per_category: int = 50
    seq_len: int = 64
    noise_rate: float = 0.05
    n_tasks: int = 3
    # per-task probability of flipping the primary label; entry 0 must be 0
    label_correlation: list[float] | None = None
    candidate_fraction: float = 0.25
    seed: int = 0
    min_seq_len: int | None = None
    feature_jitter: float = 0.1
    action_jitter: float = 0.1
    mode: str = "discrete"
    dwell_threshold: float = 30.0
    category_names: list[str] | None = None

    def __post_init__(self):
        if self.label_correlation is None:
            flips = list(DEFAULT_FLIPS[: self.n_tasks])
            flips += [0.15] * (self.n_tasks - len(flips))
            self.label_correlation = flips
        self.label_correlation = [float(x) for x in self.label_correlation]
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"generator.{name}: {why}")

        if self.n_users < 0:
            bad("n_users", "must be >= 0")
        if self.n_categories < 1:
            bad("n_categories", "must be >= 1")
        if self.items_per_category < 1:
            bad("items_per_category", "must be >= 1")
        if not 1 <= self.seq_len <= 1024:
            bad("seq_len", f"must lie in [1, 1024], got {self.seq_len}")
        if self.min_seq_len is not None and not 2 <= self.min_seq_len <= self.seq_len:
            bad("min_seq_len", "must lie in [2, seq_len]")
        if not 0.0 <= self.noise_rate < 0.5:
            bad("noise_rate", f"must lie in [0, 0.5), got {self.noise_rate}")
        if self.n_tasks < 1:
            bad("n_tasks", "must be >= 1")
        if len(self.label_correlation) != self.n_tasks:
            bad("label_correlation", f"needs {self.n_tasks} entries, got {len(self.label_correlation)}")
        if self.label_correlation[0] != 0.0:
            bad("label_correlation", "entry 0 (primary task) must be 0")
        if any(not 0.0 <= p < 0.5 for p in self.label_correlation):
            bad("label_correlation", "flip probabilities must lie in [0, 0.5)")
        if not 0.0 < self.candidate_fraction < 1.0:
            bad("candidate_fraction", f"must lie in (0, 1), got {self.candidate_fraction}")
        if self.mode not in ("discrete", "continuous"):
            bad("mode", "must be 'discrete' or 'continuous'")
        if self.category_names is not None and len(self.category_names) != self.n_categories:
            bad("category_names", "needs one name per category")

    @property
    def task_names(self) -> list[str]:
        return task_names(self.n_tasks)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"generator: unknown field(s) {', '.join(unknown)}")
        return cls(**raw)


@dataclass
class Event:
    item_id: int
    category_id: int
    features: list[float]
    timestamp: int
    labels: list[int]
    action_features: list[float]
    dwell_time: float | None = None


@dataclass
class UserSequence:
    user_id: int
    preference: list[int]
    events: list[Event]
    context_len: int

    def __len__(self) -> int:
        return len(self.events)

    @property
    def n_candidates(self) -> int:
        return len(self.events) - self.context_len

    def labels(self) -> np.ndarray:
        if not self.events:
            return np.zeros((0, 0), dtype=np.int64)
        return np.array([e.labels for e in self.events], dtype=np.int64)

    def truncated(self, n: int) -> "UserSequence":
        return UserSequence(self.user_id, list(self.preference), self.events[:n],
                            min(self.context_len, n))


def item_catalog(config: GeneratorConfig) -> np.ndarray:
    """Feature vector per item id: category one-hot plus fixed per-item jitter."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _CATALOG_STREAM]))
    n_items = config.n_categories * config.items_per_category
    cats = np.arange(n_items) // config.items_per_category
    feats = np.eye(config.n_categories)[cats]
    feats = feats + rng.normal(0.0, config.feature_jitter, feats.shape)
    return q9(feats)


def generate_user(config: GeneratorConfig, user_index: int, preference=None,
                  catalog: np.ndarray | None = None) -> UserSequence:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, user_index]))
    if catalog is None:
        catalog = item_catalog(config)
    k = config.n_categories
    pref = rng.choice(np.array([-1, 1]), size=k)
    if preference is not None:
        pref = np.asarray(preference, dtype=np.int64)
        if pref.shape != (k,):
            raise ConfigError(f"preference: needs {k} signs")
    length = config.seq_len
    if config.min_seq_len is not None:
        length = int(rng.integers(config.min_seq_len, config.seq_len + 1))

    cats = rng.integers(0, k, size=length)
    items = cats * config.items_per_category + rng.integers(0, config.items_per_category, size=length)
    primary = (pref[cats] > 0) ^ (rng.random(length) < config.noise_rate)
    labels = np.empty((length, config.n_tasks), dtype=np.int64)
    for t, flip in enumerate(config.label_correlation):
        labels[:, t] = primary ^ (rng.random(length) < flip)
    conf = rng.uniform(0.0, config.action_jitter, size=labels.shape)
    action_feats = q9(np.where(labels == 1, 1.0 - conf, conf))
    gaps = rng.integers(1, 3600, size=length)
    timestamps = 1_700_000_000 + np.cumsum(gaps)

    dwell = [None] * length
    if config.mode == "continuous":
        tau = config.dwell_threshold
        above = tau * (1.0 + rng.exponential(1.0, size=length))
        below = tau * rng.uniform(0.0, 1.0, size=length)
        dwell = q9(np.where(labels[:, 0] == 1, above, below)).tolist()
        # the long-dwell task is the thresholded dwell time
        labels[:, 0] = (np.asarray(dwell) > tau).astype(np.int64)

    n_cand = min(length - 1, max(1, int(round(config.candidate_fraction * length))))
    events = [
        Event(int(items[n]), int(cats[n]), catalog[items[n]].tolist(), int(timestamps[n]),
              labels[n].tolist(), action_feats[n].tolist(), dwell[n])
        for n in range(length)
    ]
    return UserSequence(int(user_index), pref.tolist(), events, length - n_cand)


def generate_dataset(config: GeneratorConfig) -> list[UserSequence]:
    catalog = item_catalog(config)
    return [generate_user(config, u, catalog=catalog) for u in range(config.n_users)]


def bayes_optimal_accuracy(config: GeneratorConfig) -> float:
    """Primary-task accuracy of the predictor that knows each user's preference."""
    return 1.0 - config.noise_rate


def preference_blind_accuracy(config: GeneratorConfig) -> float:
    """Balanced sign draws make every category's base rate 1/2."""
    return 0.5


DOG_CAT_CATEGORIES = ["dog", "cat"]


def dog_cat_config(seed: int = 0, seq_len: int = 8) -> GeneratorConfig:
    return GeneratorConfig(n_users=2, n_categories=2, items_per_category=4, seq_len=seq_len,
                           noise_rate=0.0, n_tasks=3, label_correlation=[0.0, 0.0, 0.0],
                           candidate_fraction=0.25, seed=seed, category_names=DOG_CAT_CATEGORIES)


def dog_cat_dataset(seed: int = 0, seq_len: int = 8) -> list[UserSequence]:
    """User A likes dogs and dislikes cats; user B the reverse.  Noise free."""
    config = dog_cat_config(seed, seq_len)
    catalog = item_catalog(config)
    return [generate_user(config, 0, preference=[1, -1], catalog=catalog),
            generate_user(config, 1, preference=[-1, 1], catalog=catalog)]
