"""Causality-aware generative recommender architectures.

Subpackages:

* ``numeric``   -- tensors and a reverse-mode tape on top of numpy
* ``attention`` -- causal / strict-causal kernels, RoPE, evaluation masks, FLOP accounting
* ``models``    -- interleaved baseline, AttnLFA, AttnMVP (+ ablation), AttnDHN, MMoE head
* ``data``      -- synthetic preference sequences, dataset files, batching
* ``training``  -- multi-task BCE, NE, Adam, train/evaluate/benchmark
* ``cli``       -- ``causalgr`` command line runner
"""

__version__ = "0.1.0"
