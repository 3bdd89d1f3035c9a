"""Fuse a character model with CTC frame posteriors via prefix beam search.

A tiny model is overfit on the word "hello"; the synthetic "acoustic"
posteriors are noisy and, on their own, decode to the wrong string.  Adding
the language-model term recovers the word.  The per-hypothesis score is

    log p_ctc + lm_weight * log p_lm + insertion_bonus * length
"""

import numpy as np

from hrnnlm.corpus import build_vocab, tokenize_lines
from hrnnlm.decoding import BLANK_LABEL, DecodeConfig, PosteriorMatrix, \
    beam_search
from hrnnlm.hierarchy import NetworkSpec
from hrnnlm.training import TrainConfig, train

vocab = build_vocab("hello")
text = (("hello " * 8).strip() + "\n") * 10
result = train(NetworkSpec.for_vocab("hlstm_b", vocab, 8),
               tokenize_lines(text, vocab),
               TrainConfig(bptt_length=16, batch_size=2, max_epochs=40,
                           seed=0, momentum=0.95, clip_norm=1.0))
net = result.network
print(f"character model overfit on 'hello' "
      f"(train BPC {result.metrics[-1].train_bpc:.4f})\n")

labels = ["h", "e", "l", "o", BLANK_LABEL]
# noisy frame posteriors for h-e-l-(blank)-l-o with one extra frame
frames = np.array([
    [0.50, 0.20, 0.10, 0.10, 0.10],   # h, but not confidently
    [0.15, 0.45, 0.15, 0.10, 0.15],   # e
    [0.10, 0.25, 0.40, 0.10, 0.15],   # l vs e confusion
    [0.10, 0.10, 0.15, 0.10, 0.55],   # blank
    [0.10, 0.10, 0.45, 0.15, 0.20],   # l
    [0.10, 0.10, 0.15, 0.50, 0.15],   # o
    [0.15, 0.15, 0.15, 0.15, 0.40],   # blank-ish tail
])
post = PosteriorMatrix(labels=labels, probs=frames)

for lm_weight in (0.0, 2.0):
    config = DecodeConfig(beam_width=64, lm_weight=lm_weight,
                          insertion_bonus=1.6, width_prune=1e-4)
    results = beam_search(post, net, vocab, config)
    print(f"lm_weight={lm_weight}: best 3 of {len(results)} hypotheses")
    for r in results[:3]:
        print(f"  {r.text!r:12s} score={r.score:8.3f} "
              f"ctc={r.ctc_logp:8.3f} lm={r.lm_logp:8.3f}")
    print()
