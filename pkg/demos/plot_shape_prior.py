"""
Sampling shapes from an n-gram prior
====================================

Token sequences of a training set feed a backoff n-gram model. New
sequences are drawn with temperature, top-k and nucleus filtering, then
decoded into grids.
"""

import numpy as np

from voxtok import latent_coder as lc, shape_prior as sp, shapes

grids = shapes.desk_grids(60, seed=3)
model, _ = lc.train_model(grids, k=256, seed=0, epochs=0)
sequences = [lc.encode(g, model) for g in grids]

prior = sp.fit_ngram(sequences, n=3)
print(f"order {prior.order}, {len(prior.counts)} distinct 3-grams")

# How much of the vocabulary survives the filters at the first step
p = sp.next_distribution(prior, [])
for cfg in (sp.SamplerConfig(), sp.SamplerConfig(top_p=0.9, temperature=1.0), sp.SamplerConfig(top_k=5)):
    kept = np.count_nonzero(sp.filtered_distribution(prior, [], cfg))
    print(f"top_k={cfg.top_k:5d} top_p={cfg.top_p:.1f} T={cfg.temperature:.1f}: {kept} candidate tokens")

# Most patches of a desk shape are empty space, so at the default settings
# the empty-patch token wins nearly every step. A flatter setting shows
# the spread of the prior.
for seed in range(3):
    drawn = sp.sample_sequence(prior, sp.SamplerConfig(top_p=0.95, temperature=1.0, seed=seed))
    grid = lc.decode(drawn, model)
    print(f"seed {seed}: {len(set(drawn.tolist()))} distinct tokens, {grid.count} occupied cells")

greedy = lc.decode(sp.greedy_sequence(prior), model)
print(f"greedy sample: {greedy.count} occupied cells")
