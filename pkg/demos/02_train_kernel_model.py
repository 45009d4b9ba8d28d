"""Train the kernel-weighted conditional estimator on synthetic data.

Generates a two-event cohort whose hazards depend on disjoint feature
blocks, trains the embedding with the leave-one-out likelihood, compresses
the training set into exemplar clusters, and compares held-out metrics
against the population-level estimate (which ignores features entirely).

Runs in about half a minute.
"""

import numpy as np

from kernelaj import (
    EmbeddingConfig,
    SynthConfig,
    TrainConfig,
    generate_synthetic,
    predict_cif_grid,
    split,
)
from kernelaj.cli import fit_pipeline
from kernelaj.metrics import build_eval_grid, evaluate_cif_predictions

cfg = SynthConfig(
    n=3000, p=8,
    w1=(0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0),   # event 1 driven by x1..x4
    w2=(0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5),   # event 2 driven by x5..x8
    censoring_rate=0.5, seed=7,
)
cohort = generate_synthetic(cfg)
train, valid, test = split(cohort, seed=0)
print(f"cohort: {cohort.n} subjects, {100 * (cohort.event == 0).mean():.0f}% censored")
print(f"splits: train {train.n} / valid {valid.n} / test {test.n}")

ecfg = EmbeddingConfig(input_dim=8, num_layers=2, hidden_units=32, embed_dim=8,
                       activation="relu", init_seed=0)
tcfg = TrainConfig(learning_rate=0.1, batch_size=512, max_epochs=60,
                   patience=10, num_time_steps=64,
                   early_stop_criterion="ibs", seed=0)
model, logs = fit_pipeline(train, valid, ecfg, tcfg, epsilon=0.3,
                           min_kernel_weight=0.01)
log = logs["train"]
print(f"\ntrained for {len(log.rows)} epochs; best validation IBS "
      f"{log.best_value:.4f} at epoch {log.best_epoch}")
print(f"cluster compression: {train.n} training points -> "
      f"{model.clusters.num_clusters} exemplars")

eval_grid = build_eval_grid(test.time[test.event != 0])
cif, _, fallback = predict_cif_grid(model, test.features)
scores = evaluate_cif_predictions(cif, model.grid.times, test, eval_grid)

pop = model.population_curves()
pop_cif = np.stack([np.tile(c.values, (test.n, 1)) for c in pop.cifs])
pop_scores = evaluate_cif_predictions(pop_cif, model.grid.times, test, eval_grid)

print(f"\nheld-out metrics ({fallback.sum()} fallback predictions):")
print("             event 1   event 2")
print(f"  ctd        {scores['ctd'][0]:.4f}    {scores['ctd'][1]:.4f}")
print(f"  ibs        {scores['ibs'][0]:.4f}    {scores['ibs'][1]:.4f}")
print(f"  ibs (pop)  {pop_scores['ibs'][0]:.4f}    {pop_scores['ibs'][1]:.4f}")
print("\nthe conditional model discriminates (ctd > 0.5) and improves on the "
      "feature-blind population estimate (lower ibs)")
