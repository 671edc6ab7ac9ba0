"""
Ranking persons by per-layer risk
=================================

"""
import numpy as np

from multiomic_enet import MethodSpec, SETTINGS, aggregate_ranks, per_layer_probabilities
from multiomic_enet import reduce_setting, run_method, sample_dataset
from multiomic_enet.ranking import validate_associations
from multiomic_enet.simulate import standardize_dataset

data = standardize_dataset(sample_dataset(reduce_setting(SETTINGS["C"], 60), seed=7))
stack, y = data.train

# per-layer selection with the two-step method
result = run_method(stack, y, MethodSpec("two_step_fixed", cv_folds=5))
print("selected per layer:", {k: len(v) for k, v in result.per_layer_selected.items()})

# one ridge model per layer on its own selection, scored for everybody
train = np.ones(stack.n_rows, dtype=bool)
probs, excluded = per_layer_probabilities(stack, y, train, result.per_layer_selected, n_folds=5)
table = aggregate_ranks(probs, stack.row_ids, result.predict_proba(stack), excluded)

# rank 1 is the highest probability; the aggregate is the mean over layers
top = np.argsort(table.aggregate_rank)[:5]
for i in top:
    print(table.persons[i], "case" if y[i] else "control",
          "ranks", [float(table.per_layer_rank[k][i]) for k in table.layers],
          "aggregate", float(table.aggregate_rank[i]))
print("mean normalized rank, cases vs controls:",
      round(table.normalized_rank[y == 1].mean(), 3), round(table.normalized_rank[y == 0].mean(), 3))

# association of a selected column with a continuous trait, adjusted for age and sex
rng = np.random.default_rng(0)
j = result.selected[0]
trait = stack.matrix[:, j] + rng.standard_normal(stack.n_rows)
age, sex = rng.uniform(20, 70, stack.n_rows), rng.integers(0, 2, stack.n_rows)
for row in validate_associations({stack.column_names[j]: stack.matrix[:, j]}, {"trait": trait}, age, sex):
    print("association:", row[:2], "coef", round(row[2], 3), "adjusted p", f"{row[4]:.1e}")
