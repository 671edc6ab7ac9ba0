"""
Integration strategies on one simulated replicate
=================================================

"""
import warnings

from multiomic_enet import MethodSpec, SETTINGS, reduce_setting, run_method, sample_dataset
from multiomic_enet.simulate import score_method, standardize_dataset

warnings.simplefilter("ignore", RuntimeWarning)

# setting B with each omic layer shrunk to at most 100 columns
setting = reduce_setting(SETTINGS["B"], 100)
print(setting.name, "P1 =", setting.P1, "P2 =", setting.P2,
      "relevant =", setting.P1r, "+", setting.P2r)

# standardize with training moments, apply them to the 1000 test rows
data = standardize_dataset(sample_dataset(setting, seed=3))
stack, y = data.train

for kind in ("univariate_wald", "two_step_fixed", "two_step_epsgo", "naive_en", "sipf_en"):
    result = run_method(stack, y, MethodSpec(kind, seed=3))
    m = score_method(result, data)
    print(f"{kind:16s} MR={m.mr:.3f}  selected={m.n_selected:3d}  "
          f"precision={m.precision:.2f}  recall={m.recall:.2f}")
    if kind == "two_step_epsgo":
        print("  alpha per layer:", {k: round(v, 3) for k, v in result.hyperparams["alpha"].items()})
