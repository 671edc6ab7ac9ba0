"""
Gaussian-process search on the Branin function
==============================================

"""
import math

from multiomic_enet import Dim, EpsgoConfig, SearchSpace, epsgo_minimize


# Branin rescaled to the unit square; its global minimum is 0.397887
def branin(u):
    x1, x2 = 15 * u[0] - 5, 15 * u[1]
    b, c, t = 5.1 / (4 * math.pi ** 2), 5 / math.pi, 1 / (8 * math.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10


space = SearchSpace((Dim("u1", 0.0, 1.0), Dim("u2", 0.0, 1.0)))

# 20 Latin hypercube points first, then one expected-improvement proposal per step
res = epsgo_minimize(branin, space, EpsgoConfig(max_evals=70, patience=70, seed=1))
print("stop reason:", res.stop_reason)
print("evaluations:", len(res.history))
print("best value:", round(res.best_value, 5), "at", [round(float(v), 4) for v in res.best_point])

# the running minimum after the initial design
best = math.inf
for rec in res.history:
    best = min(best, rec.value)
    if rec.phase != "init" and rec.index % 10 == 0:
        print(f"eval {rec.index:3d}  best so far {best:.5f}  EI {rec.ei:.2e}")

# a log2-scaled dimension is searched uniformly in the exponent
ratio = SearchSpace((Dim("ratio", -3, 3, scale="log2"),))
res = epsgo_minimize(lambda x: (math.log2(x[0]) - 1.0) ** 2, ratio, EpsgoConfig(max_evals=25, seed=0))
print("best ratio:", round(res.best_point[0], 3), "(optimum 2)")
