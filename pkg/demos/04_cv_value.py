"""Cross-validated value of the fitted rule on a single trial.

Without counterfactual labels, a rule is judged by the mean improvement of
held-out subjects whose randomized arm agrees with its recommendation.  Here
10-fold CV is repeated 10 times (the full protocol uses 100).
"""

from trajkld.evaluation import CvPlan, cross_validate
from trajkld.rules import ConstantBuilder, LsKldBuilder, changescore_builder
from trajkld.simulation import Scenario, gen_dataset

data, _ = gen_dataset(Scenario(10.0, 2, n_train_per_group=150, seed=3), 0)
plan = CvPlan(n_folds=10, n_repeats=10, seed=3)
for name, builder in {"ls-kld": LsKldBuilder(), "change score": changescore_builder,
                      "all arm 1": ConstantBuilder(1), "all arm 2": ConstantBuilder(2)}.items():
    res = cross_validate(data, builder, plan)
    print(f"{name:12s} value {res.mean:7.3f}  (sd over folds {res.sd:.3f}, {res.n_failed} failed)")
