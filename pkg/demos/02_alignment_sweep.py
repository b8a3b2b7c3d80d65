"""Train the same network with increasing weight on the auxiliary-alignment
penalty and watch what happens to the test metrics and to the Shapley
feature ranking.

This skips the pair search and hyperparameter selection of the full
protocol (see 03_full_protocol.py) and uses the pair and config those steps
pick on the default cohort, so it runs in well under a minute.

    python demos/02_alignment_sweep.py
"""
from mmprog.cohort import SplitSpec, SyntheticSpec, fit_preprocessor, generate_synthetic, split
from mmprog.evaluation import shap_report
from mmprog.models import fit_auxiliary
from mmprog.regularization import RegKind, RegularizerSpec
from mmprog.training import TrainConfig, make_batch, run_sweep

cohort = generate_synthetic(SyntheticSpec())
aux_set, kf, test = split(cohort, SplitSpec(seed=0))

# The interpretable model: logistic regression on age and LDH, fit on the
# auxiliary split only.
prep = fit_preprocessor(aux_set)
aux = fit_auxiliary(prep.transform(aux_set.raw), aux_set.labels, ("age", "ldh"), prep)
print("auxiliary model weights (age, ldh):", aux.weights.round(3), "bias", round(aux.bias, 3))

config = TrainConfig((18, 16, 1), learning_rate=0.01, epochs=100)
sweep = run_sweep((0.0, 1.0, 2.0, 4.0, 8.0), config, RegularizerSpec(RegKind.AA, aux=aux), kf, {"test": test})

print("\nalpha  accuracy  auc    loss   KL to auxiliary")
for r in sweep.rows["test"]:
    print(f"{r.alpha:5.0f}  {r.accuracy:.3f}     {r.auc:.3f}  {r.loss1:.3f}  {r.reg_loss:.4f}")

# Attribution on the test split; the network sees standardized features.
X_test = make_batch(test, fit_preprocessor(kf)).X
print("\ntop Shapley features (200 permutations per patient)")
for alpha, model in sweep.models.items():
    rep = shap_report(model.predict, X_test, n_permutations=200)
    print(f"alpha={alpha:g}: {', '.join(rep.ranking[:4])}")
