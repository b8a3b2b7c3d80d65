"""Generate the default synthetic cohort and look at how five-year mortality
splits across R-ISS stages.

    python demos/01_cohort_and_staging.py
"""
from mmprog.cohort import TARGET_STAGE_RATES, SplitSpec, SyntheticSpec, generate_synthetic, split, stage_rates
from mmprog.staging import riss_stage, stage_cohort

# A few hand-picked patients first: staging works on raw clinical units.
for b2m, ldh, albumin, age in [(2.0, 200, 40, 60), (6.0, 300, 30, 60), (2.0, 240, 40, 60), (2.0, 240, 40, 75)]:
    print(f"b2m={b2m:4} ldh={ldh} albumin={albumin} age={age} -> stage {int(riss_stage(b2m, ldh, albumin, age))}")
# The last two differ only in age: LDH 240 is high below 70, normal from 70 on.

cohort = generate_synthetic(SyntheticSpec())
staged = stage_cohort(cohort)
print(f"\n{len(cohort)} patients, overall death rate {cohort.labels.mean():.3f}")
print("patients per stage:", staged.counts())
for s, (got, target) in enumerate(zip(stage_rates(staged.stages, cohort.labels), TARGET_STAGE_RATES), start=1):
    print(f"stage {s}: death rate {got:.3f} (generator target {target:.3f})")

aux, kf, test = split(cohort, SplitSpec(seed=0))
print(f"\nsplit sizes: auxiliary {len(aux)}, cross-validation {len(kf)}, test {len(test)}")
