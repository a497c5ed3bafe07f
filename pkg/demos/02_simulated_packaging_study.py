"""
A full simulated run of the packaging study
===========================================

The bundled two-condition study (362 personas) is run end to end with the
simulated respondent, analysed with Welch tests and classified against the
original findings.  Nothing here calls a real model.
"""

import tempfile
from pathlib import Path

from replisim import analyze_study, assign_conditions, build_prompt, data_path, load_study, run_study, sample_personas
from replisim.assess import assess_study

study_file = data_path("packaging_study1a.json")
study = load_study(study_file)
print(study.study_id, "with", len(study.conditions), "conditions and n =", study.n)

# %%
# Run the pipeline into a scratch directory.  The ledger, dataset, exclusion
# report and manifest all land there.
out = Path(tempfile.mkdtemp(prefix="replisim_demo_"))
result = run_study(study_file, out, sim_model_path=data_path("packaging_study1a_model.json"), seed_personas=1)
print(sorted(p.name for p in out.iterdir()))
print(len(result.dataset), "usable rows;", len(result.dataset.exclusions), "exclusions")

# %%
# One persona's prompt, as the model would see it.  The source label and
# blind terms never appear; a study that leaks them is refused before any
# request goes out.
persona = assign_conditions(sample_personas(study.sample, study.n, 1), study.conditions, 0)[0]
print(build_prompt(persona, study.condition(persona.condition_id), study.measures, study).full_text())

# %%
# Analyse every planned finding.
report = analyze_study(result.dataset, study)
for f in report.findings:
    r = f.result
    print(f"{f.finding_id:<28} t={r.statistic:6.2f}  p={r.p:.2g}  d={r.effect_size.value:.2f}")

# %%
# And compare with the original study.
outcomes, errors = assess_study(study.analysis_plan, report.findings, report.manipulation_failed)
for o in outcomes:
    print(f"{o.finding_id:<28} {o.verdict:<15} {o.mechanism}")
