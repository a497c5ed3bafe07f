"""
Interrupting and resuming a run
===============================

The run ledger is an append-only JSONL file.  Cutting it short, even in the
middle of a line, and resuming should issue only the missing requests and
end with exactly the same dataset.
"""

import tempfile
from pathlib import Path

from replisim import data_path, run_study
from replisim.gateway import ProviderConfig

study = data_path("packaging_study1a.json")
model = data_path("packaging_study1a_model.json")
root = Path(tempfile.mkdtemp(prefix="replisim_resume_"))

clean = run_study(study, root / "clean", sim_model_path=model, config=ProviderConfig(max_parallel=8))
print(clean.ledger.requests_issued, "requests in the clean run")

# %%
# Simulate a crash after 150 records, with half of the 151st line written.
broken = root / "broken"
run_study(study, broken, sim_model_path=model)
ledger = broken / "ledger.jsonl"
lines = ledger.read_text().splitlines(keepends=True)
ledger.write_text("".join(lines[:150]) + lines[150][:40])

# %%
# Resume.  The torn line is ignored and 212 personas are asked again.
resumed = run_study(study, broken, sim_model_path=model, resume=True)
print(resumed.ledger.requests_issued, "requests on resume")
same = (broken / "dataset.csv").read_bytes() == (root / "clean" / "dataset.csv").read_bytes()
print("identical dataset:", same)
