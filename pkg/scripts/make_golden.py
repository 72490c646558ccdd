"""Regenerate tests/golden/reconstruction.json (a short 16x16 exact-data run)."""
import json
from pathlib import Path

from carleman_rte import studies

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden" / "reconstruction.json"


def golden_run():
    study = studies.reconstruction_study((0.0,), iterations=20, n=16)
    run = study.runs[0]
    return {"n": 16, "iterations": 20, "J": [float(j) for j in run.J], "errors": [float(e) for e in run.errors],
            "status": run.status}


if __name__ == "__main__":
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text(json.dumps(golden_run(), indent=2) + "\n")
    print(f"wrote {GOLDEN}")
