"""
Replay the bundled five-ticker universe end to end through the CLI.

Copies tests/fixtures/universe into a scratch directory (the run writes
next to its config) and runs every command in replay mode, so the LLM
answers come from the recorded cassette and no network is touched.

    python3 demos/replay_fixture_universe.py [--keep]
"""
import argparse
import shutil
import tempfile
from pathlib import Path

from marketsense.cli import main

SRC = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "universe"

ap = argparse.ArgumentParser()
ap.add_argument("--keep", action="store_true", help="leave the scratch directory in place")
args = ap.parse_args()

scratch = Path(tempfile.mkdtemp(prefix="marketsense-demo-"))
uni = scratch / "universe"
shutil.copytree(SRC, uni)
cfg = str(uni / "config.toml")

steps = [
    ["ingest"],
    ["analyze", "--ticker", "CCC", "--as-of", "2024-03-01"],
    ["signals"],
    ["backtest"],
    ["factor"],
    ["rag-eval"],
    ["sentiment-stats"],
]
for step in steps:
    print(f"\n$ marketsense --config {cfg} {' '.join(step)}")
    code = main(["--config", cfg] + step)
    if code:
        raise SystemExit(f"{step[0]} exited with {code}")

run_dir = next((uni / "runs").iterdir())
print(f"\nrun directory: {run_dir}")
for p in sorted(run_dir.rglob("*")):
    if p.is_file() and p.parent.name in ("backtest", "factor", "rag_eval", "sentiment"):
        print("  ", p.relative_to(run_dir))

if args.keep:
    print(f"kept {scratch}")
else:
    shutil.rmtree(scratch)
