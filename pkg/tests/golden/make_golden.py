"""Regenerate the frozen regression outputs (run from the repo root)."""

import pathlib
import shutil
import subprocess
import sys
import tempfile

HERE = pathlib.Path(__file__).parent
CONFIG = HERE / "golden_config.toml"

with tempfile.TemporaryDirectory() as tmp:
    subprocess.run([sys.executable, "-W", "ignore", "-m", "zonemm.cli", "solve",
                    "--config", str(CONFIG), "--out", tmp,
                    "--snapshot-times", "0,50"], check=True)
    shutil.copy(pathlib.Path(tmp) / "value_policy.csv", HERE / "value_policy.csv")
    subprocess.run([sys.executable, "-W", "ignore", "-m", "zonemm.cli", "imbalance",
                    "--config", str(CONFIG), "--out", tmp,
                    "--inventories=-15,0,15"], check=True)
    shutil.copy(pathlib.Path(tmp) / "imbalance.csv", HERE / "imbalance.csv")
print("golden files refreshed")
