import os

import pytest


def pytest_collection_modifyitems(config, items):
    run_slow = os.environ.get("ZONEMM_SLOW") == "1"
    run_paper = os.environ.get("ZONEMM_PAPER_SCALE") == "1"
    skip_slow = pytest.mark.skip(reason="set ZONEMM_SLOW=1 to run")
    skip_paper = pytest.mark.skip(reason="set ZONEMM_PAPER_SCALE=1 to run")
    for item in items:
        if "paperscale" in item.keywords and not run_paper:
            item.add_marker(skip_paper)
        elif "slow" in item.keywords and not run_slow:
            item.add_marker(skip_slow)
