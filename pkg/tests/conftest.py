"""Suite-wide fixtures, test ordering, and the acceptance summary.

The acceptance tests (tests/test_acceptance.py) are sorted to the end
of the run because they synthesize a 2400-record dataset and train two
classifiers.  Set SUBVOX_ACCEPT_CACHE to a directory to keep those
artifacts between runs; by default they land in a fresh pytest tmp
directory and are rebuilt each session.
"""

import os
import re
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))  # for helpers.py

from subvox import dataset as dataset_mod  # noqa: E402


def pytest_configure(config):
    config._accept_notes = {}


def pytest_collection_modifyitems(config, items):
    items.sort(key=lambda item: "test_acceptance" in item.nodeid)


_CRITERIA = {
    1: "gradient integrity (finite differences, every layer)",
    2: "synthesizer invariants over 1000 draws",
    3: "oracle equivalence (area grid, conv, resampler, lip load)",
    4: "receptive-field and snapshot arithmetic",
    5: "scaled training reaches the accuracy gates",
    6: "overfit sanity (8 signals/class memorized)",
    7: "end-to-end behavioral checks",
    8: "bit-exact reproducibility",
    9: "ground-truth SHR distribution",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    out = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_criterion_(\d+)", nodeid)
            if not m:
                continue
            num = int(m.group(1))
            ok = key == "passed" and getattr(rep, "when", "call") == "call"
            # any failed/errored phase marks the criterion failed
            if key != "passed":
                out[num] = False
            elif out.get(num) is not False and ok:
                out[num] = True
    if not out:
        return
    notes = getattr(config, "_accept_notes", {})
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_CRITERIA):
        if num not in out:
            continue
        status = "PASS" if out[num] else "FAIL"
        line = "criterion %d: %s - %s" % (num, status, _CRITERIA[num])
        extra = notes.get(num)
        if extra:
            line += " [%s]" % extra
        terminalreporter.write_line(line)


@pytest.fixture
def accept_note(request):
    """Attach a measurement note to one criterion's summary line."""

    def note(num, text):
        request.config._accept_notes[int(num)] = str(text)

    return note


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """1 record per class per split; shared by fcn/cli tests.

    Returns (manifest, directory).
    """
    d = tmp_path_factory.mktemp("tiny_dataset")
    manifest = dataset_mod.generate_dataset(
        str(d), {"train": 1, "val": 1, "test": 1}, seed=42, workers=1)
    return manifest, str(d)
