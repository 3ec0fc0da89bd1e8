import sys

import pytest

from vadmil.features import Split, read_manifest
from vadmil.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Small separable dataset: 8-d features, 12+12 train and 4+4 test videos."""
    spec = SynthSpec(dim=8, num_normal=12, num_abnormal=12, num_test_normal=4, num_test_abnormal=4,
                     min_clips=20, max_clips=48, separability=4.0, seed=7)
    out = tmp_path_factory.mktemp("tiny")
    train, test = generate(spec, out)
    return {
        "spec": spec,
        "dir": out,
        "train_path": train,
        "test_path": test,
        "train": read_manifest(train, Split.TRAIN),
        "test": read_manifest(test, Split.TEST),
    }


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
