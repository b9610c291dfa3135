import numpy as np
import pytest

from anticap.concepts import EmbeddingProvider, Sample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sample(rng, k=3, per_image=4, n_rois=2, feature_dim=6, vocab=None, caption="a dog ran"):
    vocab = vocab or [f"c{i}" for i in range(12)]
    detected = [list(rng.choice(vocab, size=per_image, replace=False)) for _ in range(k)]
    images = [rng.standard_normal((n_rois, feature_dim)) for _ in range(k)]
    return Sample("s0", images, detected, caption, None, None)


@pytest.fixture
def provider():
    return EmbeddingProvider(dim=8, seed=3)


# one summary line per acceptance criterion, filled by tests marked ``criterion``
_VERDICTS: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if report.passed else "FAIL"
    _VERDICTS[number] = f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
