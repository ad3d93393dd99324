import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_subject():
    from earcardio.bcg_synth import SubjectProfile, synth_subject

    return synth_subject(11, 60.0, SubjectProfile())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    """Synthesize, train and evaluate the default experiment once per session."""
    import time

    from earcardio import cli
    from earcardio.config import load_config

    out = tmp_path_factory.mktemp("acceptance")
    cfg = load_config("configs/default.json", env={"EARCARDIO_OUTPUT_DIR": str(out)})
    cli.cmd_synth(cfg)
    t0 = time.perf_counter()
    cli.cmd_train(cfg, "all")
    train_s = time.perf_counter() - t0
    summary = cli.cmd_run(cfg)
    return {"cfg": cfg, "summary": summary, "train_s": train_s}


ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
