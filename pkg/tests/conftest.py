import pytest

from reduction_lab.experiment import run_ensemble
from reduction_lab.reduction import SimulationParams, model_energy, model_local_spins

FULL_N = 10_000
FULL_SEED = 42

_acceptance_lines: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})"
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def energy_records():
    return run_ensemble(model_energy(), FULL_N, SimulationParams(), FULL_SEED)


@pytest.fixture(scope="session")
def local_records():
    return run_ensemble(model_local_spins(), FULL_N, SimulationParams(), FULL_SEED)


@pytest.fixture(scope="session")
def energy_records_half_dt():
    return run_ensemble(model_energy(), FULL_N, SimulationParams(dt=5e-4), FULL_SEED)
