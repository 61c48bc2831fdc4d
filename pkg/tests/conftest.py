import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hts_rom.assembly import build_fom_operators
from hts_rom.geometry import TapeSpec, generate_tape_mesh


@pytest.fixture(scope="session")
def mesh_2x4():
    return generate_tape_mesh(TapeSpec(length=0.008, width=0.004, nx=2, nz=4))


@pytest.fixture(scope="session")
def ops_2x4(mesh_2x4):
    return build_fom_operators(mesh_2x4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def report(name, ok, detail):
        line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
