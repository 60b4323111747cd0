import random

import pytest

from socialmesh.crypto import TEST_PROVIDER
from socialmesh.identity import Identity, PublicInfo


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def make_identity(rng):
    counter = iter(range(10**6))

    def make(name=None, email="", affiliations=(), now=0, bits=160):
        i = next(counter)
        info = PublicInfo(name or f"user {i}", email, tuple(affiliations), None)
        return Identity.create(info, TEST_PROVIDER, now, rng, bits)

    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "ACCEPTANCE", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
