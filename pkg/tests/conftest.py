import pytest

from guardvm.verify.scenarios import demo_image


@pytest.fixture
def tutorial():
    return demo_image("tutorial")


@pytest.fixture
def guest_tutorial():
    return demo_image("guest_linker")


def kinds(events, skip=("STEP",)):
    return [e.kind for e in events if e.kind not in skip]
