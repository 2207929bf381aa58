import pytest

from dropgan.rain_synth import build_dataset

from helpers import make_scenes


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Small train set plus a three-preset test set, 64x64 images."""
    root = tmp_path_factory.mktemp("tiny")
    make_scenes(root / "clean_train", 6, 64)
    make_scenes(root / "clean_test", 2, 64, offset=100)
    build_dataset(root / "clean_train", root / "train", "moderate", 8, 1)
    for k, preset in enumerate(("heavy", "moderate", "light")):
        build_dataset(root / "clean_test", root / "test" / preset, preset, 2, 50 + k)
    return root


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
