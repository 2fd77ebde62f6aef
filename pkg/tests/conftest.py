import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from manlab import classifiers, datasets  # noqa: E402


@pytest.fixture(scope="session")
def synthetic():
    return datasets.make_synthetic(train_size=512, test_size=200, seed=0)


@pytest.fixture(scope="session")
def synthetic_vgg(synthetic, tmp_path_factory):
    """A vggS fitted to the synthetic blobs; frozen, with its checkpoint path."""
    path = tmp_path_factory.mktemp("models") / "vgg.ckpt"
    model = classifiers.build("vggS", 10, synthetic.spec.image_shape, seed=0)
    classifiers.pretrain(model, synthetic, classifiers.PretrainConfig(epochs=2, batch_size=32, checkpoint=str(path)))
    return model.freeze(), path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
