import pytest

from tripletlab.harness import TrainConfig, generate_dataset, train


@pytest.fixture(scope="session")
def desk_dataset():
    return generate_dataset(seed=0)


@pytest.fixture(scope="session")
def trained_model(desk_dataset):
    """A cleanly trained desk encoder shared by tests that need realistic
    (separated, non-collapsed) embedding geometry."""
    config = TrainConfig(epochs=15, defense="none", source="random", seed=0)
    model, record = train(config, desk_dataset)
    assert record.status == "ok"
    return model
