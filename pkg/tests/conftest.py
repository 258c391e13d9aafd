import pytest

TINY_TOML = """
[sim]
sim_grid = 8
learn_grid = 4
burn_in = 5

[train]
hidden = [4]
epochs_max = 2
patience = 2
batch_size = 16
s_mc = 4

[sweep]
T_values = [6, 8]
B = 2
master_seed = 3
"""


@pytest.fixture
def tiny_toml(tmp_path):
    path = tmp_path / 'tiny.toml'
    path.write_text(TINY_TOML)
    return str(path)
