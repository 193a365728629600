import warnings

import pytest

warnings.filterwarnings(
    "ignore", message="Using `httpx` with `starlette.testclient`"
)


@pytest.fixture
def tiny_corpus(tmp_path):
    """Four small scenes with ground truth, written to disk."""
    from temviro.synthgen import SceneSpec, generate_corpus

    spec = SceneSpec(width=256, height=256, n_intact=3, n_broken=1,
                     n_small_debris=4, n_large_debris=1, n_artefacts=0,
                     min_separation=45.0)
    out = tmp_path / "corpus"
    records = generate_corpus(spec, 4, seed=99, out_dir=str(out))
    return str(out), records
