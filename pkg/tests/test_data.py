import pytest

from fiedler.data import Dataset, dataset_text, generate_dataset, load_dataset, save_dataset
from fiedler.graphs import GraphGenConfig, is_connected
from fiedler.spectral import algebraic_connectivity


@pytest.fixture(scope="module")
def small_dataset():
    cfg = GraphGenConfig(n_range=(9, 11), p_range=(0.2, 0.6), seed=77)
    return generate_dataset(cfg, 30)


def test_generate_dataset_contents(small_dataset):
    assert len(small_dataset) == 30
    for g, label in small_dataset.items:
        assert 9 <= g.n <= 11
        assert is_connected(g)
        assert label > 0.0
        assert label == pytest.approx(algebraic_connectivity(g), abs=1e-12)


def test_generate_dataset_rejects_bad_count():
    cfg = GraphGenConfig(seed=1)
    with pytest.raises(ValueError):
        generate_dataset(cfg, 0)


def test_dataset_file_round_trip(tmp_path, small_dataset):
    path = tmp_path / "data.txt"
    save_dataset(small_dataset, path)
    text = path.read_text()
    assert text.startswith("fiedler-dataset v1 count=30\n")
    loaded = load_dataset(path)
    assert loaded.graphs() == small_dataset.graphs()
    # labels are stored at 12 significant digits
    for got, want in zip(loaded.labels(), small_dataset.labels()):
        assert got == pytest.approx(want, rel=1e-11)
    # saving the loaded dataset reproduces the bytes
    path2 = tmp_path / "data2.txt"
    save_dataset(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_regeneration_is_byte_identical():
    cfg = GraphGenConfig(n_range=(9, 10), p_range=(0.3, 0.6), seed=5)
    a = dataset_text(generate_dataset(cfg, 10))
    b = dataset_text(generate_dataset(cfg, 10))
    assert a == b


def test_edges_serialized_lexicographically(small_dataset):
    line = dataset_text(small_dataset).splitlines()[1]
    edge_field = line.split("edges=")[1].split(" ")[0]
    pairs = [tuple(map(int, e.split("-"))) for e in edge_field.split(",")]
    assert pairs == sorted(pairs)
    assert all(i < j for i, j in pairs)


def test_load_rejects_corrupted_label(tmp_path, small_dataset):
    path = tmp_path / "data.txt"
    save_dataset(small_dataset, path)
    lines = path.read_text().splitlines()
    lines[1] = lines[1].rsplit("lambda2=", 1)[0] + "lambda2=9.999999999999e-01"
    bad = tmp_path / "bad.txt"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="oracle"):
        load_dataset(bad)
    # verification can be skipped explicitly
    loaded = load_dataset(bad, verify=False)
    assert len(loaded) == 30


def test_load_rejects_malformed_files(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("not-a-dataset v1 count=1\n")
    with pytest.raises(ValueError):
        load_dataset(path)
    path.write_text("fiedler-dataset v1 count=2\nn=3 edges=0-1,1-2 lambda2=1.0e+00\n")
    with pytest.raises(ValueError, match="found 1"):
        load_dataset(path)
