import pytest

from graphmark.graphdata import parse_tudataset, partition_clients, stratified_split
from graphmark.synthcorpus import write_synthetic_corpus

# Fixed benchmark split used across the suite: class 0 (the watermark target)
# keeps 42 train / 21 test graphs, class 1 keeps 83 / 42.
SPLIT_COUNTS = [42, 83]
SPLIT_SEED = 1
PARTITION_SEED = 2


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return write_synthetic_corpus(str(root), seed=0)


@pytest.fixture(scope="session")
def dataset(corpus_dir):
    return parse_tudataset(corpus_dir)


@pytest.fixture(scope="session")
def split(dataset):
    return stratified_split(dataset, SPLIT_COUNTS, SPLIT_SEED)


@pytest.fixture(scope="session")
def desk_partition(split):
    train, _ = split
    return partition_clients(train, 20, "IID", PARTITION_SEED)
