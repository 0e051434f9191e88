import dataclasses

import pytest

from fogd2d.config import default_content, default_network
from fogd2d.content import combination_set, uniform_policy, zipf_popularity


@pytest.fixture(scope="session")
def net():
    return default_network()


@pytest.fixture(scope="session")
def small_net():
    """Same operating point in a 100 m disk, for fast sampled slots."""
    return dataclasses.replace(default_network(), R_s=100.0)


@pytest.fixture(scope="session")
def content():
    return default_content()


@pytest.fixture(scope="session")
def content_mrfs(content):
    return dataclasses.replace(content, scheme="mrfs")


@pytest.fixture(scope="session")
def pop(content):
    return zipf_popularity(content.N, content.gamma)


@pytest.fixture(scope="session")
def policy(content):
    return uniform_policy(combination_set(content.N, content.K).J)
