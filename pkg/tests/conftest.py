import hashlib

import pytest
from hypothesis import HealthCheck, settings

from card.chunking import Chunk

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def make_chunk(content: bytes, chunk_id: int = 0, offset: int = 0) -> Chunk:
    return Chunk(
        chunk_id=chunk_id,
        offset=offset,
        length=len(content),
        identity_digest=hashlib.sha256(content).digest(),
        content=content,
    )


@pytest.fixture
def mk_chunk():
    return make_chunk
