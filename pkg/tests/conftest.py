import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from svbackend.prototypes import PrototypeMatrix, SpeakerInfo
from svbackend.vecmath import Domain, Embedding, Language


def make_protos(w, languages=None, domains=None):
    """PrototypeMatrix from a raw D x N array with generated metadata."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[1]
    languages = languages or [Language.UNKNOWN] * n
    domains = domains or [Domain.VOX] * n
    speakers = tuple(
        SpeakerInfo(f"spk{j:03d}", domains[j], languages[j]) for j in range(n)
    )
    return PrototypeMatrix(w=w, speakers=speakers)


def make_embedding(utt_id, speaker_id, vec, domain=Domain.VOX, language=Language.UNKNOWN):
    return Embedding(
        utt_id=utt_id, speaker_id=speaker_id, domain=domain, language=language, vec=vec
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
