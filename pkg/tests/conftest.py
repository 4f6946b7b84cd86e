import numpy as np
import pytest

from app.models.config import MASSER_COVER, QUARTIC_COVER
from app.services.cover import CoverService, CoverSpec
from app.services.elog import EllipticLogService, SectionSpec
from app.services.paths import PuncturedPlane
from app.services.periods import PeriodService
from app.services.words import Alphabet, reduce

TRINOMIAL = [(0, 3, "1"), (0, 1, "-3"), (1, 0, "4"), (0, 0, "-2")]


@pytest.fixture(scope="session")
def masser_cover():
    return CoverService(CoverSpec.from_triples(MASSER_COVER.monomials))


@pytest.fixture(scope="session")
def quartic_cover():
    return CoverService(CoverSpec.from_triples(QUARTIC_COVER.monomials))


@pytest.fixture(scope="session")
def trinomial_cover():
    return CoverService(CoverSpec.from_triples(TRINOMIAL))


@pytest.fixture
def plane():
    return PuncturedPlane(0.5 + 0j)


@pytest.fixture(scope="session")
def period_service():
    return PeriodService()


@pytest.fixture(scope="session")
def masser_section():
    return SectionSpec("masser", "2", "sqrt(2)*w")


@pytest.fixture(scope="session")
def masser_elog(masser_cover, masser_section, period_service):
    return EllipticLogService(masser_cover, masser_section, period_service)


@pytest.fixture
def random_words():
    """Sinh từ rút gọn ngẫu nhiên trên {a0, a1, d1, d2} với seed cố định"""
    rng = np.random.default_rng(2024)
    letters = Alphabet(2).letters()

    def sample(count: int, max_len: int = 6):
        words = []
        for _ in range(count):
            picks = rng.integers(0, len(letters), size=int(rng.integers(0, max_len + 1)))
            words.append(reduce(letters[int(i)] for i in picks))
        return words

    return sample
