from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from ..core.errors import ConfigError, NotInKernel
from ..core.logging import words_logger


class LetterKind(str, Enum):
    A0 = "a0"
    A1 = "a1"
    D = "d"


@dataclass(frozen=True, order=True)
class Letter:
    kind: LetterKind
    index: int = 0
    inverted: bool = False

    def __post_init__(self) -> None:
        if self.kind == LetterKind.D and self.index < 1:
            raise ConfigError(f"D letter needs an index >= 1, got {self.index}", stage="words")
        if self.kind != LetterKind.D and self.index != 0:
            raise ConfigError("a-letters carry no index", stage="words")

    @property
    def is_a(self) -> bool:
        return self.kind != LetterKind.D

    @property
    def generator(self) -> "Letter":
        return Letter(self.kind, self.index, False)

    def inverse(self) -> "Letter":
        return Letter(self.kind, self.index, not self.inverted)

    def __str__(self) -> str:
        token = self.kind.value if self.kind != LetterKind.D else f"d{self.index}"
        return token.upper() if self.inverted else token

    @classmethod
    def parse(cls, token: str) -> "Letter":
        """Đọc một token dạng a0, A1, d3, D3"""
        inverted = token[:1].isupper()
        lowered = token.lower()
        if lowered in ("a0", "a1"):
            return cls(LetterKind(lowered), 0, inverted)
        if lowered.startswith("d") and lowered[1:].isdigit():
            return cls(LetterKind.D, int(lowered[1:]), inverted)
        raise ConfigError(f"Unknown letter token '{token}'", stage="words", token=token)


A0 = Letter(LetterKind.A0)
A1 = Letter(LetterKind.A1)


def D(index: int) -> Letter:
    return Letter(LetterKind.D, index)


def reduce(letters: Iterable[Letter]) -> "Word":
    """Rút gọn tự do bằng một stack"""
    stack: List[Letter] = []
    for letter in letters:
        if stack and stack[-1] == letter.inverse():
            stack.pop()
        else:
            stack.append(letter)
    return Word(tuple(stack))


@dataclass(frozen=True)
class Word:
    letters: Tuple[Letter, ...] = ()

    def __post_init__(self) -> None:
        for left, right in zip(self.letters, self.letters[1:]):
            if left == right.inverse():
                raise ValueError("Word must be freely reduced; use reduce()")

    @classmethod
    def of(cls, *letters: Letter) -> "Word":
        return reduce(letters)

    @classmethod
    def parse(cls, text: str) -> "Word":
        if text.strip() in ("", "e"):
            return cls()
        return reduce(Letter.parse(token) for token in text.split())

    def __mul__(self, other: "Word") -> "Word":
        return reduce(self.letters + other.letters)

    def __pow__(self, exponent: int) -> "Word":
        base = self if exponent >= 0 else self.inverse()
        result = Word()
        for _ in range(abs(exponent)):
            result = result * base
        return result

    def inverse(self) -> "Word":
        return Word(tuple(letter.inverse() for letter in reversed(self.letters)))

    def reverse(self) -> "Word":
        """Đảo thứ tự các chữ, giữ nguyên từng chữ"""
        return reduce(reversed(self.letters))

    def a_count(self) -> int:
        return sum(1 for letter in self.letters if letter.is_a)

    def __len__(self) -> int:
        return len(self.letters)

    def __iter__(self) -> Iterator[Letter]:
        return iter(self.letters)

    def __bool__(self) -> bool:
        return bool(self.letters)

    def __str__(self) -> str:
        return " ".join(str(letter) for letter in self.letters) or "e"


IDENTITY = Word()


class Alphabet:
    """Bảng chữ {a0, a1, d1..dk} và nghịch đảo, k cố định"""

    def __init__(self, k: int):
        if k < 0:
            raise ConfigError("number of extra punctures must be >= 0", stage="words")
        self.k = k

    def generators(self) -> List[Letter]:
        return [A0, A1] + [D(i) for i in range(1, self.k + 1)]

    def letters(self) -> List[Letter]:
        out: List[Letter] = []
        for gen in self.generators():
            out.extend([gen, gen.inverse()])
        return out

    def d_letters(self) -> List[Letter]:
        return [l for l in self.letters() if l.kind == LetterKind.D]

    def reduced_words(self, max_len: int, letters: Optional[Sequence[Letter]] = None) -> Iterator[Word]:
        """Liệt kê mọi từ rút gọn theo độ dài, thứ tự cố định"""
        alphabet = list(letters) if letters is not None else self.letters()
        yield IDENTITY
        frontier: List[Tuple[Letter, ...]] = [()]
        for _ in range(max_len):
            nxt: List[Tuple[Letter, ...]] = []
            for prefix, letter in product(frontier, alphabet):
                if prefix and prefix[-1] == letter.inverse():
                    continue
                word = prefix + (letter,)
                nxt.append(word)
                yield Word(word)
            frontier = nxt


def project_to_S(w: Word) -> Word:
    return reduce(letter for letter in w if letter.is_a)


def in_kernel(w: Word) -> bool:
    return not project_to_S(w)


def relative_length(w: Word) -> int:
    if not in_kernel(w):
        words_logger.error(f"Word {w} is not in the kernel")
        raise NotInKernel(f"Word '{w}' projects to '{project_to_S(w)}'", word=str(w))
    return w.a_count() // 2


@dataclass(frozen=True)
class KernelCertificate:
    """g = prefix * (a h a^-1 h^-1) * rest, với rest = h f; lá là từ chỉ gồm d"""

    word: Word
    level: int
    relative_length: int
    prefix: Word = IDENTITY
    letter: Optional[Letter] = None
    inner: Optional["KernelCertificate"] = None
    rest: Optional["KernelCertificate"] = None
    factors: Tuple[Letter, ...] = field(default=())

    @property
    def is_leaf(self) -> bool:
        return self.letter is None

    def commutator(self) -> Word:
        if self.letter is None or self.inner is None:
            return IDENTITY
        a = Word((self.letter,))
        h = self.inner.multiply()
        return a * h * a.inverse() * h.inverse()

    def multiply(self) -> Word:
        if self.is_leaf:
            return reduce(self.factors)
        assert self.rest is not None
        return self.prefix * self.commutator() * self.rest.multiply()

    def to_dict(self) -> Dict[str, object]:
        if self.is_leaf:
            return {
                "word": str(self.word),
                "level": self.level,
                "relative_length": self.relative_length,
                "factors": [str(l) for l in self.factors],
            }
        assert self.inner is not None and self.rest is not None
        return {
            "word": str(self.word),
            "level": self.level,
            "relative_length": self.relative_length,
            "prefix": str(self.prefix),
            "commutator": {"a": str(self.letter), "h": self.inner.to_dict()},
            "rest": self.rest.to_dict(),
        }


def _partner(w: Word, first: int) -> int:
    # vị trí chữ a khử chữ a đầu tiên trong phép chiếu
    stack: List[Letter] = []
    for pos in range(first, len(w.letters)):
        letter = w.letters[pos]
        if not letter.is_a:
            continue
        if stack and stack[-1] == letter.inverse():
            stack.pop()
            if not stack:
                return pos
        else:
            stack.append(letter)
    raise NotInKernel(f"No cancelling partner in '{w}'", word=str(w))


def decompose_kernel(w: Word) -> KernelCertificate:
    """Phân tích quy nạp theo độ dài tương đối"""
    n = relative_length(w)
    if n == 0:
        return KernelCertificate(word=w, level=0, relative_length=0, factors=w.letters)

    first = next(i for i, letter in enumerate(w.letters) if letter.is_a)
    partner = _partner(w, first)
    prefix = Word(w.letters[:first])
    a = w.letters[first]
    h = Word(w.letters[first + 1:partner])
    f = Word(w.letters[partner + 1:])

    inner = decompose_kernel(h)
    rest = decompose_kernel(h * f)
    level = max(inner.level + 1, rest.level)
    return KernelCertificate(
        word=w, level=level, relative_length=n,
        prefix=prefix, letter=a, inner=inner, rest=rest,
    )
