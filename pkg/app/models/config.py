from enum import Enum
from typing import List, Optional, Tuple

import sympy
from pydantic import BaseModel, Field, field_validator, model_validator


class CommandName(str, Enum):
    PERIODS = "periods"
    KERNEL = "kernel"
    LIFT = "lift"
    DELTA = "delta"
    GAMMA = "gamma"
    MASSER = "masser"
    DESSINS = "dessins"
    ABHYANKAR = "abhyankar"


class CoverConfig(BaseModel):
    # (i, j, hệ số hữu tỉ) cho lambda^i w^j
    monomials: List[Tuple[int, int, str]]

    @field_validator("monomials")
    @classmethod
    def check_monomials(cls, value: List[Tuple[int, int, str]]) -> List[Tuple[int, int, str]]:
        if not value:
            raise ValueError("at least one monomial is required")
        for i, j, coeff in value:
            if i < 0 or j < 0:
                raise ValueError(f"negative exponent in ({i}, {j})")
            sympy.Rational(coeff)
        return value


class SectionConfig(BaseModel):
    name: str = "section"
    x: Optional[str] = None
    y: Optional[str] = None

    @model_validator(mode="after")
    def check_expressions(self) -> "SectionConfig":
        if (self.x is None) != (self.y is None):
            raise ValueError("x and y must both be given (or both omitted for the zero section)")
        allowed = {sympy.Symbol("lam"), sympy.Symbol("w")}
        for expr in (self.x, self.y):
            if expr is not None and not sympy.sympify(expr).free_symbols <= allowed:
                raise ValueError(f"section expression '{expr}' may only use lam and w")
        return self


MASSER_COVER = CoverConfig(monomials=[(0, 2, "1"), (0, 0, "-2"), (1, 0, "1")])
MASSER_SECTION = SectionConfig(name="masser", x="2", y="sqrt(2)*w")
QUARTIC_COVER = CoverConfig(monomials=[(0, 4, "1"), (0, 0, "-2"), (1, 0, "1")])
QUARTIC_SECTION = SectionConfig(name="quartic", x="2", y="sqrt(2)*w**2")


class RunConfig(BaseModel):
    command: Optional[CommandName] = None
    cover: CoverConfig = Field(default_factory=lambda: MASSER_COVER.model_copy())
    section: SectionConfig = Field(default_factory=lambda: MASSER_SECTION.model_copy())
    basepoint: Tuple[float, float] = (0.5, 0.0)
    radius: Optional[float] = Field(default=None, gt=0)
    snap_tol: float = Field(default=1e-6, gt=0)
    rtol: float = Field(default=1e-12, gt=0)
    atol: float = Field(default=1e-14, gt=0)
    ledger_tol: float = Field(default=1e-8, gt=0)
    max_len: int = Field(default=12, ge=1)
    max_level: int = Field(default=2, ge=0)
    alpha_max_len: int = Field(default=2, ge=1)
    denominator_bound: int = Field(default=24, ge=1)
    two_torsion_shift: bool = True
    generator_order: List[str] = Field(default_factory=list)
    word: Optional[str] = None
    sheet: int = Field(default=1, ge=1)
    target_sheet: Optional[int] = Field(default=None, ge=1)
    max_n: int = Field(default=12, ge=2)
    profiles: Optional[Tuple[List[int], List[int]]] = None
    trace_dir: Optional[str] = None

    @field_validator("word")
    @classmethod
    def check_word(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            for token in value.split():
                if token == "e":
                    continue
                if token.lower() not in ("a0", "a1") and not (
                    token.lower().startswith("d") and token[1:].isdigit() and int(token[1:]) >= 1
                ):
                    raise ValueError(f"unknown letter token '{token}'")
        return value

    @field_validator("basepoint")
    @classmethod
    def check_basepoint(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        s = complex(*value)
        if abs(s) < 1e-9 or abs(s - 1) < 1e-9:
            raise ValueError("basepoint must avoid the punctures 0 and 1")
        return value

    @property
    def base(self) -> complex:
        return complex(*self.basepoint)
