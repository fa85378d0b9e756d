from __future__ import annotations

from dataclasses import dataclass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class CostParams:
    """Economic and structural parameters of the perishable system.

    ``c`` is the unit purchase cost; costs enter the model only through the
    normalized understocking cost ``r - c`` and overstocking cost
    ``theta + c``.  ``lead`` is the order lead time in periods.
    """

    h: float
    r: float
    theta: float
    m: int
    lead: int = 0
    c: float = 0.0

    def __post_init__(self):
        if self.h < 0:
            raise ParameterError(f"holding cost must be >= 0, got {self.h}")
        if not self.r - self.c > 0:
            raise ParameterError("need r - c > 0")
        if not self.theta + self.c > 0:
            raise ParameterError("need theta + c > 0")
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"lifetime m must be a positive integer, got {self.m}")
        if int(self.lead) != self.lead or not 0 <= self.lead <= self.m - 1:
            raise ParameterError(f"lead time must satisfy 0 <= lead <= m-1, got {self.lead}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "lead", int(self.lead))

    @property
    def under(self) -> float:
        return self.r - self.c

    @property
    def over(self) -> float:
        return self.theta + self.c

    @property
    def critical_ratio(self) -> float:
        return self.under / (self.h + self.under)

    def replace(self, **kw) -> "CostParams":
        d = dict(h=self.h, r=self.r, theta=self.theta, m=self.m, lead=self.lead, c=self.c)
        d.update(kw)
        return CostParams(**d)
