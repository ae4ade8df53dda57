from dataclasses import dataclass
from functools import total_ordering
from typing import Optional


@total_ordering
@dataclass(frozen=True)
class ManipulationClass:
    """Endpoint detectability (D) and behaviour change (P) of a manipulation.

    Ordered by attacker preference: (!D,!P) < (!D,P) < (D,!P) < (D,P).
    """

    detectable: bool
    behavior_changing: bool

    @property
    def rank(self) -> int:
        return 2 * self.detectable + self.behavior_changing

    def __lt__(self, other: "ManipulationClass") -> bool:
        if not isinstance(other, ManipulationClass):
            return NotImplemented
        return self.rank < other.rank

    def __str__(self) -> str:
        d = "D" if self.detectable else "!D"
        p = "P" if self.behavior_changing else "!P"
        return f"({d},{p})"

    def to_dict(self) -> dict:
        return {"D": self.detectable, "P": self.behavior_changing, "class": str(self)}


@dataclass(frozen=True)
class ClassPattern:
    """A class with optional wildcards; None matches either value"""

    detectable: Optional[bool]
    behavior_changing: Optional[bool] = None

    def matches(self, cls: ManipulationClass) -> bool:
        return (self.detectable is None or self.detectable == cls.detectable) and (
            self.behavior_changing is None or self.behavior_changing == cls.behavior_changing
        )

    @classmethod
    def parse(cls, text: str) -> "ClassPattern":
        """Parse '(D,*)', '(!D,!P)' and friends"""
        parts = text.strip().strip("()").split(",")
        if len(parts) != 2:
            raise ValueError(f"Not a class pattern: {text!r}")

        def component(token: str, name: str) -> Optional[bool]:
            token = token.strip()
            if token == "*":
                return None
            if token == name:
                return True
            if token == f"!{name}":
                return False
            raise ValueError(f"Bad {name} component in {text!r}")

        return cls(component(parts[0], "D"), component(parts[1], "P"))

    def __str__(self) -> str:
        def show(value: Optional[bool], name: str) -> str:
            return "*" if value is None else (name if value else f"!{name}")

        return f"({show(self.detectable, 'D')},{show(self.behavior_changing, 'P')})"
