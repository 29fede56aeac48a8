"""Fault classes and their 4-bit ABCG codes.

The index order below is fixed and written into every dataset header, so
labels stay comparable across runs.
"""

from __future__ import annotations

from enum import IntEnum

CLASS_CODES: tuple[str, ...] = (
    "0000",
    "1001",
    "0101",
    "0011",
    "1100",
    "1010",
    "0110",
    "1101",
    "1011",
    "0111",
    "1110",
)
N_CLASSES = len(CLASS_CODES)


class FaultType(IntEnum):
    NO_FAULT = 0
    AG = 1
    BG = 2
    CG = 3
    AB = 4
    AC = 5
    BC = 6
    ABG = 7
    ACG = 8
    BCG = 9
    ABC = 10

    @property
    def code(self) -> str:
        return CLASS_CODES[self.value]

    @property
    def phases(self) -> tuple[int, ...]:
        """Indices (0=A, 1=B, 2=C) of the phases involved in the fault."""
        return tuple(i for i, bit in enumerate(self.code[:3]) if bit == "1")

    @property
    def grounded(self) -> bool:
        return self.code[3] == "1"

    @classmethod
    def from_code(cls, code: str) -> "FaultType":
        return cls(code_to_label(code))

    @classmethod
    def parse(cls, value: "str | int | FaultType") -> "FaultType":
        if isinstance(value, FaultType):
            return value
        if isinstance(value, int):
            return cls(value)
        text = str(value).strip()
        if len(text) == 4 and set(text) <= {"0", "1"}:
            return cls.from_code(text)
        if text.isdigit():
            return cls(int(text))
        return cls[text.upper()]


def code_to_label(code: str) -> int:
    # 1111 (LLLG) is folded into the LLL class.
    if code == "1111":
        code = "1110"
    try:
        return CLASS_CODES.index(code)
    except ValueError:
        raise ValueError(f"not a valid fault code: {code!r}") from None


def label_to_code(label: int) -> str:
    if not 0 <= label < N_CLASSES:
        raise ValueError(f"class label out of range: {label}")
    return CLASS_CODES[label]
