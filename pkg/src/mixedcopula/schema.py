"""Variable declarations for mixed-type tables."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple


class VariableKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    ORDINAL = "ordinal"
    MULTINOMIAL = "multinomial"


@dataclass(frozen=True)
class Variable:
    name: str
    kind: VariableKind
    levels: Optional[int] = None

    def __post_init__(self):
        kind = VariableKind(self.kind)
        object.__setattr__(self, "kind", kind)
        levels = self.levels
        if kind is VariableKind.CONTINUOUS:
            if levels is not None:
                raise ValueError(f"{self.name}: continuous variables take no levels")
        elif kind is VariableKind.BINARY:
            if levels not in (None, 2):
                raise ValueError(f"{self.name}: binary variables have 2 levels")
            object.__setattr__(self, "levels", 2)
        elif kind is VariableKind.ORDINAL:
            if levels is None or levels < 2:
                raise ValueError(f"{self.name}: ordinal variables need levels >= 2")
        elif levels is None or levels < 3:
            raise ValueError(f"{self.name}: multinomial variables need levels >= 3")

    @property
    def is_discrete(self):
        return self.kind is not VariableKind.CONTINUOUS


@dataclass(frozen=True)
class Schema:
    """Ordered variable records; column ``j`` of a table is ``variables[j]``."""
    variables: Tuple[Variable, ...]

    def __post_init__(self):
        variables = tuple(self.variables)
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        object.__setattr__(self, "variables", variables)

    def __len__(self):
        return len(self.variables)

    def __iter__(self):
        return iter(self.variables)

    def __getitem__(self, j):
        return self.variables[j]

    @property
    def names(self):
        return [v.name for v in self.variables]

    @property
    def kinds(self):
        return [v.kind for v in self.variables]

    def indices(self, kind):
        kind = VariableKind(kind)
        return [j for j, v in enumerate(self.variables) if v.kind is kind]

    def to_dict(self):
        return {"variables": [
            {"name": v.name, "kind": v.kind.value, "levels": v.levels}
            for v in self.variables]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Variable(r["name"], r["kind"], r.get("levels"))
                         for r in d["variables"]))

    @classmethod
    def from_counts(cls, n_continuous=0, n_binary=0, n_ordinal=0,
                    n_multinomial=0, ordinal_levels=5, multinomial_levels=5):
        """Schema with generated names ``c1.., b1.., o1.., m1..``."""
        out = [Variable(f"c{i + 1}", VariableKind.CONTINUOUS)
               for i in range(n_continuous)]
        out += [Variable(f"b{i + 1}", VariableKind.BINARY) for i in range(n_binary)]
        out += [Variable(f"o{i + 1}", VariableKind.ORDINAL, ordinal_levels)
                for i in range(n_ordinal)]
        out += [Variable(f"m{i + 1}", VariableKind.MULTINOMIAL, multinomial_levels)
                for i in range(n_multinomial)]
        return cls(tuple(out))
