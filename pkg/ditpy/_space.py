"""Search spaces over run configurations.

A :class:`SearchSpace` wraps a nested structure (dicts, lists) of override values in
which some leaves are variables (:class:`Choice`, :class:`IntRange`,
:class:`FloatRange`). Variables are sampled or enumerated into a ``choice`` dict
(variable id -> sampled index or value) which then freezes a clone of the space
into concrete overrides.
"""
import abc
import copy
import itertools

import numpy as np
import scipy.stats
import tree

__all__ = [
    "Variable",
    "Choice",
    "IntRange",
    "FloatRange",
    "SearchSpace",
    "sample_from_choices",
    "sample_choice",
    "sample",
    "grid",
    "variable_from_spec",
]


def _variables_in(structure, memo):
    """Collect variables of ``structure`` into ``memo``, recursing into their own values."""

    def aux(o):
        if isinstance(o, Variable) and o.id not in memo:
            memo[o.id] = o
            o.collect_children(memo)

    tree.map_structure(aux, structure)
    return memo


def _top_level_choices(structure):
    memo = {}

    def aux(o):
        if isinstance(o, Variable):
            memo[o.id] = o

    tree.map_structure(aux, structure)
    return memo


def _resolve(structure):
    return tree.map_structure(lambda o: o.evaluate() if isinstance(o, Variable) else o, structure)


class Variable:

    value = None
    var_id = 0

    def __init__(self, name: str = None) -> None:
        self._name = name
        self.var_id = Variable.var_id
        Variable.var_id += 1
        self._frozen = False

    @property
    def id(self):
        if self._name:
            return self._name
        else:
            return str(self.var_id)

    def sample(self, size=None, rng=None, memo=None):

        if rng is None:
            rng = np.random.RandomState()

        # the same variable can appear at several places of a space
        if isinstance(memo, dict) and self.id in memo:
            return memo[self.id]

        s = self._sample(size=size, rng=rng)

        if isinstance(memo, dict):
            memo[self.id] = s

        return s

    @abc.abstractmethod
    def _sample(self, size=None, rng=None):
        raise NotImplementedError

    @abc.abstractmethod
    def grid_values(self) -> list:
        """All entries a grid enumeration should visit."""
        raise NotImplementedError

    def freeze(self, choice: dict):
        self.value = choice[self.id]
        self._frozen = True

    def evaluate(self):
        if not self._frozen:
            raise ValueError(f"variable '{self.id}' should be frozen before evaluation")
        return self.value

    def children(self, choice_entry):
        """Nested structure holding sub-variables once ``choice_entry`` is chosen."""
        return None

    def collect_children(self, memo):
        pass


class Choice(Variable):
    """A categorical choice; the sampled entry is an index into ``values``.

    Values may themselves be structures containing variables, which are then only
    active when that value is chosen.

    Args:
        values (iterable): the candidate values.
        name (str, optional): id of the variable. Defaults to None.
    """

    def __init__(self, values, name=None):
        super().__init__(name=name)
        self._values = list(values)
        if not self._values:
            raise ValueError("a Choice needs at least one value")

    def __repr__(self) -> str:
        if self._frozen:
            return repr(self._chosen)
        return f"Choice(id={self.id}, {self._values})"

    def __len__(self):
        return len(self._values)

    def _getitem(self, item):
        if np.issubdtype(type(item), np.integer):
            return self._values[item]
        raise ValueError(f"index of Choice should be int but is {item} with type '{type(item)}'!")

    def _sample(self, size=None, rng=None):
        return rng.choice(len(self._values), size=size)

    def grid_values(self):
        return list(range(len(self._values)))

    def children(self, choice_entry):
        return self._getitem(choice_entry)

    def collect_children(self, memo):
        for v in self._values:
            _variables_in(v, memo)

    def freeze(self, choice: dict):
        idx = choice[self.id]
        if not (0 <= idx < len(self._values)):
            raise ValueError(f"choice for variable {self.id} should be in [0, {len(self._values)}) but is {idx}")
        super().freeze(choice)
        self._chosen = copy.deepcopy(self._getitem(idx))

        def freeze_aux(o):
            if isinstance(o, Variable):
                o.freeze(choice)

        tree.map_structure(freeze_aux, self._chosen)

    def evaluate(self):
        super().evaluate()
        return _resolve(self._chosen)


class _Range(Variable):
    def __init__(self, low, high, num=None, name=None):
        super().__init__(name=name)
        if low > high:
            raise ValueError(f"low should be <= high but got [{low}, {high}]")
        self._low = low
        self._high = high
        self._num = num

    def __repr__(self) -> str:
        if self._frozen:
            return repr(self.value)
        return f"{type(self).__name__}(id={self.id}, low={self._low}, high={self._high})"

    def freeze(self, choice: dict):
        value = choice[self.id]
        if self._low > value or value > self._high:
            raise ValueError(f"choice for variable {self} should be between [{self._low}, {self._high}] but is {value}")
        super().freeze(choice)


class IntRange(_Range):
    """Integer variable on ``[low, high]`` (both included)."""

    def __init__(self, low: int, high: int, name: str = None):
        super().__init__(low, high, name=name)
        self._dist = scipy.stats.randint

    def _sample(self, size=None, rng=None):
        s = self._dist.rvs(self._low, self._high + 1, size=size, random_state=rng)
        return int(s) if size is None else s

    def grid_values(self):
        return list(range(self._low, self._high + 1))


class FloatRange(_Range):
    """Continuous variable on ``[low, high]``; ``log`` samples log-uniformly.

    Args:
        low (float): lower bound.
        high (float): upper bound.
        num (int, optional): number of evenly spaced grid points. Defaults to None (not enumerable).
        log (bool, optional): sample and space points in log-space. Defaults to False.
    """

    def __init__(self, low: float, high: float, num: int = None, log: bool = False, name: str = None):
        super().__init__(low, high, num=num, name=name)
        if log and low <= 0:
            raise ValueError("log-scaled ranges need low > 0")
        self._log = log
        self._dist = scipy.stats.loguniform(low, high) if log else scipy.stats.uniform(loc=low, scale=high - low)

    def _sample(self, size=None, rng=None):
        s = self._dist.rvs(size=size, random_state=rng)
        return float(s) if size is None else s

    def grid_values(self):
        if self._num is None:
            raise ValueError(f"FloatRange '{self.id}' has no grid; pass num= to enumerate it")
        if self._log:
            return np.geomspace(self._low, self._high, self._num).tolist()
        return np.linspace(self._low, self._high, self._num).tolist()


class SearchSpace:
    """A nested structure of overrides with variables at some of its leaves."""

    def __init__(self, structure, name: str = None):
        self.structure = structure
        self.name = name

    def __repr__(self) -> str:
        return f"SearchSpace(name={self.name}, {self.structure})"

    def choices(self) -> dict:
        """Variables visible before anything is chosen."""
        return _top_level_choices(self.structure)

    def variables(self) -> dict:
        """All variables, including those nested inside choice values."""
        return _variables_in(self.structure, {})

    def freeze(self, choice: dict):
        def freeze_aux(o):
            if isinstance(o, Variable):
                o.freeze(choice)

        tree.map_structure(freeze_aux, self.structure)

    def evaluate(self):
        return _resolve(self.structure)

    def clone(self, deep=True):
        return copy.deepcopy(self) if deep else copy.copy(self)

    def __len__(self):
        return sum(1 for _ in _grid_choices(self.choices()))


def sample_from_choices(choices: dict, rng, memo=None) -> dict:
    """Sample variables, then the variables nested in the chosen values.

    Args:
        choices (dict): variables to sample, keyed by id.
        rng (np.random.RandomState): the random state.

    Returns:
        dict: keys are variable ids, values are sampled entries.
    """
    memo = memo if memo else {}

    for var_id, var in choices.items():
        entry = var.sample(rng=rng, memo=memo)
        nested = var.children(entry)
        if nested is not None:
            sample_from_choices(_top_level_choices(nested), rng=rng, memo=memo)

    return memo


def sample_choice(space: SearchSpace, size=1, rng=None):
    if rng is None:
        rng = np.random.RandomState()

    choices = space.choices()
    for _ in range(size):
        yield sample_from_choices(choices, rng)


def sample(space: SearchSpace, size, rng=None):
    """Yield ``(choice, overrides)`` for ``size`` random points of ``space``."""
    for choice in sample_choice(space, size, rng):
        clone = space.clone()
        clone.freeze(choice)
        yield choice, clone.evaluate()


def _grid_choices(choices: dict):
    ids = list(choices)
    for combo in itertools.product(*(choices[i].grid_values() for i in ids)):
        base = dict(zip(ids, combo))
        nested = {}
        for var_id, entry in base.items():
            sub = choices[var_id].children(entry)
            if sub is not None:
                nested.update({k: v for k, v in _top_level_choices(sub).items() if k not in base})
        if not nested:
            yield base
            continue
        for sub_choice in _grid_choices(nested):
            yield {**base, **sub_choice}


def grid(space: SearchSpace):
    """Yield ``(choice, overrides)`` for every point of ``space`` in row-major order."""
    for choice in _grid_choices(space.choices()):
        clone = space.clone()
        clone.freeze(choice)
        yield choice, clone.evaluate()


def variable_from_spec(name: str, spec):
    """Build a variable from its JSON form.

    ``{"choice": [...]}``, ``{"int": [low, high]}`` or
    ``{"float": [low, high], "num": n, "log": bool}``; a bare list is a choice.
    """
    if isinstance(spec, list):
        return Choice(spec, name=name)
    if not isinstance(spec, dict) or len({"choice", "int", "float"} & set(spec)) != 1:
        raise ValueError(f"axis '{name}' should be a list or a dict with one of 'choice', 'int', 'float'")
    if "choice" in spec:
        return Choice(spec["choice"], name=name)
    if "int" in spec:
        low, high = spec["int"]
        return IntRange(int(low), int(high), name=name)
    low, high = spec["float"]
    return FloatRange(float(low), float(high), num=spec.get("num"), log=spec.get("log", False), name=name)
