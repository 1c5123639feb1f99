"""Structure-of-arrays particle container and deterministic random streams."""

import numpy as np

INIT, RESAMPLE, MOVE = 0, 1, 2


class Particles:
    """A population stored as named, equal-length numpy arrays.

    Supports fancy indexing (``p[idx]``) for resampling and chunking, and
    round-trips through plain dicts of nested lists for serialization.
    """

    __slots__ = ("_arrays",)

    def __init__(self, **arrays):
        lengths = {len(v) for v in arrays.values()}
        if len(lengths) > 1:
            raise ValueError(f"field lengths differ: {lengths}")
        object.__setattr__(self, "_arrays", {k: np.asarray(v) for k, v in arrays.items()})

    def __getattr__(self, name):
        try:
            return self._arrays[name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name, value):
        raise AttributeError("Particles is immutable; use replace()")

    def __len__(self):
        return len(next(iter(self._arrays.values())))

    def __getitem__(self, idx):
        return Particles(**{k: v[idx] for k, v in self._arrays.items()})

    @property
    def fields(self):
        return tuple(self._arrays)

    def replace(self, **updates):
        arrays = dict(self._arrays)
        arrays.update(updates)
        return Particles(**arrays)

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        keys = parts[0].fields
        return cls(**{k: np.concatenate([p._arrays[k] for p in parts]) for k in keys})

    def to_json(self):
        return {k: v.tolist() for k, v in self._arrays.items()}

    @classmethod
    def from_json(cls, d, dtypes=None):
        dtypes = dtypes or {}
        return cls(**{k: np.asarray(v, dtype=dtypes.get(k, float)) for k, v in d.items()})

    def equals(self, other):
        return (self.fields == other.fields
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self.fields))


class ParticleStreams:
    """Counter-keyed random streams.

    Every draw is a pure function of ``(seed, iteration, purpose, sweep)``;
    within a block, row ``i`` belongs to particle ``i``. Results therefore
    do not depend on how particles are split across worker threads.
    """

    def __init__(self, seed):
        self.seed = int(seed)

    def generator(self, *key):
        ss = np.random.SeedSequence([self.seed, *[int(k) for k in key]])
        return np.random.Generator(np.random.Philox(ss))

    def block(self, t, purpose, n, k, sweep=0):
        return self.generator(t, purpose, sweep).random((n, k))

    def uniform(self, t, purpose):
        return float(self.generator(t, purpose, 0).random())
