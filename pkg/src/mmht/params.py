"""Named parameter collections, initialization, and text checkpoints."""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .tensor import DTYPE, Tensor

CHECKPOINT_MAGIC = "mmht-checkpoint 1"


class ParamStore:
    """Ordered map from dotted parameter name to a trainable Tensor.

    Iteration is always in lexicographic name order, so serialization,
    optimizer traversal and gradient maps are deterministic.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, data):
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._params[name] = Tensor(data, requires_grad=True, op=f"param:{name}")

    def adopt(self, name, tensor):
        """Register an existing tensor under `name`, shared rather than copied.

        Lets several stores hold disjoint views over one set of live tensors,
        e.g. to drive two optimizers over different parameter subsets.
        """
        if self.is_frozen:
            raise ContractViolation("frozen parameter store is read-only")
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def copy(self):
        out = ParamStore()
        for name, p in self.items():
            out.add(name, p.data.copy())
        return out

    def frozen(self):
        """A read-only view: same names, tensors without gradients.

        The returned store shares array storage with this one, so freezing
        is cheap; the frozen tensors never join the autodiff tape.
        """
        out = FrozenParams()
        for name, p in self.items():
            out._params[name] = Tensor(p.data, op=f"frozen:{name}")
        return out

    @property
    def is_frozen(self):
        return False

    def byte_snapshot(self):
        """Concatenated raw bytes of all parameters, for freeze checks."""
        return b"".join(self._params[n].data.tobytes() for n in self.names())


class FrozenParams(ParamStore):
    def add(self, name, data):
        raise ContractViolation("frozen parameter store is read-only")

    @property
    def is_frozen(self):
        return True


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


def add_dense(store, prefix, fan_in, fan_out, rng):
    store.add(prefix + ".W", glorot_uniform(rng, fan_in, fan_out))
    store.add(prefix + ".b", np.zeros(fan_out, dtype=DTYPE))


def add_layer_norm(store, prefix, dim):
    store.add(prefix + ".g", np.ones(dim, dtype=DTYPE))
    store.add(prefix + ".b", np.zeros(dim, dtype=DTYPE))


def add_attention(store, prefix, dim, rng):
    for part in ("q", "k", "v", "o"):
        add_dense(store, f"{prefix}.{part}", dim, dim, rng)


def add_transformer(store, prefix, dim, rng, ff_mult=2):
    add_attention(store, prefix + ".attn", dim, rng)
    add_layer_norm(store, prefix + ".ln1", dim)
    add_dense(store, prefix + ".ff1", dim, ff_mult * dim, rng)
    add_dense(store, prefix + ".ff2", ff_mult * dim, dim, rng)
    add_layer_norm(store, prefix + ".ln2", dim)


def sub_view(store, prefix):
    """Sub-store of all parameters under a dotted prefix, names un-prefixed."""
    out = FrozenParams() if store.is_frozen else ParamStore()
    full = prefix + "."
    for name, p in store.items():
        if name.startswith(full):
            out._params[name[len(full):]] = p
    return out


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, store, meta):
    """Write parameters as text: magic line, one JSON meta line, one line per
    parameter (`name dims... : values...`), names lexicographic. repr() floats
    round-trip exactly."""
    lines = [CHECKPOINT_MAGIC, json.dumps(meta, sort_keys=True)]
    for name, p in store.items():
        dims = " ".join(str(d) for d in p.data.shape)
        vals = " ".join(repr(float(v)) for v in p.data.ravel())
        lines.append(f"{name} {dims} : {vals}")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not a checkpoint file")
    meta = json.loads(lines[1])
    store = ParamStore()
    for line in lines[2:]:
        if not line.strip():
            continue
        head, _, tail = line.partition(" : ")
        parts = head.split()
        name, dims = parts[0], tuple(int(d) for d in parts[1:])
        vals = np.array([float(v) for v in tail.split()], dtype=DTYPE)
        store.add(name, vals.reshape(dims))
    return store, meta
