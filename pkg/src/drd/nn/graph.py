"""Named directed acyclic graphs of layers.

Nodes are added in topological order (each input must already exist as a
feed or an earlier node), which makes forward a single sweep and backward
the reverse sweep. Gradients from multiple consumers of one tensor are
summed; nodes that receive no gradient are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

from .layers import Layer


@dataclass(frozen=True)
class _Node:
    name: str
    layer: Layer
    inputs: tuple[str, ...]


class NetGraph:
    def __init__(self, inputs: Sequence[str]):
        self.input_names = tuple(inputs)
        if len(set(self.input_names)) != len(self.input_names):
            raise ValueError("duplicate input names")
        self._nodes: list[_Node] = []
        self._known = set(self.input_names)

    def add(self, name: str, layer: Layer, inputs: Union[str, Sequence[str]]) -> str:
        if isinstance(inputs, str):
            inputs = (inputs,)
        if name in self._known:
            raise ValueError(f"duplicate node name {name!r}")
        for src in inputs:
            if src not in self._known:
                raise ValueError(f"node {name!r} reads unknown tensor {src!r}")
        layer.name = name
        self._nodes.append(_Node(name=name, layer=layer, inputs=tuple(inputs)))
        self._known.add(name)
        return name

    def forward(self, feeds: dict, train: bool = False) -> dict:
        """Run all nodes; returns every tensor by name (feeds included)."""
        if set(feeds) != set(self.input_names):
            raise ValueError(f"feeds must be exactly {self.input_names}")
        values = dict(feeds)
        for node in self._nodes:
            xs = [values[src] for src in node.inputs]
            values[node.name] = node.layer.forward(*xs, train=train)
        return values

    def backward(self, d_outputs: dict) -> dict:
        """Backpropagate given gradients w.r.t. named node outputs.

        Populates each layer's parameter gradients and returns gradients for
        the graph inputs that received any.
        """
        node_names = {n.name for n in self._nodes}
        for key in d_outputs:
            if key not in node_names:
                raise KeyError(f"no node named {key!r}")
        acc = {k: v.copy() for k, v in d_outputs.items()}
        for node in reversed(self._nodes):
            g = acc.pop(node.name, None)
            if g is None:
                continue
            dxs = node.layer.backward(g)
            if not isinstance(dxs, tuple):
                dxs = (dxs,)
            for src, dx in zip(node.inputs, dxs):
                if src in acc:
                    acc[src] = acc[src] + dx
                else:
                    acc[src] = dx
        return {k: v for k, v in acc.items() if k in self.input_names}

    def parameters(self) -> dict:
        out = {}
        for node in self._nodes:
            for pname, arr in node.layer.parameters().items():
                out[f"{node.name}.{pname}"] = arr
        return out

    def gradients(self) -> dict:
        out = {}
        for node in self._nodes:
            for pname, arr in node.layer.gradients().items():
                out[f"{node.name}.{pname}"] = arr
        return out

    def set_parameter(self, name: str, value) -> None:
        node_name, _, pname = name.rpartition(".")
        for node in self._nodes:
            if node.name == node_name:
                current = node.layer.parameters().get(pname)
                if current is None:
                    raise KeyError(name)
                if current.shape != value.shape:
                    raise ValueError(f"shape mismatch for {name}: {current.shape} vs {value.shape}")
                setattr(node.layer, pname, value.astype(current.dtype))
                return
        raise KeyError(name)

    def astype(self, dtype) -> "NetGraph":
        """Cast all parameters. Optimizers hold references to the old arrays,
        so build or rebuild the optimizer after casting, not before."""
        for node in self._nodes:
            node.layer.astype(dtype)
        return self

    def layers(self) -> list[Layer]:
        return [n.layer for n in self._nodes]

    def layer(self, name: str) -> Layer:
        for node in self._nodes:
            if node.name == name:
                return node.layer
        raise KeyError(name)

    def signature(self) -> tuple:
        """Discrete decisions of the last forward, for kink detection."""
        return tuple(s for s in (n.layer.signature() for n in self._nodes) if s is not None)
