"""
Full residual encoder-decoder networks.

The input first passes through a constant affine standardization (fitted on
training rows), then an optional feature attention gate, then the encoder.
Each decoder layer adds the matching encoder activation to its affine
output before applying its activation; the output layer is linear.

Weights are stored in input-by-output layout, so a layer computes
``h @ W + b``. With weight normalization each output column is
``W[:, j] = g[j] * V[:, j] / ||V[:, j]||``.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np

from jpinn.autodiff import ACTIVATIONS, Tensor, softmax, sqrt, tanh
from jpinn.config import BaseNetworkSettings
from jpinn.exceptions import ConfigurationError
from jpinn.schemas.network import NetworkTopology

NORM_FLOOR = 1e-12


class FullResidualNet:
    """Multi-layer encoder-decoder with mirrored skip connections."""

    def __init__(self, topology: NetworkTopology, seed: int):
        self.topology = topology
        self.params: Dict[str, Tensor] = {}
        self.input_shift = np.zeros(topology.input_width)
        self.input_scale = np.ones(topology.input_width)
        rng = np.random.default_rng(seed)

        d = topology.input_width
        if topology.attention:
            self._dense("att1", d, d, rng, normalized=False)
            self._dense("att2", d, d, rng, normalized=False)

        width = d
        for i, w in enumerate(topology.encoder_widths):
            self._dense(f"enc{i}", width, w, rng, normalized=topology.normalization)
            width = w
        for j, w in enumerate(topology.decoder_widths):
            self._dense(f"dec{j}", width, w, rng, normalized=topology.normalization)
            width = w
        self._dense("out", width, topology.output_width, rng, normalized=topology.normalization)

    def _dense(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator, normalized: bool) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        v = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if normalized:
            self.params[f"{name}.v"] = Tensor(v, requires_grad=True, name=f"{name}.v")
            g = np.sqrt(np.sum(v * v, axis=0))
            self.params[f"{name}.g"] = Tensor(g, requires_grad=True, name=f"{name}.g")
        else:
            self.params[f"{name}.w"] = Tensor(v, requires_grad=True, name=f"{name}.w")
        self.params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")

    def _affine(self, name: str, h: Tensor) -> Tensor:
        if f"{name}.w" in self.params:
            weight = self.params[f"{name}.w"]
        else:
            v, g = self.params[f"{name}.v"], self.params[f"{name}.g"]
            norm = sqrt((v * v).sum(axis=0) + NORM_FLOOR)
            weight = v * (g / norm)
        return h @ weight + self.params[f"{name}.b"]

    # ------------------------------------------------------------ interface
    def set_input_scaling(self, shift: Sequence[float], scale: Sequence[float]) -> None:
        shift_arr = np.asarray(shift, dtype=np.float64)
        scale_arr = np.asarray(scale, dtype=np.float64)
        if shift_arr.shape != (self.topology.input_width,) or scale_arr.shape != shift_arr.shape:
            raise ConfigurationError(
                "Input scaling does not match the input width",
                details={"input_width": self.topology.input_width, "shape": list(shift_arr.shape)},
            )
        if np.any(scale_arr <= 0):
            raise ConfigurationError("Input scales must be positive")
        self.input_shift, self.input_scale = shift_arr, scale_arr

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def parameter_names(self) -> List[str]:
        return list(self.params)

    def state(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ConfigurationError(
                "Parameter names do not match the network",
                details={
                    "missing": sorted(set(self.params) - set(state)),
                    "extra": sorted(set(state) - set(self.params)),
                },
            )
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise ConfigurationError(f"Shape mismatch for parameter {name}")
            self.params[name] = Tensor(value.copy(), requires_grad=True, name=name)

    def forward(self, inputs: Tensor, trace: Optional[List[np.ndarray]] = None) -> Tensor:
        """
        Evaluate the network on a ``(n, input_width)`` batch.

        Args:
            inputs: Input rows in physical units.
            trace: When given, the pre-activation array of every hidden layer
                is appended to it.

        Returns:
            ``(n, output_width)`` tensor.
        """
        topo = self.topology
        if inputs.ndim != 2 or inputs.shape[1] != topo.input_width:
            raise ConfigurationError(
                "Input width does not match the network",
                details={"expected": topo.input_width, "shape": list(inputs.shape)},
            )
        h = (inputs - self.input_shift) / self.input_scale

        if topo.attention:
            gate = softmax(self._affine("att2", tanh(self._affine("att1", h))), axis=-1)
            h = h + h * gate

        encoder_act = ACTIVATIONS[topo.encoder_activation]
        decoder_act = ACTIVATIONS[topo.decoder_activation]
        depth = len(topo.encoder_widths)

        skips: List[Tensor] = []
        for i in range(depth):
            pre = self._affine(f"enc{i}", h)
            if trace is not None:
                trace.append(pre.data)
            h = encoder_act(pre)
            skips.append(h)
        for j in range(depth):
            pre = self._affine(f"dec{j}", h) + skips[depth - 1 - j]
            if trace is not None:
                trace.append(pre.data)
            h = decoder_act(pre)
        return ACTIVATIONS[topo.output_activation](self._affine("out", h))

    __call__ = forward


def build_estimation_net(
    input_width: int, seed: int, network: Optional[BaseNetworkSettings] = None, output_width: int = 2
) -> FullResidualNet:
    """Estimation network: one log-concentration output per species."""
    network = network or BaseNetworkSettings()
    topology = NetworkTopology(
        input_width=input_width,
        encoder_widths=tuple(network.resolved_estimation_widths()),
        output_width=output_width,
        encoder_activation=network.estimation_encoder_activation,
        decoder_activation=network.estimation_decoder_activation,
        attention=network.attention,
        normalization=network.normalization,
    )
    return FullResidualNet(topology, seed)


def build_parameter_net(
    input_width: int, seed: int, network: Optional[BaseNetworkSettings] = None, output_width: int = 14
) -> FullResidualNet:
    """Parameter network: seven PDE coefficient fields per species."""
    network = network or BaseNetworkSettings()
    topology = NetworkTopology(
        input_width=input_width,
        encoder_widths=tuple(network.resolved_parameter_widths()),
        output_width=output_width,
        encoder_activation=network.parameter_activation,
        decoder_activation=network.parameter_activation,
        attention=network.attention,
        normalization=network.normalization,
    )
    return FullResidualNet(topology, seed)
