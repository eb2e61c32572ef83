"""Three-layer continuous-time recurrent neural circuit and genotype decoding.

The circuit has seven stateful sensory neurons, ``N`` fully recurrent
interneurons and two non-recurrent motor neurons (left, right). All layers are
leaky integrators advanced with forward Euler.

Gene layout (frozen; used by the genome file format)::

    [0:3]       sensory time constant, gain, bias
    next 7*N    sensor -> inter weights, row-major (row = sensor k, col = inter i)
    next N*N    inter -> inter weights, row-major (row = source j, col = target i)
    next N      interneuron biases
    next N      interneuron time constants
    next 2*N    inter -> motor weights, row-major (row = inter j, col = left/right)
    last 3      motor gain, bias, time constant
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

N_SENSORS = 7
N_MOTORS = 2
DT = 0.1
GENOME_FORMAT_VERSION = 1

TAU_RANGE = (1.0, 2.0)
GAIN_RANGE = (1.0, 20.0)
BIAS_RANGE = (-4.0, 4.0)
WEIGHT_RANGE = (-5.0, 5.0)

GENE_LAYOUT_DOC = (
    "sensory[tau,gain,bias]; w_sensor_to_inter 7xN row-major; w_inter NxN row-major "
    "(row=source); inter_bias N; inter_tau N; w_inter_to_motor Nx2 row-major "
    "(col 0=left, 1=right); motor[gain,bias,tau]"
)


class DecodeError(ValueError):
    """Raised when a genotype cannot be decoded for the requested network size."""


def genome_dimension(n_inter: int) -> int:
    """Number of evolvable parameters for ``n_inter`` interneurons."""
    n = int(n_inter)
    return 3 + N_SENSORS * n + n * n + 2 * n + 2 * n + 3


def sigmoid(x):
    """Logistic function ``1 / (1 + exp(-x))``, elementwise and overflow-safe."""
    x = np.asarray(x, dtype=float)
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def _scale(x, lo: float, hi: float):
    return lo + (np.asarray(x, dtype=float) + 1.0) * 0.5 * (hi - lo)


def _unscale(v, lo: float, hi: float):
    return 2.0 * (np.asarray(v, dtype=float) - lo) / (hi - lo) - 1.0


@dataclass
class AgentParams:
    """Decoded phenotype of one agent.

    Interneuron gains are fixed at 1 and are therefore not stored.
    """

    n_inter: int
    sensory_tau: float
    sensory_gain: float
    sensory_bias: float
    w_sensor_to_inter: np.ndarray  # (7, N)
    w_inter: np.ndarray  # (N, N), [source, target]
    inter_bias: np.ndarray  # (N,)
    inter_tau: np.ndarray  # (N,)
    w_inter_to_motor: np.ndarray  # (N, 2), columns (left, right)
    motor_gain: float
    motor_bias: float
    motor_tau: float

    def __post_init__(self):
        n = self.n_inter
        self.w_sensor_to_inter = np.asarray(self.w_sensor_to_inter, float).reshape(N_SENSORS, n)
        self.w_inter = np.asarray(self.w_inter, float).reshape(n, n)
        self.inter_bias = np.asarray(self.inter_bias, float).reshape(n)
        self.inter_tau = np.asarray(self.inter_tau, float).reshape(n)
        self.w_inter_to_motor = np.asarray(self.w_inter_to_motor, float).reshape(n, N_MOTORS)

    def to_vector(self) -> np.ndarray:
        """Flatten to the phenotype vector, same order as the gene layout."""
        return np.concatenate([
            [self.sensory_tau, self.sensory_gain, self.sensory_bias],
            self.w_sensor_to_inter.ravel(),
            self.w_inter.ravel(),
            self.inter_bias,
            self.inter_tau,
            self.w_inter_to_motor.ravel(),
            [self.motor_gain, self.motor_bias, self.motor_tau],
        ]).astype(float)

    @classmethod
    def from_vector(cls, vec, n_inter: int) -> "AgentParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (genome_dimension(n_inter),):
            raise DecodeError(
                f"expected {genome_dimension(n_inter)} values for N={n_inter}, got {vec.shape}"
            )
        n = n_inter
        i = 3
        w_si = vec[i:i + N_SENSORS * n]
        i += N_SENSORS * n
        w_ii = vec[i:i + n * n]
        i += n * n
        bias = vec[i:i + n]
        i += n
        tau = vec[i:i + n]
        i += n
        w_im = vec[i:i + 2 * n]
        i += 2 * n
        return cls(
            n_inter=n,
            sensory_tau=float(vec[0]), sensory_gain=float(vec[1]), sensory_bias=float(vec[2]),
            w_sensor_to_inter=w_si, w_inter=w_ii, inter_bias=bias, inter_tau=tau,
            w_inter_to_motor=w_im,
            motor_gain=float(vec[i]), motor_bias=float(vec[i + 1]), motor_tau=float(vec[i + 2]),
        )

    def mirrored(self) -> "AgentParams":
        """Left/right mirror image: sensor rows reversed, motor columns swapped."""
        return AgentParams(
            n_inter=self.n_inter,
            sensory_tau=self.sensory_tau, sensory_gain=self.sensory_gain,
            sensory_bias=self.sensory_bias,
            w_sensor_to_inter=self.w_sensor_to_inter[::-1].copy(),
            w_inter=self.w_inter.copy(), inter_bias=self.inter_bias.copy(),
            inter_tau=self.inter_tau.copy(),
            w_inter_to_motor=self.w_inter_to_motor[:, ::-1].copy(),
            motor_gain=self.motor_gain, motor_bias=self.motor_bias, motor_tau=self.motor_tau,
        )

    def check_ranges(self) -> None:
        """Raise ``ValueError`` if any parameter lies outside its decode range."""
        checks = [
            ("sensory_tau", [self.sensory_tau], TAU_RANGE),
            ("inter_tau", self.inter_tau, TAU_RANGE),
            ("motor_tau", [self.motor_tau], TAU_RANGE),
            ("sensory_gain", [self.sensory_gain], GAIN_RANGE),
            ("motor_gain", [self.motor_gain], GAIN_RANGE),
            ("sensory_bias", [self.sensory_bias], BIAS_RANGE),
            ("inter_bias", self.inter_bias, BIAS_RANGE),
            ("motor_bias", [self.motor_bias], BIAS_RANGE),
            ("w_sensor_to_inter", self.w_sensor_to_inter, WEIGHT_RANGE),
            ("w_inter", self.w_inter, WEIGHT_RANGE),
            ("w_inter_to_motor", self.w_inter_to_motor, WEIGHT_RANGE),
        ]
        for name, values, (lo, hi) in checks:
            v = np.asarray(values, dtype=float)
            if np.any(v < lo) or np.any(v > hi):
                raise ValueError(f"{name} outside [{lo}, {hi}]")


def _gene_ranges(n_inter: int) -> tuple[np.ndarray, np.ndarray]:
    n = n_inter
    spans = (
        [TAU_RANGE, GAIN_RANGE, BIAS_RANGE]
        + [WEIGHT_RANGE] * (N_SENSORS * n + n * n)
        + [BIAS_RANGE] * n
        + [TAU_RANGE] * n
        + [WEIGHT_RANGE] * (2 * n)
        + [GAIN_RANGE, BIAS_RANGE, TAU_RANGE]
    )
    lo, hi = np.array(spans, dtype=float).T
    return lo, hi


def decode_genotype(genes, n_inter: int) -> AgentParams:
    """Map a genotype in ``[-1, 1]^D`` to network parameters.

    Each gene is mapped affinely onto the range of its parameter class:
    gains [1, 20], time constants [1, 2], biases [-4, 4], weights [-5, 5].

    Raises:
        DecodeError: if the genotype length does not match ``n_inter``.
    """
    genes = np.asarray(genes, dtype=float)
    if genes.ndim != 1 or genes.shape[0] != genome_dimension(n_inter):
        raise DecodeError(
            f"genotype of length {genes.size} does not match N={n_inter} "
            f"(expected {genome_dimension(n_inter)})"
        )
    lo, hi = _gene_ranges(n_inter)
    return AgentParams.from_vector(_scale(genes, lo, hi), n_inter)


def encode_params(params: AgentParams) -> np.ndarray:
    """Inverse of :func:`decode_genotype`."""
    lo, hi = _gene_ranges(params.n_inter)
    return _unscale(params.to_vector(), lo, hi)


@dataclass
class NetworkState:
    s_sensor: np.ndarray
    s_inter: np.ndarray
    s_motor: np.ndarray

    @classmethod
    def zeros(cls, n_inter: int) -> "NetworkState":
        return cls(np.zeros(N_SENSORS), np.zeros(n_inter), np.zeros(N_MOTORS))

    def copy(self) -> "NetworkState":
        return NetworkState(self.s_sensor.copy(), self.s_inter.copy(), self.s_motor.copy())


def step_sensory(state, inputs, dt: float = DT, tau: float = 1.0) -> np.ndarray:
    """One Euler step of ``tau * ds/dt = -s + I``."""
    state = np.asarray(state, dtype=float)
    return state + (dt / tau) * (-state + np.asarray(inputs, dtype=float))


def sensory_output(state, gain: float, bias: float) -> np.ndarray:
    """Sensory neuron outputs ``sigma(-gain * (s + bias))``.

    The argument is negated, so a larger state gives a smaller output.
    """
    return sigmoid(-gain * (np.asarray(state, dtype=float) + bias))


def inter_output(state, params: AgentParams) -> np.ndarray:
    """Interneuron firing rates ``sigma(s + bias)`` (unit gain)."""
    return sigmoid(np.asarray(state, dtype=float) + params.inter_bias)


def inter_derivative(state, sensor_out, params: AgentParams) -> np.ndarray:
    """Right-hand side ``ds/dt`` of the interneuron equation."""
    state = np.asarray(state, dtype=float)
    drive = params.w_inter.T @ inter_output(state, params)
    drive = drive + params.w_sensor_to_inter.T @ np.asarray(sensor_out, dtype=float)
    return (-state + drive) / params.inter_tau


def step_interneurons(state, sensor_out, params: AgentParams, dt: float = DT) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    return state + dt * inter_derivative(state, sensor_out, params)


def step_motors(state, inter_out, params: AgentParams, dt: float = DT) -> np.ndarray:
    """Euler step for the two motor neurons.

    Motor neurons integrate the weighted interneuron outputs; they have no
    recurrent or self connections.
    """
    state = np.asarray(state, dtype=float)
    drive = params.w_inter_to_motor.T @ np.asarray(inter_out, dtype=float)
    return state + (dt / params.motor_tau) * (-state + drive)


def motor_acceleration(s_left: float, s_right: float, gain: float, bias: float) -> float:
    """Effective acceleration ``gain * (sigma(s_r + bias) - sigma(s_l + bias))``."""
    return float(gain * (sigmoid(s_right + bias) - sigmoid(s_left + bias)))


def step_network(state: NetworkState, inputs, params: AgentParams,
                 dt: float = DT) -> NetworkState:
    """Synchronous Euler step of all three layers.

    Every layer reads the outputs of the previous instant, so the update order
    inside one step does not matter.
    """
    o_sens = sensory_output(state.s_sensor, params.sensory_gain, params.sensory_bias)
    o_inter = inter_output(state.s_inter, params)
    return NetworkState(
        s_sensor=step_sensory(state.s_sensor, inputs, dt, params.sensory_tau),
        s_inter=step_interneurons(state.s_inter, o_sens, params, dt),
        s_motor=step_motors(state.s_motor, o_inter, params, dt),
    )


def random_genotype(n_inter: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, genome_dimension(n_inter))


PathLike = Union[str, Path]


def save_genome(path: PathLike, genes, n_inter: int, **metadata) -> None:
    """Write a genome JSON file ``{version, n_inter, genes, layout, ...}``."""
    genes = np.asarray(genes, dtype=float)
    if genes.size != genome_dimension(n_inter):
        raise DecodeError(f"genome length {genes.size} does not match N={n_inter}")
    doc = {
        "version": GENOME_FORMAT_VERSION,
        "n_inter": int(n_inter),
        "genes": [float(g) for g in genes],
        "layout": GENE_LAYOUT_DOC,
    }
    doc.update(metadata)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_genome(path: PathLike) -> tuple[np.ndarray, int]:
    """Read a genome file, returning ``(genes, n_inter)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != GENOME_FORMAT_VERSION:
        raise DecodeError(f"unsupported genome version {doc.get('version')!r}")
    n_inter = int(doc["n_inter"])
    genes = np.asarray(doc["genes"], dtype=float)
    if genes.size != genome_dimension(n_inter):
        raise DecodeError(f"genome length {genes.size} does not match N={n_inter}")
    return genes, n_inter
