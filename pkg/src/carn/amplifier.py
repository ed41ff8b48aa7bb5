"""The amplifier unit: a gated selective-feature-reuse block.

An input feature map t runs through a 3x3 conv producing a linear map
f_l. One path applies bn+relu to get the nonlinear feature f_n; the other
is a gate, conv+tanh of f_l, whose output f_g scales the input:
f_s = t * (f_g + 1), an elementwise amplifier with gain in (0, 2). The
block output is bn(f_n concat f_s), so every unit widens its input by
c_l channels.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


class AUParams:
    """Learnable state of one amplifier unit.

    ``w_l``/``b_l``: the linear-map conv (c_l out-channels, 3x3).
    ``w_g``/``b_g``: the gate conv (back to c_in channels so the gate can
    multiply the input elementwise).
    ``bn_mid`` normalizes the c_l-channel nonlinear path, ``bn_out`` the
    concatenated (c_in + c_l)-channel output.
    """

    def __init__(self, w_l, b_l, w_g, b_g, bn_mid_gamma, bn_mid_beta, bn_mid_state,
                 bn_out_gamma, bn_out_beta, bn_out_state):
        self.w_l = w_l
        self.b_l = b_l
        self.w_g = w_g
        self.b_g = b_g
        self.bn_mid_gamma = bn_mid_gamma
        self.bn_mid_beta = bn_mid_beta
        self.bn_mid_state = bn_mid_state
        self.bn_out_gamma = bn_out_gamma
        self.bn_out_beta = bn_out_beta
        self.bn_out_state = bn_out_state
        if self.w_g.data.shape[0] != self.c_in:
            raise ValueError(
                f"gate must emit c_in={self.c_in} channels, got {self.w_g.data.shape[0]}"
            )
        if self.bn_out_gamma.data.shape[0] != self.c_in + self.c_l:
            raise ValueError("bn_out must cover c_in + c_l channels")

    @property
    def c_in(self):
        return self.w_l.data.shape[1]

    @property
    def c_l(self):
        return self.w_l.data.shape[0]

    @classmethod
    def initialize(cls, c_in, c_l, rng, dtype=T.STANDARD_DTYPE, gate_kernel=3):
        """He-init the relu-path conv, Xavier-init the tanh gate, bn at identity.

        ``gate_kernel`` is a declared knob (3x3 default) since only the
        linear-map conv's kernel size is fixed by the architecture.
        """
        fan_l = c_in * 9
        w_l = Tensor(rng.standard_normal((c_l, c_in, 3, 3)) * np.sqrt(2.0 / fan_l), dtype)
        b_l = Tensor(np.zeros(c_l), dtype)
        kg = gate_kernel
        fan_g = c_l * kg * kg
        fan_g_out = c_in * kg * kg
        w_g = Tensor(
            rng.standard_normal((c_in, c_l, kg, kg)) * np.sqrt(2.0 / (fan_g + fan_g_out)),
            dtype,
        )
        b_g = Tensor(np.zeros(c_in), dtype)
        return cls(
            w_l, b_l, w_g, b_g,
            Tensor(np.ones(c_l), dtype), Tensor(np.zeros(c_l), dtype),
            BatchNormState(c_l, dtype),
            Tensor(np.ones(c_in + c_l), dtype), Tensor(np.zeros(c_in + c_l), dtype),
            BatchNormState(c_in + c_l, dtype),
        )

    def trainable(self):
        return {
            "w_l": self.w_l, "b_l": self.b_l,
            "w_g": self.w_g, "b_g": self.b_g,
            "bn_mid.gamma": self.bn_mid_gamma, "bn_mid.beta": self.bn_mid_beta,
            "bn_out.gamma": self.bn_out_gamma, "bn_out.beta": self.bn_out_beta,
        }

    def states(self):
        return {"bn_mid": self.bn_mid_state, "bn_out": self.bn_out_state}

    def astype(self, dtype):
        conv = {k: Tensor(v.data.astype(dtype)) for k, v in
                (("w_l", self.w_l), ("b_l", self.b_l), ("w_g", self.w_g), ("b_g", self.b_g))}
        return AUParams(
            conv["w_l"], conv["b_l"], conv["w_g"], conv["b_g"],
            Tensor(self.bn_mid_gamma.data.astype(dtype)),
            Tensor(self.bn_mid_beta.data.astype(dtype)),
            self.bn_mid_state.astype(dtype),
            Tensor(self.bn_out_gamma.data.astype(dtype)),
            Tensor(self.bn_out_beta.data.astype(dtype)),
            self.bn_out_state.astype(dtype),
        )


def _check_input(t, params):
    if t.data.ndim != 4:
        raise ValueError("amplifier unit expects a (B, C, H, W) tensor")
    if t.data.shape[1] != params.c_in:
        raise ValueError(
            f"channel mismatch: input has {t.data.shape[1]} channels, "
            f"unit expects {params.c_in}"
        )


def _gate(t, params):
    f_l = T.conv2d(t, params.w_l, params.b_l, stride=1, padding="same")
    f_g = T.tanh(T.conv2d(f_l, params.w_g, params.b_g, stride=1, padding="same"))
    return f_l, f_g


def au_forward(t, params, mode):
    """Run one amplifier unit; spatial size is preserved, channels grow by c_l."""
    _check_input(t, params)
    f_l, f_g = _gate(t, params)
    f_n = T.relu(T.batchnorm(f_l, params.bn_mid_gamma, params.bn_mid_beta,
                             params.bn_mid_state, mode))
    f_s = T.mul(t, T.offset(f_g, 1.0))
    return T.batchnorm(T.concat_channels(f_n, f_s),
                       params.bn_out_gamma, params.bn_out_beta,
                       params.bn_out_state, mode)


def amplification_factor(t, params):
    """The elementwise gain f_g + 1 applied to the input; lies in (0, 2)."""
    _check_input(t, params)
    _, f_g = _gate(t, params)
    return T.offset(f_g, 1.0)


def selected_feature(t, params):
    """The pre-normalization amplified input t * (f_g + 1)."""
    _check_input(t, params)
    _, f_g = _gate(t, params)
    return T.mul(t, T.offset(f_g, 1.0))
