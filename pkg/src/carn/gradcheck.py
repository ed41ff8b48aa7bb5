"""Finite-difference gradient verification.

Central differences (step 1e-5) in float64 against the analytic backward
pass. Elements where the two one-sided differences disagree by more than
5% are counted as degenerate (a kink or argmax tie inside the probe
interval) and excluded; a group passes when the max relative error over
the smooth elements is below tolerance and at least 99% of elements are
smooth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

FD_STEP = 1e-5
TOLERANCE = 1e-4
SMOOTH_FRACTION = 0.99
_KINK_REL = 0.05


def relative_error(analytic, numeric):
    """Elementwise |a - n| / max(|a|, |n|); exact zeros agree trivially."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.zeros_like(denom)
    nz = denom > 1e-12
    err[nz] = np.abs(analytic - numeric)[nz] / denom[nz]
    return err


@dataclass
class GroupResult:
    name: str
    max_rel_err: float
    checked: int
    degenerate: int
    passed: bool

    def line(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status}  {self.name}: max_rel_err={self.max_rel_err:.3e} "
            f"checked={self.checked} degenerate={self.degenerate}"
        )


@dataclass
class GradcheckReport:
    scope: str
    groups: list[GroupResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self):
        return all(g.passed for g in self.groups)

    @property
    def worst(self):
        return max((g.max_rel_err for g in self.groups), default=0.0)

    def text(self):
        lines = [g.line() for g in self.groups]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"{verdict}  scope={self.scope} worst={self.worst:.3e} ({self.seconds:.1f}s)"
        )
        return "\n".join(lines)


def check_gradients(f, inputs, names=None, step=FD_STEP, tol=TOLERANCE):
    """Compare the analytic gradients of ``f`` against central differences.

    ``f`` maps the list of float64 Tensors in ``inputs`` to a scalar Tensor;
    it is re-invoked for every probe so batch-norm-style recomputation from
    batch statistics is exercised. Returns one GroupResult per input.
    """
    inputs = list(inputs)
    if names is None:
        names = [f"input{i}" for i in range(len(inputs))]
    loss = f(inputs)
    loss.backward()
    analytic = [inp.grad.copy() for inp in inputs]
    f0 = loss.item()

    results = []
    for inp, grad, name in zip(inputs, analytic, names):
        flat = inp.data.reshape(-1)
        numeric = np.zeros_like(flat)
        smooth = np.ones(flat.size, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(inputs).item()
            flat[i] = orig - step
            fm = f(inputs).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * step)
            gp = (fp - f0) / step
            gm = (f0 - fm) / step
            span = max(abs(gp), abs(gm), 1e-8)
            if abs(gp - gm) > _KINK_REL * span:
                smooth[i] = False
        err = relative_error(grad.reshape(-1), numeric)
        max_err = float(err[smooth].max()) if smooth.any() else 0.0
        n_deg = int((~smooth).sum())
        passed = max_err < tol and (flat.size - n_deg) >= SMOOTH_FRACTION * flat.size
        results.append(GroupResult(name, max_err, flat.size, n_deg, passed))
    return results


# ---------------------------------------------------------------------------
# per-op checks


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def _weighted(out):
    """Fixed random projection to a scalar so every output element matters.

    The weights depend only on the output shape, so repeated forward passes
    during finite differencing see the same projection.
    """
    w = np.random.default_rng(7).standard_normal(out.data.shape)
    return T.sum_all(T.mul(out, Tensor(w, dtype=np.float64)))


def _check_conv2d(rng):
    results = []
    for stride, padding in [(1, "same"), (2, "same"), (1, "valid")]:
        x, k, b = _rand(rng, 2, 3, 6, 5), _rand(rng, 4, 3, 3, 3), _rand(rng, 4)
        results.extend(
            check_gradients(
                lambda v, s=stride, p=padding: _weighted(T.conv2d(v[0], v[1], v[2], s, p)),
                [x, k, b],
                [f"conv2d[{stride},{padding}].{n}" for n in ("x", "kernel", "bias")],
            )
        )
    return results


def _check_maxpool2(rng):
    # distinct integers spread values so windows have clear argmax margins
    x = Tensor(rng.permutation(64).astype(np.float64).reshape(2, 2, 4, 4) * 0.31)
    return check_gradients(
        lambda v: _weighted(T.maxpool2(v[0])),
        [x],
        ["maxpool2.x"],
    )


def _check_batchnorm(rng):
    results = []
    for mode in ("train", "infer"):
        x = _rand(rng, 4, 3, 3, 2)
        gamma = Tensor(1.0 + 0.3 * rng.standard_normal(3), dtype=np.float64)
        beta = _rand(rng, 3)
        state = T.BatchNormState(3, np.float64)
        state.mean = rng.standard_normal(3)
        state.var = 1.0 + 0.5 * rng.random(3)
        res = check_gradients(
            lambda v, m=mode: _weighted(T.batchnorm(v[0], v[1], v[2], state, m)),
            [x, gamma, beta],
            [f"batchnorm[{mode}].{n}" for n in ("x", "gamma", "beta")],
        )
        results.extend(res)
    return results


def _check_activations(rng):
    results = []
    x = Tensor(np.sign(rng.standard_normal((3, 4))) * (0.05 + rng.random((3, 4))))
    results.extend(
        check_gradients(
            lambda v: _weighted(T.relu(v[0])), [x], ["relu.x"]
        )
    )
    x = _rand(rng, 3, 4)
    results.extend(
        check_gradients(
            lambda v: _weighted(T.tanh(v[0])),
            [x],
            ["tanh.x"],
            tol=1e-6,
        )
    )
    return results


def _check_dense(rng):
    x, W, b = _rand(rng, 3, 5), _rand(rng, 4, 5), _rand(rng, 4)
    return check_gradients(
        lambda v: _weighted(T.dense(v[0], v[1], v[2])),
        [x, W, b],
        ["dense.x", "dense.W", "dense.b"],
        tol=1e-6,
    )


def _check_global_avg_pool(rng):
    x = _rand(rng, 2, 3, 4, 5)
    return check_gradients(
        lambda v: _weighted(T.global_avg_pool(v[0])),
        [x],
        ["global_avg_pool.x"],
        tol=1e-6,
    )


def _check_concat(rng):
    a, b = _rand(rng, 2, 2, 3, 3), _rand(rng, 2, 3, 3, 3)
    return check_gradients(
        lambda v: _weighted(T.concat_channels(v[0], v[1])),
        [a, b],
        ["concat_channels.a", "concat_channels.b"],
        tol=1e-6,
    )


def _check_elementwise(rng):
    results = []
    for kind in ("mul", "add"):
        a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
        results.extend(
            check_gradients(
                lambda v, k=kind: _weighted(T.elementwise(v[0], v[1], k)),
                [a, b],
                [f"elementwise[{kind}].a", f"elementwise[{kind}].b"],
                tol=1e-6,
            )
        )
    return results


def _check_reductions(rng):
    results = []
    x = Tensor(np.sign(rng.standard_normal((3, 4))) * (0.05 + rng.random((3, 4))))
    results.extend(check_gradients(lambda v: T.sum_all(T.absolute(v[0])), [x], ["absolute.x"]))
    x = _rand(rng, 3, 4)
    results.extend(
        check_gradients(
            lambda v: _weighted(v[0]), [x], ["sum_all.x"], tol=1e-6
        )
    )
    x = Tensor(0.2 + rng.random((3, 4)))
    results.extend(check_gradients(lambda v: T.l2_norm(v[0]), [x], ["l2_norm.x"], tol=1e-6))
    return results


_OP_CHECKS = {
    "conv2d": _check_conv2d,
    "maxpool2": _check_maxpool2,
    "batchnorm": _check_batchnorm,
    "activation": _check_activations,
    "dense": _check_dense,
    "global_avg_pool": _check_global_avg_pool,
    "concat_channels": _check_concat,
    "elementwise": _check_elementwise,
    "reductions": _check_reductions,
}


def _check_au(rng):
    from .amplifier import AUParams, au_forward

    params = AUParams.initialize(c_in=3, c_l=4, rng=rng, dtype=np.float64)
    # randomize so gradients are not at the symmetric init point
    for t in params.trainable().values():
        t.data = t.data + 0.2 * rng.standard_normal(t.data.shape)
    t_in = _rand(rng, 2, 3, 5, 4)
    tensors = [t_in] + list(params.trainable().values())
    names = ["au.t"] + [f"au.{n}" for n in params.trainable()]

    def f(v):
        return _weighted(au_forward(v[0], params, "train"))

    return check_gradients(f, tensors, names)


def _check_model(rng):
    from .losses import LossConfig, loss_t
    from .model import CARNConfig, build_model, forward

    cfg = CARNConfig(
        input_hw=(64, 64),
        stem_channels=4,
        au_cl_schedule=(4, 4, 4, 4, 4, 4),
        head_channels=8,
    )
    params = build_model(cfg, seed=1234).astype(np.float64)
    batch = Tensor(rng.random((2, 1, 64, 64)), dtype=np.float64)
    target = rng.random((2, 30)) * 10 + 5
    lcfg = LossConfig(lambda_l=1.0, lambda_p=1e-4)
    y_tilde = target + rng.standard_normal(target.shape)
    named = params.trainable()

    def f(v):
        pred = forward(params, batch, "train")
        return loss_t(pred, target, y_tilde, params.regularized(), lcfg)

    return check_gradients(f, list(named.values()), [f"model.{n}" for n in named])


def _check_loss(rng):
    from .losses import LossConfig, loss_l, loss_p, loss_t

    results = []
    pred = Tensor(rng.random((4, 30)) * 10 + 2, dtype=np.float64)
    target = rng.random((4, 30)) * 10 + 2
    y_tilde = rng.random((4, 30)) * 10 + 2
    w1 = Tensor(0.1 + rng.random((3, 4)), dtype=np.float64)
    w2 = Tensor(0.1 + rng.random((5,)), dtype=np.float64)

    results.extend(
        check_gradients(
            lambda v: loss_p(v[0], target, [v[1], v[2]], 1e-2),
            [pred, w1, w2],
            ["loss_p.pred", "loss_p.w1", "loss_p.w2"],
        )
    )
    results.extend(
        check_gradients(lambda v: loss_l(v[0], y_tilde), [pred], ["loss_l.pred"], tol=1e-6)
    )
    cfg = LossConfig(lambda_l=1.0, lambda_p=1e-4)
    results.extend(
        check_gradients(
            lambda v: loss_t(v[0], target, y_tilde, [v[1]], cfg),
            [pred, w1],
            ["loss_t.pred", "loss_t.w1"],
        )
    )
    return results


def run_gradcheck(scope="all", seed=20240817):
    """Run finite-difference checks for the requested scope.

    Scopes: an op name (see ``op_scopes()``), 'ops', 'au', 'model', 'loss',
    or 'all'.
    """
    start = time.time()
    report = GradcheckReport(scope=scope)
    rng = np.random.default_rng(seed)
    if scope in _OP_CHECKS:
        report.groups.extend(_OP_CHECKS[scope](rng))
    elif scope == "ops":
        for fn in _OP_CHECKS.values():
            report.groups.extend(fn(rng))
    elif scope == "au":
        report.groups.extend(_check_au(rng))
    elif scope == "model":
        report.groups.extend(_check_model(rng))
    elif scope == "loss":
        report.groups.extend(_check_loss(rng))
    elif scope == "all":
        for fn in _OP_CHECKS.values():
            report.groups.extend(fn(rng))
        report.groups.extend(_check_au(rng))
        report.groups.extend(_check_loss(rng))
        report.groups.extend(_check_model(rng))
    else:
        raise ValueError(
            f"unknown scope {scope!r}; choose an op name, 'ops', 'au', 'model', 'loss' or 'all'"
        )
    report.seconds = time.time() - start
    return report


def op_scopes():
    return list(_OP_CHECKS)
