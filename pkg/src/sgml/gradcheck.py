"""Finite-difference verification of every analytic derivative.

Central differences with h=1e-6 against the closed-form partials, both at
the scalar-loss level and end-to-end through small networks for each
training variant. The error measure is |analytic - fd| / max(1, |analytic|,
|fd|), i.e. absolute below magnitude 1 and relative above it.

``flip_sign`` negates the analytic derivative in the first scalar check; it
exists to prove the checker can detect a wrong gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import (LossParams, NEGATIVE, POSITIVE, PairSample, bce, bdl,
                     sbdl_batch, sbdl_positive, sbdl_negative, sgml_objective)
from .network import NetworkShape, init_params
from .sampling import PairList, enumerate_pairs
from .trainer import TrainConfig, loss_and_param_grads

DEFAULT_H = 1e-6
DEFAULT_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    cases: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _rel_err(analytic: float, fd: float) -> float:
    return abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))


def _central(f, x: float, h: float) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _random_params(rng) -> LossParams:
    return LossParams(alpha=float(rng.uniform(0.5, 5.0)),
                      beta=float(rng.uniform(-1.0, 1.0)),
                      lam=float(rng.uniform(0.0, 2.0)),
                      cost_pos=float(rng.uniform(0.5, 2.0)),
                      cost_neg=float(rng.uniform(0.5, 2.0)))


def check_scalar_losses(n_cases: int = 1000, seed: int = 0, h: float = DEFAULT_H,
                        tol: float = DEFAULT_TOL,
                        flip_sign: bool = False) -> list[CheckResult]:
    """FD-check d/ds and d/dg of every scalar loss on random inputs."""
    rng = np.random.Generator(np.random.PCG64(seed))
    errs = {name: 0.0 for name in
            ("bdl.d_ds", "sbdl_positive.d_ds", "sbdl_positive.d_dg",
             "sbdl_negative.d_ds", "sbdl_negative.d_dg", "bce.d_dp")}
    for case in range(n_cases):
        lp = _random_params(rng)
        s = float(rng.uniform(-1.0, 1.0))
        g = float(rng.uniform(0.0, 1.0))
        pol = POSITIVE if rng.random() < 0.5 else NEGATIVE

        analytic = bdl(s, pol, lp).d_ds
        if flip_sign:
            analytic = -analytic
        fd = _central(lambda t: bdl(t, pol, lp).value, s, h)
        errs["bdl.d_ds"] = max(errs["bdl.d_ds"], _rel_err(analytic, fd))

        for name, fn in (("sbdl_positive", sbdl_positive),
                         ("sbdl_negative", sbdl_negative)):
            lv = fn(s, g, lp)
            fd_s = _central(lambda t: fn(t, g, lp).value, s, h)
            fd_g = _central(lambda t: fn(s, t, lp).value, g, h)
            errs[f"{name}.d_ds"] = max(errs[f"{name}.d_ds"], _rel_err(lv.d_ds, fd_s))
            errs[f"{name}.d_dg"] = max(errs[f"{name}.d_dg"], _rel_err(lv.d_dg, fd_g))

        k = int(rng.integers(1, 9))
        probs = rng.uniform(0.01, 0.99, size=k)
        lab = (rng.random(k) < 0.5).astype(float)
        grad = bce(probs, lab).d_dp
        i = int(rng.integers(k))

        def f_p(t, i=i, probs=probs, lab=lab):
            p2 = probs.copy()
            p2[i] = t
            return bce(p2, lab).value

        fd_p = _central(f_p, float(probs[i]), h)
        errs["bce.d_dp"] = max(errs["bce.d_dp"], _rel_err(float(grad[i]), fd_p))
    return [CheckResult(name, n_cases, err, tol) for name, err in errs.items()]


def check_batch_losses(n_cases: int = 50, seed: int = 1, h: float = DEFAULT_H,
                       tol: float = DEFAULT_TOL) -> list[CheckResult]:
    """FD-check the per-pair gradients of sbdl_batch and sgml_objective."""
    rng = np.random.Generator(np.random.PCG64(seed))
    err_batch = 0.0
    err_obj = 0.0
    for _ in range(n_cases):
        lp = _random_params(rng)
        m = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        pairs = [PairSample(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)),
                            POSITIVE) for _ in range(m)]
        pairs += [PairSample(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)),
                             NEGATIVE) for _ in range(n)]
        batch = sbdl_batch(pairs, lp)
        idx = int(rng.integers(len(pairs)))

        def f_s(t):
            mod = [PairSample(p.s, p.g, p.polarity) for p in pairs]
            mod[idx].s = t
            return sbdl_batch(mod, lp).value

        def f_g(t):
            mod = [PairSample(p.s, p.g, p.polarity) for p in pairs]
            mod[idx].g = t
            return sbdl_batch(mod, lp).value

        err_batch = max(err_batch,
                        _rel_err(float(batch.d_ds[idx]),
                                 _central(f_s, pairs[idx].s, h)),
                        _rel_err(float(batch.d_dg[idx]),
                                 _central(f_g, pairs[idx].g, h)))

        k = int(rng.integers(1, 6))
        terms = [(rng.uniform(0.05, 0.95, size=k), (rng.random(k) < 0.5).astype(float))
                 for _ in range(int(rng.integers(1, 4)))]
        obj = sgml_objective(pairs, terms, lp)
        ti = int(rng.integers(len(terms)))
        pi = int(rng.integers(k))

        def f_obj(t):
            probs2 = terms[ti][0].copy()
            probs2[pi] = t
            terms2 = list(terms)
            terms2[ti] = (probs2, terms[ti][1])
            return sgml_objective(pairs, terms2, lp).value

        err_obj = max(err_obj, _rel_err(float(obj.attr_grads[ti][pi]),
                                        _central(f_obj, float(terms[ti][0][pi]), h)))
    return [CheckResult("sbdl_batch.pair_grads", n_cases, err_batch, tol),
            CheckResult("sgml_objective.attr_grads", n_cases, err_obj, tol)]


def _network_variants() -> list[tuple[str, TrainConfig]]:
    base = dict(sampling="batch", alpha=2.0, beta=0.3, lam=0.7, lr=1e-3,
                epochs=1, trunk_dims=(7,), fc_dim=9, emb_dim=5)
    return [
        ("network.metric_only", TrainConfig(variant="metric_only", **base)),
        ("network.attr_only", TrainConfig(variant="attr_only", **base)),
        ("network.multitask", TrainConfig(variant="multitask", **base)),
        ("network.sgml", TrainConfig(variant="sgml", **base)),
        ("network.sgml_truth", TrainConfig(variant="sgml",
                                           sgs_source="ground_truth", **base)),
        ("network.sgml_backprop", TrainConfig(variant="sgml",
                                              sgs_backprop=True, **base)),
    ]


def check_network_gradients(n_cases: int = 20, seed: int = 2, h: float = DEFAULT_H,
                            tol: float = DEFAULT_TOL) -> list[CheckResult]:
    """End-to-end FD check of d(variant loss)/d(every parameter).

    Small nets (input <= 8, widths <= 16, batch <= 8) keep the parameter
    count manageable. For the default detached-SGS configuration the FD
    evaluations freeze g at its base value, matching what the analytic
    gradient treats as constant; the sgs_backprop variant leaves g free.
    """
    variants = _network_variants()
    results = []
    for name, cfg in variants:
        rng = np.random.Generator(np.random.PCG64(seed))
        worst = 0.0
        for _ in range(n_cases):
            n_rows = int(rng.integers(4, 9))
            d_in = int(rng.integers(3, 9))
            k_attr = int(rng.integers(2, 6))
            x = rng.normal(0.0, 1.0, size=(n_rows, d_in))
            y = rng.integers(0, 2, size=n_rows)  # two classes
            if len(np.unique(y)) < 2:
                y[0] = 1 - y[0]
            attrs = (rng.random((n_rows, k_attr)) < 0.5).astype(float)
            # ground-truth SGS rejects all-zero attribute rows
            attrs[attrs.sum(axis=1) == 0.0, 0] = 1.0
            pair_list = enumerate_pairs(list(zip(range(n_rows), y.tolist())))
            if pair_list.n_pos == 0 or pair_list.n_neg == 0:
                continue
            shape = NetworkShape(d_in, cfg.trunk_dims, cfg.fc_dim, cfg.emb_dim,
                                 k_attr)
            params = init_params(shape, rng)

            base = loss_and_param_grads(params, x, attrs, pair_list, cfg)
            freeze = base.g_values if (cfg.variant == "sgml"
                                       and not cfg.sgs_backprop) else None

            def f(params2):
                return loss_and_param_grads(params2, x, attrs, pair_list, cfg,
                                            g_override=freeze,
                                            compute_grads=False).total

            for key, tensor in params.tensors.items():
                flat = tensor.reshape(-1)
                gflat = base.grads[key].reshape(-1)
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + h
                    up = f(params)
                    flat[j] = orig - h
                    down = f(params)
                    flat[j] = orig
                    worst = max(worst, _rel_err(float(gflat[j]),
                                                (up - down) / (2.0 * h)))
        results.append(CheckResult(name, n_cases, worst, tol))
    return results


def run_all(scalar_cases: int = 1000, network_cases: int = 20, seed: int = 0,
            tol: float = DEFAULT_TOL, flip_sign: bool = False) -> list[CheckResult]:
    out = check_scalar_losses(scalar_cases, seed=seed, tol=tol, flip_sign=flip_sign)
    out += check_batch_losses(max(10, scalar_cases // 20), seed=seed + 1, tol=tol)
    out += check_network_gradients(network_cases, seed=seed + 2, tol=tol)
    return out


def format_report(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:32s} cases={r.cases:<5d} "
                     f"max_err={r.max_rel_err:.3e}  tol={r.tol:.0e}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} gradient checks passed")
    return "\n".join(lines)
