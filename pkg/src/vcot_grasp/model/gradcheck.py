"""Central finite-difference check of the analytic backward pass."""

from __future__ import annotations

import numpy as np

from .network import ModelConfig, backward, forward, init_params

# Central differences on an O(10) loss carry ~1e-10 absolute roundoff, so
# relative error uses max(|analytic|, |numeric|, REL_FLOOR) as denominator.
REL_FLOOR = 1e-4


def random_batch(cfg: ModelConfig, rng: np.random.Generator, size: int = 3, crops: bool = True) -> dict:
    s = cfg.image_side
    return {
        "images": rng.integers(0, 256, (size, s, s, 3)).astype(np.uint8),
        "crops": rng.integers(0, 256, (size, s, s, 3)).astype(np.uint8) if crops else None,
        "detect": rng.integers(0, cfg.n_conditions, size),
        "grasp": rng.integers(0, cfg.n_conditions, size),
        "box_tokens": rng.integers(0, cfg.n_bins, (size, cfg.n_box_slots)),
        "grasp_tokens": rng.integers(0, cfg.n_bins, (size, cfg.n_grasp_slots)),
        "grasp_norm": rng.uniform(0.0, 1.0, (size, cfg.n_grasp_slots)),
    }


def relative_error(a: float, n: float, floor: float = REL_FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_case(cfg: ModelConfig, crops: bool, rng: np.random.Generator, per_tensor: int = 3,
               eps: float = 1e-5, lam: float = 1.0, jitter: float = 0.05) -> list[dict]:
    """Compare analytic and numeric gradients on ``per_tensor`` coordinates of every tensor.

    Parameters are jittered away from init so zero-initialised heads still
    pass nonzero gradient to everything upstream.
    """
    params = init_params(cfg)
    for k in params:
        params[k] = params[k] + rng.normal(0.0, jitter, params[k].shape)
    batch = random_batch(cfg, rng, crops=crops)
    _, grads = backward(params, cfg, batch, lam)
    rows = []
    for name in sorted(params):
        p = params[name]
        for _ in range(per_tensor):
            idx = tuple(int(rng.integers(0, s)) for s in p.shape)
            old = p[idx]
            p[idx] = old + eps
            lp = forward(params, cfg, batch, lam)[0]["total"]
            p[idx] = old - eps
            lm = forward(params, cfg, batch, lam)[0]["total"]
            p[idx] = old
            num = (lp - lm) / (2 * eps)
            a = float(grads[name][idx])
            rows.append({
                "head": cfg.head_kind,
                "mode": "vcot" if crops else "single_turn",
                "param": name,
                "index": list(idx),
                "analytic": a,
                "numeric": num,
                "rel_error": relative_error(a, num),
                "floored": max(abs(a), abs(num)) < REL_FLOOR,
            })
    return rows


def gradient_check(seed: int = 0, per_tensor: int = 3, eps: float = 1e-5, tol: float = 1e-5) -> dict:
    """Run every head x mode combination; returns a summary plus all sampled rows."""
    rng = np.random.default_rng(seed)
    rows = []
    for head in ("token", "regression"):
        cfg = ModelConfig(head_kind=head, seed=seed)
        for crops in (True, False):
            rows.extend(check_case(cfg, crops, rng, per_tensor, eps))
    worst = max(r["rel_error"] for r in rows)
    plain = [r["rel_error"] for r in rows if not r["floored"]]
    return {
        "max_rel_error": worst,
        "n_coords": len(rows),
        "n_floored": sum(r["floored"] for r in rows),
        "max_rel_error_unfloored": max(plain, default=0.0),
        "params_covered": sorted({r["param"] for r in rows}),
        "tol": tol,
        "eps": eps,
        "passed": worst <= tol,
        "rows": rows,
    }
