"""Central finite differences, independent of autograd."""
import numpy as np
import torch


def numeric_grad(fn, params, h, n_entries=None, seed=0):
    """Central differences of scalar ``fn()`` w.r.t. (a sample of) entries of
    ``params``; returns (indices, numeric values)."""
    picks = []
    for pi, p in enumerate(params):
        for flat in range(p.numel()):
            picks.append((pi, flat))
    if n_entries is not None and len(picks) > n_entries:
        idx = np.random.default_rng(seed).choice(len(picks), n_entries, replace=False)
        picks = [picks[i] for i in sorted(idx)]
    values = []
    with torch.no_grad():
        for pi, flat in picks:
            view = params[pi].view(-1)
            orig = view[flat].item()
            view[flat] = orig + h
            plus = float(fn())
            view[flat] = orig - h
            minus = float(fn())
            view[flat] = orig
            values.append((plus - minus) / (2 * h))
    return picks, np.array(values)


def analytic_grad(fn, params, picks):
    loss = fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    out = []
    for pi, flat in picks:
        g = grads[pi]
        out.append(0.0 if g is None else g.reshape(-1)[flat].item())
    return np.array(out)


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def check(fn, params, h=1e-5, n_entries=60, seed=0):
    picks, num = numeric_grad(fn, params, h, n_entries, seed)
    ana = analytic_grad(fn, params, picks)
    return relative_error(ana, num), ana, num
