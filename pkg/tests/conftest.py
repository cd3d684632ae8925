import numpy as np
import pytest

from scribe_verify.tensor import Tensor


def numeric_grad(f, arrays, index, w, eps=1e-6):
    """Central-difference gradient of ``sum(f(*arrays) * w)`` w.r.t. ``arrays[index]``.

    Output arrays are differenced before the weighted sum, which keeps
    round-off from untouched outputs out of the estimate.
    """
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(*arrays)
        x[i] = old - eps
        lo = f(*arrays)
        x[i] = old
        grad[i] = np.sum((hi - lo) * w) / (2 * eps)
    return grad


def rel_error(a, b, floor=1e-8):
    """max |a - b| / (|a| + |b|); ``floor`` keeps exact zeros from dividing by round-off."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def check_grads(op, *arrays, eps=1e-6, tol=1e-5, weights=None):
    """Compare autodiff to finite differences for ``sum(op(*xs) * w)``; returns max rel. error."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = op(*[Tensor(a) for a in arrays])
    rng = np.random.default_rng(0)
    w = weights if weights is not None else rng.standard_normal(out.shape)

    def forward(*xs):
        return np.array(op(*[Tensor(x) for x in xs]).data, copy=True)

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    (op(*ts) * Tensor(w)).sum().backward()
    worst = 0.0
    for k, t in enumerate(ts):
        num = numeric_grad(forward, arrays, k, w, eps)
        err = rel_error(t.grad, num)
        worst = max(worst, err)
        assert err < tol, f"input {k}: rel error {err:.3g}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def check_network_grads(model, x, n_samples=8, seed=0, eps=1e-6, floor=1e-3):
    """Finite-difference check of ``sum(model(x) * w)`` on sampled parameter entries.

    The model is cast to float64 and kept in train mode.  Returns the list of
    (name, index, analytic, numeric, rel_error) for the sampled entries.
    Some entries have an exact zero gradient (a shift followed by batch
    normalization), hence the ``floor`` on the denominator.
    """
    rng = np.random.default_rng(seed)
    model.astype(np.float64).train()
    x = Tensor(np.asarray(x, dtype=np.float64))
    w = rng.standard_normal(model(x).shape)

    def objective():
        return model(x).data

    model.zero_grad()
    (model(x) * Tensor(w)).sum().backward()
    params = list(model.named_parameters())
    picks = rng.choice(len(params), size=n_samples, replace=len(params) < n_samples)
    results = []
    for k in picks:
        name, p = params[int(k)]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = float(p.grad[idx])
        old = p.data[idx]
        p.data[idx] = old + eps
        hi = objective()
        p.data[idx] = old - eps
        lo = objective()
        p.data[idx] = old
        numeric = float(np.sum((hi - lo) * w) / (2 * eps))
        results.append((name, idx, analytic, numeric, rel_error(analytic, numeric, floor)))
    return results


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
