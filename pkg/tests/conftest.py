import numpy as np
import pytest

from cloudgrasp import autodiff as ad


def finite_difference_check(build, tensors, eps=1e-5, tol=1e-4):
    """Assert analytic gradients of build() match central differences.

    `build` must construct the scalar loss from scratch (so FD re-evaluations
    see perturbed values); `tensors` are the leaves to check.
    """
    with ad.Tape() as tape:
        loss = build()
    ad.backward(tape, loss)
    for t in tensors:
        analytic = t.grad.copy()
        numeric = np.zeros_like(t.values)
        it = np.nditer(t.values, flags=["multi_index"])
        while not it.finished:
            i = it.multi_index
            orig = t.values[i]
            t.values[i] = orig + eps
            up = build().values.item()
            t.values[i] = orig - eps
            down = build().values.item()
            t.values[i] = orig
            numeric[i] = (up - down) / (2 * eps)
            it.iternext()
        scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
        rel = np.abs(analytic - numeric).max() / scale
        assert rel < tol, f"gradient mismatch: rel error {rel:.3e} on {t}"


@pytest.fixture(scope="session")
def small_episodes():
    """A handful of rendered episodes shared across test modules."""
    from cloudgrasp.scenesim import generate_episode
    return [generate_episode(seed=s) for s in range(4)]
