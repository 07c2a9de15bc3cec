"""Central finite differences against analytic gradients."""
import numpy as np


def numeric_gradient(loss_fn, param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(param)
    flat, gflat = param.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = loss_fn()
        flat[i] = old - step
        down = loss_fn()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def autoencoder_errors(ae, s, step=1e-5) -> dict:
    _, grads = ae.gradients(s)
    return {name: relative_error(grads[name],
                                 numeric_gradient(lambda: ae.reconstruction_error(s), p, step))
            for name, p in ae.params().items()}


def mlp_errors(mlp, X, labels, step=1e-5) -> dict:
    _, grads = mlp.loss_and_gradients(X, labels)
    return {name: relative_error(grads[name],
                                 numeric_gradient(lambda: mlp.loss_and_gradients(X, labels)[0], p, step))
            for name, p in mlp.params().items()}
