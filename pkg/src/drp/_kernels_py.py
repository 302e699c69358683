"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def adam_update(value, grad, m, v, lr, beta1, beta2, eps, step):
    """In-place Adam step with the bias corrections folded into the step size and epsilon."""
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    lr_t = lr * np.sqrt(bc2) / bc1
    eps_t = eps * np.sqrt(bc2)
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    value -= lr_t * m / (np.sqrt(v) + eps_t)


def scatter_add_rows(target, idx, rows):
    np.add.at(target, idx, rows)


def mean_pool_forward(table, hist, lengths, out):
    width = hist.shape[1]
    mask = np.arange(width)[None, :] < lengths[:, None]
    gathered = table[np.where(mask, hist, 0)]
    gathered *= mask[:, :, None]
    out[...] = gathered.sum(axis=1)
    nz = lengths > 0
    out[nz] /= lengths[nz, None]


def mean_pool_backward(grad_table, hist, lengths, dpooled):
    width = hist.shape[1]
    mask = np.arange(width)[None, :] < lengths[:, None]
    rows, cols = np.nonzero(mask)
    np.add.at(grad_table, hist[rows, cols], dpooled[rows] / lengths[rows, None])
