"""Walk through the autodiff engine on a tiny attention read-out.

We build softmax(q k^T / sqrt(d)) v by hand from tensor ops, backpropagate a
weighted sum of the output, and compare every gradient entry with central
differences. Then we run a few entries of the packaged gradient suite.
"""

import math

import numpy as np

from emocog import tensor as T
from emocog.gradcheck import run_check
from emocog.tensor import Tensor

rng = np.random.default_rng(0)
q = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
k = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
v = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
w = rng.normal(size=(2, 3))


def readout():
    attn = T.row_softmax(T.matmul(q, T.transpose(k)), scale=1 / math.sqrt(4))
    return T.total(T.mul_const(T.matmul(attn, v), w))


loss = readout()
print(f"loss = {loss.item():.6f}")
T.backward(loss)
print("dL/dq row 0:", np.round(q.grad[0], 5))

# grad_check perturbs each entry by +-h and rebuilds the loss; it resets .grad itself
err = T.grad_check(readout, [q, k, v])
print(f"max relative error vs central differences: {err:.2e}")

print("\nsome entries of the packaged suite (tolerance 1e-4):")
for name in ("row_softmax", "logsumexp_rows", "segment_matmul", "qformer", "emotion_loss", "decoder_ce"):
    r = run_check(name)
    print(f"  {name:16s} {r.max_rel_error:.2e}  {'ok' if r.passed else 'FAIL'}")

# with a tolerance far below the finite-difference noise, nonlinear ops are flagged
r = run_check("exp", tol=1e-9)
print(f"\nexp at tol=1e-9: {r.max_rel_error:.2e} -> {'ok' if r.passed else 'flagged'}")
