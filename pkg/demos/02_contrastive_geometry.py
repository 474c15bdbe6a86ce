"""How the two contrastive losses react to embedding geometry.

The emotion loss treats same-label pairs as positives. The cognition loss
weights every pair by the Jaccard overlap of its deficit sets, so partially
overlapping samples are pulled together less strongly than identical ones.
"""

import math

import numpy as np

from emocog import tensor as T
from emocog.losses import cognition_contrastive_loss, cognition_mask, emotion_contrastive_loss, jaccard_weights
from emocog.tensor import Tensor


def unit(x):
    x = np.asarray(x, dtype=float)
    return Tensor(x / np.linalg.norm(x, axis=1, keepdims=True))


print("closed forms at tau = 1")
same = unit([[1, 0], [1, 0]])
ortho = unit([[1, 0], [0, 1]])
print(f"  identical pair, same label      : {emotion_contrastive_loss(same, [1, 1], 1.0).item():.6f}")
print(f"  orthogonal pair, different label: {emotion_contrastive_loss(ortho, [1, -1], 1.0).item():.6f}"
      f"  (log 2 = {math.log(2):.6f})")

sets = [cognition_mask(s) for s in (["memory"], ["memory", "language"], ["language"], [])]
print("\nJaccard weights for {memory}, {memory, language}, {language}, {}:")
print(np.round(jaccard_weights(sets), 3))

# clustered vs scrambled geometry for the same labels
labels = [-1, -1, 0, 0, 1, 1]
rng = np.random.default_rng(1)
centers = np.eye(3)
clustered = unit(np.repeat(centers, 2, axis=0) + 0.05 * rng.normal(size=(6, 3)))
scrambled = unit(rng.normal(size=(6, 3)))
for tau in (0.1, 0.5):
    a = emotion_contrastive_loss(clustered, labels, tau).item()
    b = emotion_contrastive_loss(scrambled, labels, tau).item()
    print(f"\ntau={tau}: emotion loss clustered {a:.4f} vs scrambled {b:.4f}")

# gradient descent on free unit vectors pulls classes apart
x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
for step in range(201):
    x.grad = None
    loss = emotion_contrastive_loss(T.l2_normalize_rows(x), labels, 0.1)
    T.backward(loss)
    x.data -= 0.05 * x.grad
    if step % 50 == 0:
        e = x.data / np.linalg.norm(x.data, axis=1, keepdims=True)
        print(f"step {step:3d}  loss {loss.item():.4f}  cos(same) {e[0] @ e[1]:+.3f}  cos(diff) {e[0] @ e[2]:+.3f}")

print("\ncognition loss, sets", sets)
emb = unit(rng.normal(size=(4, 5)))
print(f"  random embeddings: {cognition_contrastive_loss(emb, sets, 0.1).item():.4f}")
