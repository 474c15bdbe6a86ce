"""Stage 1 on a small synthetic dataset.

Generates utterances whose features are noisy linear images of an emotion
centroid plus cognition directions, trains both BridgeNet streams with the
contrastive losses, and reports held-out separability before and after.
Takes a few seconds per 10 epochs on one core; --epochs changes the length.
"""

import argparse
import time

from emocog import tensor as T
from emocog.bridgenet import ModelDims, bridge_forward_batch, init_bridge
from emocog.data import SyntheticConfig, generate_synthetic, label_rates
from emocog.decoder import DecoderDims, init_decoder, init_prefix_bridge
from emocog.metrics import embedding_separability, jaccard_similarity_correlation
from emocog.trainer import Model, TrainConfig, group_digest, train_stage1

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=40)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

ds = generate_synthetic(SyntheticConfig(n_samples=400, seed=args.seed, noise_std=0.1, prior_scale=3.0,
                                        split_sizes=(300, 0, 100)))
train, test = ds.split("train"), ds.split("test")
print("label rates:", {k: round(v, 3) for k, v in label_rates(ds.samples).items()})
print("example caption:", train[0].caption)

model = Model(init_bridge(ModelDims(), args.seed), init_prefix_bridge(48, 48, 32, args.seed),
              init_decoder(DecoderDims(20), args.seed))


def diagnostics():
    with T.no_grad():
        h_e, h_c = bridge_forward_batch(test, model.bridge)
    sep = embedding_separability(h_e.data, [s.emotion for s in test])
    rho = jaccard_similarity_correlation(h_c.data, [s.cognition for s in test])
    return sep["margin"], sep["silhouette"], rho


m0, s0, r0 = diagnostics()
print(f"\nbefore: emotion margin {m0:.3f}  silhouette {s0:.3f}  cognition rho {r0:.3f}")

decoder_hash = group_digest(model.groups()["decoder"])
t0 = time.perf_counter()
state = train_stage1(train, model, TrainConfig(epochs=args.epochs, seed=args.seed))
print(f"trained {args.epochs} epochs in {time.perf_counter() - t0:.1f}s")
rows = state.history[:: max(1, args.epochs // 8)]
if rows[-1] is not state.history[-1]:
    rows.append(state.history[-1])
for row in rows:
    print(f"  epoch {row['epoch']:3d}  L_emo {row['L_emo']:.4f}  L_cog {row['L_cog']:.4f}  L1 {row['L1']:.4f}")

m1, s1, r1 = diagnostics()
print(f"\nafter:  emotion margin {m1:.3f}  silhouette {s1:.3f}  cognition rho {r1:.3f}")
print("decoder untouched:", group_digest(model.groups()["decoder"]) == decoder_hash)
