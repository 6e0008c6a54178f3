"""Train a small embedding model on a toy corpus and look up similar nests.

Run: python demos/embed_and_compare.py  (a few seconds)
"""
import tempfile

import numpy as np

from perfembed.corpus import generate_dataset, label_dataset, load_corpus
from perfembed.experiments import samples, similarity_report
from perfembed.model import ModelConfig, TrainConfig, train
from perfembed.similarity import EmbeddingIndex, knn
from perfembed.simprof import DESK_MACHINE

with tempfile.TemporaryDirectory() as root:
    generate_dataset(root, {"train": 60, "val": 10, "test": 24}, seed=0)
    label_dataset(root, DESK_MACHINE)
    entries = load_corpus(root)

model = train(samples(entries), TrainConfig(epochs=10), ModelConfig(embed_dim=32, mlp_hidden=32))
print("final val loss:", round(model.history[-1]["val_loss"], 3))

test = [e for e in entries if e.split == "test"]
rep = similarity_report(model, test, DESK_MACHINE)
index = EmbeddingIndex(rep["ids"], rep["embeddings"])
kinds = {e.id: e.kind for e in test}
for i in range(3):
    q = rep["ids"][i]
    near = knn(index, rep["embeddings"][i], 3, exclude=q)
    print(f"{q}: nearest {[kinds[n] for n, _ in near]}")

print("\nmean 3-NN CoV (lower means neighbours perform alike)")
for r in rep["rows"]:
    print(f"  {r['metric']:14s} model {r['model_cov']:.3f}  reuse-distance baseline {r['baseline_cov']:.3f}")
print("embedding norms:", np.round(np.linalg.norm(rep["embeddings"], axis=1)[:5], 2))
