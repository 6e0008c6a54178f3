"""Brute-force tune a few matrix multiplications, then transfer the stored
optimisations to a new size and compare the search effort.

Run: python demos/transfer_tune_matmul.py  (about 30 s)
"""
from perfembed.corpus import KernelSpec, generate_kernel
from perfembed.encoder import encode_static
from perfembed.model import ModelConfig, Sample, TrainConfig, train
from perfembed.simprof import DESK_MACHINE, measure
from perfembed.transform import SpaceLimits
from perfembed.tuning import brute_force_tune, build_database, transfer_tune

LIMITS = SpaceLimits(tile_sizes=(4, 8), vector_widths=(1, 4), chunk_sizes=(), max_length=3)


def mm(n, seed):
    return generate_kernel(KernelSpec("matmul", {"M": n, "N": n, "K": n}, seed))


known = [(f"mm{n}", *mm(n, s)) for s, n in enumerate((16, 24, 32))]
data = [Sample(i, encode_static(nest), *measure(nest, inp, DESK_MACHINE)) for i, nest, inp in known]
model = train({"train": data, "val": data[:1]}, TrainConfig(epochs=30), ModelConfig(embed_dim=16, mlp_hidden=16))

db, results = build_database(known, model, DESK_MACHINE, LIMITS)
for eid, res in results.items():
    print(f"{eid}: best {' ; '.join(t.to_text() for t in res.sequence) or '(none)'}"
          f"  speedup {res.baseline_cost / res.best_cost:.2f}x over {res.space_size} variants")

nest, inputs = mm(28, 7)
rep = transfer_tune(nest, inputs, db, model, DESK_MACHINE, k=3)
bf = brute_force_tune(nest, inputs, DESK_MACHINE, LIMITS)
print(f"\nnew 28x28 matmul: transferred {[t.to_text() for t in rep.sequence]}")
print(f"  transfer speedup {rep.speedup:.2f}x with {rep.evaluations} evaluations")
print(f"  brute force      {bf.baseline_cost / bf.best_cost:.2f}x with {bf.space_size} evaluations")
