"""Decide static vs dynamic scheduling for sparse matrix products by a
1-nearest-neighbour lookup, and check against the simulated optimum.

Run: python demos/spmm_schedule.py  (a few seconds)
"""
from perfembed.encoder import encode_static
from perfembed.experiments import spmm_experiment, spmm_instances
from perfembed.model import ModelConfig, Sample, TrainConfig, train
from perfembed.simprof import MachineConfig, measure

machine = MachineConfig()
train_set = spmm_instances(4, 4, seed=1, K=8)
test_set = spmm_instances(2, 2, seed=2, K=8)

data = [Sample(i, encode_static(n), *measure(n, inp, machine)) for i, n, inp, _ in train_set]
model = train({"train": data, "val": data[:2]}, TrainConfig(epochs=20), ModelConfig(embed_dim=16, mlp_hidden=16))

for r in spmm_experiment(model, train_set, test_set, machine):
    mark = "ok" if r["correct"] else "wrong"
    print(f"{r['id']:22s} neighbour {r['neighbor']:22s} chose {r['chosen']:26s} optimal {r['optimal']:26s} {mark}")
