"""Simulated machine description and counter/target naming."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

LINE_BYTES = 64


@dataclass(frozen=True)
class CacheLevel:
    size_bytes: int
    line_bytes: int = LINE_BYTES
    policy: str = "LRU"
    fully_associative: bool = True

    @property
    def lines(self) -> int:
        return self.size_bytes // self.line_bytes


@dataclass(frozen=True)
class MachineConfig:
    threads: int = 4
    l1: CacheLevel = field(default_factory=lambda: CacheLevel(32 * 1024))
    l2: CacheLevel = field(default_factory=lambda: CacheLevel(1024 * 1024))
    l3: CacheLevel = field(default_factory=lambda: CacheLevel(8 * 1024 * 1024))
    l1_latency: int = 4
    l2_latency: int = 14
    l3_latency: int = 40
    memory_latency: int = 200
    op_cost: int = 1
    mispredict_penalty: int = 15
    dispatch_overhead: int = 50
    # cost of one fork/join of a parallel region, charged on the master thread
    fork_join_overhead: int = 500

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid machine config: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.threads < 1:
            out.append("threads must be positive")
        if not (self.l1.size_bytes <= self.l2.size_bytes <= self.l3.size_bytes):
            out.append("cache sizes must satisfy L1 <= L2 <= L3")
        for lvl in (self.l1, self.l2, self.l3):
            if lvl.line_bytes != LINE_BYTES:
                out.append("only 64-byte lines are modeled")
            if lvl.policy != "LRU" or not lvl.fully_associative:
                out.append("only fully associative LRU caches are modeled")
            if lvl.size_bytes < lvl.line_bytes:
                out.append("cache smaller than one line")
        for name in ("l1_latency", "l2_latency", "l3_latency", "memory_latency"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be positive")
        if self.op_cost < 0 or self.mispredict_penalty < 0 or self.dispatch_overhead < 0 or self.fork_join_overhead < 0:
            out.append("costs must be non-negative")
        return out

    def with_threads(self, threads: int) -> "MachineConfig":
        return replace(self, threads=threads)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MachineConfig":
        d = dict(d)
        for k in ("l1", "l2", "l3"):
            if k in d and isinstance(d[k], dict):
                d[k] = CacheLevel(**d[k])
            elif k in d:
                d[k] = CacheLevel(int(d[k]))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "MachineConfig":
        """Read a machine config: JSON, or ``key = value`` lines (sizes in bytes)."""
        text = open(path, encoding="utf-8").read()
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError:
            pass
        d: dict = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"bad config line {raw!r}")
            d[key.strip()] = int(value.strip())
        return cls.from_dict(d)


# Small caches sized to the desk corpus (footprints of 2 KiB to 200 KiB, median ~20 KiB), so
# nests spread over every level of the hierarchy; the default config keeps
# almost all of them L3-resident.
DESK_MACHINE = MachineConfig(l1=CacheLevel(1024), l2=CacheLevel(4 * 1024), l3=CacheLevel(16 * 1024))


# counter-major order of the per-thread counters; the profile vector repeats
# (min, max, mean, std, sum) for each counter in this order
COUNTERS = (
    "instructions",
    "fp32_scalar", "fp32_p128", "fp32_p256", "fp32_p512",
    "fp64_scalar", "fp64_p128", "fp64_p256", "fp64_p512",
    "branches", "branch_mispredicts",
    "loads", "stores",
    "mem_read_lines", "mem_write_lines",
    "l3_lines_in", "l3_writeback_lines",
    "l1d_replacement", "l1d_evict",
)
C = {name: i for i, name in enumerate(COUNTERS)}
STATS = ("min", "max", "mean", "std", "sum")
PROFILE_COLUMNS = tuple(f"{c}.{s}" for c in COUNTERS for s in STATS)

TARGETS = (
    "runtime_cycles",
    "ipc",
    "mem_read_bw", "mem_write_bw", "l3_load_bw", "l3_evict_bw", "l2_load_bw", "l2_evict_bw",
    "l2_miss_ratio", "l3_miss_ratio",
    "branch_rate", "mispredict_ratio",
    "fp32_scalar_rate", "fp32_packed_rate", "fp64_scalar_rate", "fp64_packed_rate",
    "load_rate", "store_rate",
    "vectorization_ratio",
    "arithmetic_intensity",
)
