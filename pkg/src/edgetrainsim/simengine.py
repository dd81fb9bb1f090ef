"""Deterministic simulation of a training run under a parallel plan.

The engine advances one iteration at a time.  Within an iteration the model
is synchronous: compute segments run in lockstep between collective barriers,
so a device's timeline always closes as compute + comm + idle = makespan.

Collectives use ring algorithms under an alpha-beta link model.  Pipeline
iterations follow the fill-drain schedule: (M + S - 1) times the bottleneck
stage's per-micro-batch cost.  Compute and communication do not overlap
except through the pipeline schedule itself.

Energy integrates a three-state power model per device: idle power for the
whole makespan, the busy-minus-idle delta while computing, and the network
power adder while transmitting or receiving.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .devices import (FaultModel, NetworkModel, TrustedDomain, busy_power,
                      effective_throughput)
from .parallelism import (KIND_DP, KIND_PP, KIND_SINGLE, KIND_SP, KIND_TP,
                          OP_ALLGATHER, OP_ALLREDUCE, OP_P2P, ParallelPlan,
                          activation_tensor_bytes, check_memory,
                          grad_sync_bytes)
from .workload import flops_per_iteration

DEFAULT_ITERATIONS = 20
DEFAULT_WARMUP = 2
CHECKPOINT_INTERVAL_CAP = 1e8  # seconds; effectively disables checkpointing


class SimulationError(ValueError):
    pass


@dataclass
class DeviceUsage:
    peak_mem: float = 0.0
    compute_time: float = 0.0
    comm_time: float = 0.0
    idle_time: float = 0.0
    energy: float = 0.0


@dataclass
class TraceRecord:
    time: float
    device: str
    kind: str
    duration: float
    bytes: float


@dataclass
class SimulationResult:
    plan_kind: str
    iterations_simulated: int
    samples_processed: int
    makespan: float
    latency_per_sample: Optional[float]
    energy_per_sample: Optional[float]
    per_device: dict[str, DeviceUsage]
    comm_bytes_by_op: dict[str, float]
    oom: bool = False
    oom_devices: tuple[str, ...] = ()
    trace: Optional[list[TraceRecord]] = None

    @property
    def total_energy(self) -> float:
        return sum(u.energy for u in self.per_device.values())

    @property
    def total_comm_bytes(self) -> float:
        return sum(self.comm_bytes_by_op.values())


def collective_time(op: str, payload_bytes: float, participants,
                    network: NetworkModel) -> float:
    """Alpha-beta cost of one collective among the given devices.

    Ring algorithms: every step each node forwards a payload/n chunk to its
    ring successor, so a step costs the worst ring edge's chunk time plus
    per-hop latency.  AllReduce takes 2(n-1) steps (reduce-scatter followed
    by allgather), AllGather takes n-1.
    """
    participants = tuple(participants)
    n = len(participants)
    if op == OP_P2P:
        if n != 2:
            raise SimulationError("point-to-point needs exactly 2 participants")
        link = network.link_between(*participants)
        return payload_bytes / link.bytes_per_second + link.latency
    if n < 2:
        raise SimulationError("collectives need at least 2 participants")
    chunk = payload_bytes / n
    step = 0.0
    for i in range(n):
        link = network.link_between(participants[i], participants[(i + 1) % n])
        step = max(step, chunk / link.bytes_per_second + link.latency)
    if op == OP_ALLREDUCE:
        return 2.0 * (n - 1) * step
    if op == OP_ALLGATHER:
        return (n - 1) * step
    raise SimulationError(f"unknown collective op {op!r}")


@dataclass
class _IterationProfile:
    """Everything needed to replay one iteration without re-deriving costs."""
    compute: dict[str, float]               # per-device compute seconds
    base_comm: dict[str, float]             # per-device comm seconds (every iter)
    base_len: float                         # iteration wall time without sync
    sync_len: float                         # extra wall time on sync iterations
    sync_comm: dict[str, float]             # extra per-device comm on sync iters
    base_bytes: dict[str, float]            # payload bytes by op, every iteration
    sync_bytes: dict[str, float]            # payload bytes by op on sync iterations
    has_sync: bool
    segments: list                          # (phase, op, start_offset, per-device durations, bytes)


def _profile_iteration(plan: ParallelPlan, domain: TrustedDomain) -> _IterationProfile:
    spec, job = plan.spec, plan.job
    parts = plan.participants
    n = len(parts)
    net = domain.network
    flops = flops_per_iteration(spec, job)
    thr = {p: effective_throughput(domain.device(p), domain.mode) for p in parts}
    for p, t in thr.items():
        if t <= 0:
            raise SimulationError(f"device {p} has zero throughput in mode "
                                  f"{domain.mode!r}")
    m_count = job.micro_batch_count
    act = activation_tensor_bytes(spec, job)
    l = spec.num_blocks

    compute: dict[str, float] = {}
    base_comm = {p: 0.0 for p in parts}
    sync_comm = {p: 0.0 for p in parts}
    base_bytes: dict[str, float] = {}
    sync_bytes: dict[str, float] = {}
    sync_len = 0.0
    has_sync = False
    segments: list = []

    def grad_sync():
        t_ar = collective_time(OP_ALLREDUCE, grad_sync_bytes(spec, job), parts, net)
        for p in parts:
            sync_comm[p] += t_ar
        sync_bytes[OP_ALLREDUCE] = sync_bytes.get(OP_ALLREDUCE, 0.0) + \
            grad_sync_bytes(spec, job)
        return t_ar

    if plan.kind in (KIND_SINGLE, KIND_DP):
        if plan.kind == KIND_SINGLE:
            shares = {parts[0]: 1.0}
        else:
            total = sum(plan.partition.shard_sizes)
            shares = {p: s / total for p, s in zip(parts, plan.partition.shard_sizes)}
        compute = {p: flops * shares[p] / thr[p] for p in parts}
        base_len = max(compute.values())
        segments.append(("compute", None, 0.0, dict(compute), 0.0))
        if plan.kind == KIND_DP and n > 1:
            has_sync = True
            sync_len = grad_sync()
            segments.append(("gradient-sync", OP_ALLREDUCE, base_len,
                             {p: sync_len for p in parts},
                             grad_sync_bytes(spec, job)))
    elif plan.kind == KIND_SP:
        total = sum(plan.partition.subseq_lengths)
        shares = {p: s / total for p, s in
                  zip(parts, plan.partition.subseq_lengths)}
        compute = {p: flops * shares[p] / thr[p] for p in parts}
        coll = 0.0
        if n > 1:
            t_ag = collective_time(OP_ALLGATHER, act, parts, net)
            t_ar = collective_time(OP_ALLREDUCE, act, parts, net)
            coll = m_count * l * (t_ag + t_ar)
            base_bytes[OP_ALLGATHER] = m_count * l * act
            base_bytes[OP_ALLREDUCE] = m_count * l * act
            for p in parts:
                base_comm[p] += coll
            has_sync = True
            sync_len = grad_sync()
        base_len = max(compute.values()) + coll
        segments.append(("compute", None, 0.0, dict(compute), 0.0))
        if n > 1:
            mc = max(compute.values())
            segments.append(("block-gather", OP_ALLGATHER, mc,
                             {p: m_count * l * t_ag for p in parts},
                             base_bytes[OP_ALLGATHER]))
            segments.append(("block-reduce", OP_ALLREDUCE, mc + m_count * l * t_ag,
                             {p: m_count * l * t_ar for p in parts},
                             base_bytes[OP_ALLREDUCE]))
            segments.append(("gradient-sync", OP_ALLREDUCE, base_len,
                             {p: sync_len for p in parts},
                             grad_sync_bytes(spec, job)))
    elif plan.kind == KIND_TP:
        compute = {p: flops / n / thr[p] for p in parts}
        coll = 0.0
        if n > 1:
            t_ar = collective_time(OP_ALLREDUCE, act, parts, net)
            coll = m_count * l * 4 * t_ar
            base_bytes[OP_ALLREDUCE] = m_count * l * 4 * act
            for p in parts:
                base_comm[p] += coll
        base_len = max(compute.values()) + coll
        segments.append(("compute", None, 0.0, dict(compute), 0.0))
        if n > 1:
            segments.append(("block-reduce", OP_ALLREDUCE, max(compute.values()),
                             {p: coll for p in parts}, base_bytes[OP_ALLREDUCE]))
    elif plan.kind == KIND_PP:
        stages = plan.partition.stages
        s_count = len(stages)
        per_mb: dict[str, float] = {}
        for p, (start, end) in stages:
            per_mb[p] = flops * (end - start) / l / m_count / thr[p]
        compute = {p: per_mb[p] * m_count for p in parts}
        boundary_times = []
        for i in range(s_count - 1):
            boundary_times.append(collective_time(OP_P2P, act,
                                                  (parts[i], parts[i + 1]), net))
        transfer = max(boundary_times) if boundary_times else 0.0
        bottleneck = max(per_mb.values()) + transfer
        base_len = (m_count + s_count - 1) * bottleneck
        if boundary_times:
            base_bytes[OP_P2P] = 2 * m_count * (s_count - 1) * act
            for i, p in enumerate(parts):
                t = 0.0
                if i > 0:
                    t += boundary_times[i - 1]
                if i < s_count - 1:
                    t += boundary_times[i]
                base_comm[p] = 2 * m_count * t
        segments.append(("compute", None, 0.0, dict(compute), 0.0))
        if boundary_times:
            segments.append(("stage-transfer", OP_P2P, max(compute.values()),
                             dict(base_comm), base_bytes[OP_P2P]))
    else:
        raise SimulationError(f"unknown plan kind {plan.kind!r}")

    return _IterationProfile(compute=compute, base_comm=base_comm,
                             base_len=base_len, sync_len=sync_len,
                             sync_comm=sync_comm, base_bytes=base_bytes,
                             sync_bytes=sync_bytes, has_sync=has_sync,
                             segments=segments)


def iteration_times(plan: ParallelPlan, domain: TrustedDomain,
                    iterations: int, warmup: int = 0) -> list[float]:
    """Wall time of each simulated iteration (syncs land on period boundaries)."""
    prof = _profile_iteration(plan, domain)
    k = plan.job.dp_sync_period
    out = []
    for g in range(warmup, warmup + iterations):
        sync = prof.has_sync and (g + 1) % k == 0
        out.append(prof.base_len + (prof.sync_len if sync else 0.0))
    return out


def simulate(plan: ParallelPlan, domain: TrustedDomain,
             iterations: int = DEFAULT_ITERATIONS, fault_model=None,
             warmup: int = DEFAULT_WARMUP,
             record_trace: bool = False) -> SimulationResult:
    """Run a fault-free simulation and report per-sample and per-device metrics.

    ``fault_model`` is accepted for interface symmetry and ignored: the
    fault-free result never depends on it.  Use :func:`inject_faults` for
    failure/recovery accounting.  ``warmup`` iterations run before metering
    starts and are excluded from every reported metric.
    """
    del fault_model
    if iterations < 1:
        raise SimulationError("iterations must be >= 1")
    for p in plan.participants:
        domain.device(p)  # raises KeyError for unknown ids

    mem = check_memory(plan, domain)
    oom_devices = tuple(p for p, c in mem.items() if not c.fits)
    usage = {p: DeviceUsage(peak_mem=mem[p].required_bytes)
             for p in plan.participants}
    if oom_devices:
        return SimulationResult(
            plan_kind=plan.kind, iterations_simulated=0, samples_processed=0,
            makespan=0.0, latency_per_sample=None, energy_per_sample=None,
            per_device=usage, comm_bytes_by_op={}, oom=True,
            oom_devices=oom_devices, trace=[] if record_trace else None)

    prof = _profile_iteration(plan, domain)
    k = plan.job.dp_sync_period
    parts = plan.participants
    makespan = 0.0
    comm_bytes: dict[str, float] = {}
    trace: Optional[list[TraceRecord]] = [] if record_trace else None

    for g in range(warmup + iterations):
        measured = g >= warmup
        sync = prof.has_sync and (g + 1) % k == 0
        dur = prof.base_len + (prof.sync_len if sync else 0.0)
        if not measured:
            continue
        t0 = makespan
        for p in parts:
            u = usage[p]
            u.compute_time += prof.compute[p]
            comm = prof.base_comm[p] + (prof.sync_comm[p] if sync else 0.0)
            u.comm_time += comm
            u.idle_time += dur - prof.compute[p] - comm
        for op, b in prof.base_bytes.items():
            comm_bytes[op] = comm_bytes.get(op, 0.0) + b
        if sync:
            for op, b in prof.sync_bytes.items():
                comm_bytes[op] = comm_bytes.get(op, 0.0) + b
        if record_trace:
            for phase, op, offset, durations, payload in prof.segments:
                if phase == "gradient-sync" and not sync:
                    continue
                for p in parts:
                    d = durations.get(p, 0.0)
                    if d > 0 or op is None:
                        trace.append(TraceRecord(t0 + offset, p,
                                                 op or "compute", d,
                                                 payload if op else 0.0))
        makespan += dur

    for p in parts:
        device = domain.device(p)
        u = usage[p]
        u.energy = (device.power_idle * makespan
                    + (busy_power(device, domain.mode) - device.power_idle)
                    * u.compute_time
                    + device.power_net * u.comm_time)

    samples = iterations * plan.job.global_batch
    if record_trace:
        trace.sort(key=lambda r: (r.time, r.device))
    return SimulationResult(
        plan_kind=plan.kind, iterations_simulated=iterations,
        samples_processed=samples, makespan=makespan,
        latency_per_sample=makespan / samples,
        energy_per_sample=sum(u.energy for u in usage.values()) / samples,
        per_device=usage, comm_bytes_by_op=comm_bytes, trace=trace)


@dataclass
class FaultReport:
    fault_free: SimulationResult
    wall_time: float
    goodput_samples_per_s: float
    failures: int
    executed_iterations: int
    completed_iterations: int
    checkpoint_writes: int
    rework_time: float
    reload_time: float
    checkpoint_time: float
    energy_estimate: float
    checkpoint_interval: float
    seed: int


def _failure_stream(fault_model: FaultModel, num_devices: int):
    """Merged absolute failure times, one exponential renewal stream per device.

    Draws are mtbf-scaled standard exponentials, so shrinking the MTBF with a
    fixed seed strictly advances every failure time.
    """
    seqs = np.random.SeedSequence(fault_model.rng_seed).spawn(num_devices)
    rngs = [np.random.default_rng(s) for s in seqs]

    def device_times(rng):
        t = 0.0
        while True:
            t += fault_model.mtbf_per_device * rng.standard_exponential()
            yield t

    return heapq.merge(*(device_times(r) for r in rngs))


def inject_faults(plan: ParallelPlan, domain: TrustedDomain,
                  fault_model: FaultModel, iterations: int = DEFAULT_ITERATIONS,
                  checkpoint_interval: Optional[float] = None,
                  failure_times: Optional[list[float]] = None) -> FaultReport:
    """Replay the run against seeded failures with checkpoint/restart recovery.

    A failure rolls progress back to the last checkpoint and charges a state
    reload; checkpoints are written at iteration boundaries once
    ``checkpoint_interval`` seconds have elapsed since the previous one.
    ``failure_times`` overrides the random stream (used for hand-built traces).
    """
    base = simulate(plan, domain, iterations, warmup=0)
    if base.oom:
        raise SimulationError("cannot inject faults into an infeasible plan")
    if checkpoint_interval is None:
        from .scheduler import plan_checkpointing
        checkpoint_interval = plan_checkpointing(plan, domain, fault_model)
    if checkpoint_interval <= 0:
        raise SimulationError("checkpoint_interval must be > 0")

    mem = check_memory(plan, domain)
    shard = max(c.state_bytes for c in mem.values())
    write_time = shard / fault_model.checkpoint_write_bandwidth
    reload_time_each = shard / fault_model.recovery_reload_bandwidth
    times = iteration_times(plan, domain, iterations)

    if failure_times is not None:
        stream = iter(list(failure_times) + [float("inf")])
    else:
        stream = _failure_stream(fault_model, len(plan.participants))
    next_fail = next(stream)

    wall = 0.0
    it = 0
    ckpt_iter = 0
    last_ckpt_wall = 0.0
    failures = 0
    executed = 0
    rework = 0.0
    reload_total = 0.0
    ckpt_total = 0.0
    ckpt_writes = 0

    while it < iterations:
        dt = times[it]
        if wall + dt > next_fail:
            # Work since the last checkpoint is lost.
            lost = next_fail - last_ckpt_wall
            rework += lost
            wall = next_fail + reload_time_each
            reload_total += reload_time_each
            it = ckpt_iter
            last_ckpt_wall = wall
            failures += 1
            next_fail = next(stream)
            continue
        wall += dt
        it += 1
        executed += 1
        if it < iterations and wall - last_ckpt_wall >= checkpoint_interval:
            wall += write_time
            ckpt_total += write_time
            ckpt_writes += 1
            last_ckpt_wall = wall
            ckpt_iter = it

    samples = iterations * plan.job.global_batch
    per_iter_energy = base.total_energy / base.iterations_simulated
    overhead_power = sum(domain.device(p).power_idle + domain.device(p).power_net
                         for p in plan.participants)
    energy = per_iter_energy * executed + overhead_power * (reload_total + ckpt_total)
    return FaultReport(
        fault_free=base, wall_time=wall,
        goodput_samples_per_s=samples / wall, failures=failures,
        executed_iterations=executed, completed_iterations=iterations,
        checkpoint_writes=ckpt_writes, rework_time=rework,
        reload_time=reload_total, checkpoint_time=ckpt_total,
        energy_estimate=energy, checkpoint_interval=checkpoint_interval,
        seed=fault_model.rng_seed)


def write_trace(trace: list[TraceRecord], path) -> None:
    """Flat tab-delimited trace table: time, device, kind, duration, bytes."""
    with open(path, "w") as fh:
        fh.write("time\tdevice\tkind\tduration\tbytes\n")
        for r in trace:
            fh.write(f"{r.time:.9f}\t{r.device}\t{r.kind}\t"
                     f"{r.duration:.9f}\t{r.bytes:.1f}\n")
