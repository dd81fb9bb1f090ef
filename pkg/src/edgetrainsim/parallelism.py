"""The four parallelism strategies as explicit plan structures.

A plan binds a workload partition and a deterministic collective schedule to
an ordered set of devices.  Plans never mutate the spec or job they reference;
construction is pure.

Collective payload sizes follow the job's byte constants: gradient
synchronization moves ``param_bytes`` bytes per parameter, activation tensors
move ``2 * activation_bytes_factor`` bytes per element, so the fp32 defaults
reproduce the familiar 4-byte payload arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .devices import TrustedDomain, effective_throughput
from .workload import (TransformerSpec, TrainingJob, activation_bytes_per_block,
                       param_count, state_bytes)

KIND_SINGLE = "single"
KIND_DP = "dp"
KIND_SP = "sp"
KIND_TP = "tp"
KIND_PP = "pp"

# Deterministic preference order used for tie-breaking between equal plans.
KIND_PREFERENCE = (KIND_DP, KIND_PP, KIND_TP, KIND_SP)
ALL_KINDS = (KIND_SINGLE, KIND_DP, KIND_SP, KIND_TP, KIND_PP)

OP_ALLREDUCE = "allreduce"
OP_ALLGATHER = "allgather"
OP_P2P = "p2p"


class PlanError(ValueError):
    """A plan cannot be constructed from the given inputs."""


@dataclass(frozen=True)
class DataParallelPartition:
    shard_sizes: tuple[int, ...]
    sync_period: int


@dataclass(frozen=True)
class SequenceParallelPartition:
    subseq_lengths: tuple[int, ...]


@dataclass(frozen=True)
class TensorParallelPartition:
    heads_per_device: tuple[int, ...]
    hidden_slice_per_device: tuple[int, ...]


@dataclass(frozen=True)
class PipelineParallelPartition:
    stages: tuple[tuple[str, tuple[int, int]], ...]  # (device, [start, end))
    micro_batch_count: int


Partition = Union[None, DataParallelPartition, SequenceParallelPartition,
                  TensorParallelPartition, PipelineParallelPartition]


@dataclass(frozen=True)
class ParallelPlan:
    kind: str
    participants: tuple[str, ...]
    partition: Partition
    job: TrainingJob
    spec: TransformerSpec

    def __post_init__(self):
        if not self.participants:
            raise PlanError("a plan needs at least one participant")
        if len(set(self.participants)) != len(self.participants):
            raise PlanError("participants must be distinct")
        if self.kind == KIND_SINGLE and len(self.participants) != 1:
            raise PlanError("a single-device plan has exactly one participant")
        if self.kind not in ALL_KINDS:
            raise PlanError(f"unknown plan kind {self.kind!r}")


@dataclass(frozen=True)
class CommEvent:
    op: str
    payload_bytes: float
    participants: tuple[str, ...]
    phase: str

    def __post_init__(self):
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be >= 0")
        if self.op == OP_P2P and len(self.participants) != 2:
            raise ValueError("point-to-point events have exactly 2 participants")
        if self.op in (OP_ALLREDUCE, OP_ALLGATHER) and len(self.participants) < 2:
            raise ValueError("collectives need at least 2 participants")


@dataclass(frozen=True)
class MemoryCheck:
    required_bytes: float
    fits: bool
    state_bytes: float
    activation_bytes: float


def largest_remainder_split(total: int, weights: list[float],
                            minimum: int = 1) -> list[int]:
    """Split ``total`` integer units proportionally to ``weights``.

    Largest-remainder rounding; ties go to the lower index.  Every share is
    at least ``minimum`` (shortfall is taken from the largest shares).
    """
    n = len(weights)
    if n == 0:
        raise PlanError("cannot split across zero participants")
    if total < n * minimum:
        raise PlanError(f"cannot give each of {n} participants at least {minimum} "
                        f"out of {total}")
    wsum = sum(weights)
    if wsum <= 0:
        raise PlanError("weights must sum to a positive value")
    raw = [total * w / wsum for w in weights]
    shares = [int(r) for r in raw]
    remainders = [r - s for r, s in zip(raw, shares)]
    # Hand out the leftover units by descending remainder, lower index first.
    order = sorted(range(n), key=lambda i: (-remainders[i], i))
    leftover = total - sum(shares)
    for i in range(leftover):
        shares[order[i % n]] += 1
    # Enforce the minimum by stealing from the currently largest share.
    for i in range(n):
        while shares[i] < minimum:
            donor = max(range(n), key=lambda j: (shares[j], -j))
            if shares[donor] <= minimum:
                raise PlanError("cannot satisfy the per-participant minimum")
            shares[donor] -= 1
            shares[i] += 1
    return shares


def _throughputs(domain: TrustedDomain, participants) -> list[float]:
    return [effective_throughput(domain.device(p), domain.mode) for p in participants]


def activation_tensor_bytes(spec: TransformerSpec, job: TrainingJob) -> float:
    """Wire size of one micro-batch activation tensor (m x s x h elements)."""
    return job.activation_elem_bytes * job.micro_batch * job.seq_len * spec.hidden_size


def grad_sync_bytes(spec: TransformerSpec, job: TrainingJob) -> float:
    """Payload of one full-model gradient synchronization."""
    return job.param_bytes * param_count(spec)


def make_single_plan(domain: TrustedDomain, spec: TransformerSpec,
                     job: TrainingJob, participant: str) -> ParallelPlan:
    domain.device(participant)  # raises for unknown ids
    return ParallelPlan(KIND_SINGLE, (participant,), None, job, spec)


def make_dp_plan(domain: TrustedDomain, spec: TransformerSpec, job: TrainingJob,
                 participants) -> ParallelPlan:
    participants = tuple(participants)
    if not participants:
        raise PlanError("data parallelism needs at least one participant")
    if job.global_batch < len(participants):
        raise PlanError(f"global batch {job.global_batch} is smaller than the "
                        f"participant count {len(participants)}")
    shards = largest_remainder_split(job.global_batch,
                                     _throughputs(domain, participants))
    partition = DataParallelPartition(tuple(shards), job.dp_sync_period)
    return ParallelPlan(KIND_DP, participants, partition, job, spec)


def make_sp_plan(domain: TrustedDomain, spec: TransformerSpec, job: TrainingJob,
                 participants) -> ParallelPlan:
    participants = tuple(participants)
    if job.seq_len < len(participants):
        raise PlanError(f"sequence length {job.seq_len} is smaller than the "
                        f"participant count {len(participants)}")
    lengths = largest_remainder_split(job.seq_len,
                                      _throughputs(domain, participants))
    return ParallelPlan(KIND_SP, participants,
                        SequenceParallelPartition(tuple(lengths)), job, spec)


def make_tp_plan(domain: TrustedDomain, spec: TransformerSpec, job: TrainingJob,
                 participants) -> ParallelPlan:
    participants = tuple(participants)
    n = len(participants)
    if n == 0:
        raise PlanError("tensor parallelism needs at least one participant")
    mlp_hidden = spec.mlp_ratio * spec.hidden_size
    if spec.num_heads % n != 0 or mlp_hidden % n != 0:
        raise PlanError(
            f"tensor parallelism requires the participant count ({n}) to divide "
            f"both the head count ({spec.num_heads}) and the MLP hidden size "
            f"({mlp_hidden})")
    for p in participants:
        domain.device(p)
    partition = TensorParallelPartition((spec.num_heads // n,) * n,
                                        (mlp_hidden // n,) * n)
    return ParallelPlan(KIND_TP, participants, partition, job, spec)


def uniform_stage_ranges(num_blocks: int, num_stages: int) -> list[tuple[int, int]]:
    """Contiguous near-equal split of [0, num_blocks); earlier stages larger."""
    counts = largest_remainder_split(num_blocks, [1.0] * num_stages)
    ranges, start = [], 0
    for c in counts:
        ranges.append((start, start + c))
        start += c
    return ranges


def make_pp_plan(domain: TrustedDomain, spec: TransformerSpec, job: TrainingJob,
                 ordered_participants,
                 stage_ranges: Optional[list[tuple[int, int]]] = None) -> ParallelPlan:
    participants = tuple(ordered_participants)
    n = len(participants)
    if spec.num_blocks < n:
        raise PlanError(f"{spec.num_blocks} blocks cannot fill {n} pipeline stages")
    for p in participants:
        domain.device(p)
    if stage_ranges is None:
        stage_ranges = uniform_stage_ranges(spec.num_blocks, n)
    stage_ranges = [tuple(r) for r in stage_ranges]
    if len(stage_ranges) != n:
        raise PlanError("stage_ranges must match the participant count")
    expected_start = 0
    for start, end in stage_ranges:
        if start != expected_start or end <= start:
            raise PlanError("stage ranges must tile the block range contiguously")
        expected_start = end
    if expected_start != spec.num_blocks:
        raise PlanError("stage ranges must cover every block")
    stages = tuple((p, r) for p, r in zip(participants, stage_ranges))
    partition = PipelineParallelPartition(stages, job.micro_batch_count)
    return ParallelPlan(KIND_PP, participants, partition, job, spec)


def comm_schedule(plan: ParallelPlan) -> list[CommEvent]:
    """Ordered collective template for one sync period of iterations.

    Per-block collectives are scheduled once per micro-batch pass: their
    payloads are micro-batch sized, and one iteration runs B/m passes.
    """
    spec, job = plan.spec, plan.job
    parts = plan.participants
    n = len(parts)
    k = job.dp_sync_period
    m_count = job.micro_batch_count
    act = activation_tensor_bytes(spec, job)
    events: list[CommEvent] = []

    if plan.kind == KIND_SINGLE or n == 1:
        return events

    if plan.kind == KIND_DP:
        events.append(CommEvent(OP_ALLREDUCE, grad_sync_bytes(spec, job), parts,
                                "per-sync-period/gradient-sync"))
    elif plan.kind == KIND_SP:
        for it in range(k):
            for mb in range(m_count):
                for blk in range(spec.num_blocks):
                    tag = f"iter{it}/mb{mb}/block{blk}"
                    events.append(CommEvent(OP_ALLGATHER, act, parts,
                                            f"{tag}/forward-gather"))
                    events.append(CommEvent(OP_ALLREDUCE, act, parts,
                                            f"{tag}/output-reduce"))
        events.append(CommEvent(OP_ALLREDUCE, grad_sync_bytes(spec, job), parts,
                                "per-sync-period/gradient-sync"))
    elif plan.kind == KIND_TP:
        phases = ("forward-attn", "forward-mlp", "backward-mlp", "backward-attn")
        for it in range(k):
            for mb in range(m_count):
                for blk in range(spec.num_blocks):
                    for phase in phases:
                        events.append(CommEvent(
                            OP_ALLREDUCE, act, parts,
                            f"iter{it}/mb{mb}/block{blk}/{phase}"))
    elif plan.kind == KIND_PP:
        for it in range(k):
            for mb in range(m_count):
                for i in range(n - 1):
                    events.append(CommEvent(
                        OP_P2P, act, (parts[i], parts[i + 1]),
                        f"iter{it}/mb{mb}/boundary{i}/forward"))
            for mb in range(m_count):
                for i in range(n - 1, 0, -1):
                    events.append(CommEvent(
                        OP_P2P, act, (parts[i], parts[i - 1]),
                        f"iter{it}/mb{mb}/boundary{i - 1}/backward"))
    return events


def ring_wire_bytes_per_device(op: str, payload_bytes: float, n: int) -> float:
    """Bytes one participant transmits for a ring collective."""
    if n < 2:
        return 0.0
    if op == OP_ALLREDUCE:
        return 2.0 * (n - 1) / n * payload_bytes
    if op == OP_ALLGATHER:
        return (n - 1) / n * payload_bytes
    if op == OP_P2P:
        return payload_bytes
    raise ValueError(f"unknown op {op!r}")


def _pp_inflight_depth(plan: ParallelPlan) -> int:
    stages = len(plan.partition.stages)
    return min(plan.partition.micro_batch_count, stages)


def check_memory(plan: ParallelPlan, domain: TrustedDomain) -> dict[str, MemoryCheck]:
    """Per-device required bytes and whether they fit in usable memory."""
    spec, job = plan.spec, plan.job
    n = len(plan.participants)
    state = state_bytes(spec, job)
    act = activation_bytes_per_block(spec, job.micro_batch, job)
    result: dict[str, MemoryCheck] = {}

    if plan.kind in (KIND_SINGLE, KIND_DP, KIND_SP):
        for p in plan.participants:
            required_state, required_act = state, spec.num_blocks * act
            result[p] = _check_one(domain, p, required_state, required_act)
    elif plan.kind == KIND_TP:
        for p in plan.participants:
            result[p] = _check_one(domain, p, state / n, spec.num_blocks * act / n)
    elif plan.kind == KIND_PP:
        depth = _pp_inflight_depth(plan)
        l = max(spec.num_blocks, 1)
        for p, (start, end) in plan.partition.stages:
            blocks = end - start
            result[p] = _check_one(domain, p, state * blocks / l,
                                   blocks * act * depth)
    else:
        raise PlanError(f"unknown plan kind {plan.kind!r}")
    return result


def _check_one(domain: TrustedDomain, device_id: str, req_state: float,
               req_act: float) -> MemoryCheck:
    device = domain.device(device_id)
    required = req_state + req_act
    return MemoryCheck(required_bytes=required,
                       fits=required <= device.usable_memory,
                       state_bytes=req_state, activation_bytes=req_act)
