"""YAML schemas for domains, models, jobs, plans and results.

Every file carries a ``schema_version`` field.  Loading validates against the
type invariants and reports the offending field; dumping is key-sorted so
outputs are byte-stable.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Any

import yaml

from .devices import (DeviceProfile, Link, NetworkModel, TrustedDomain,
                      ValidationError)
from .parallelism import (DataParallelPartition, ParallelPlan,
                          PipelineParallelPartition, SequenceParallelPartition,
                          TensorParallelPartition, KIND_DP, KIND_PP, KIND_SP,
                          KIND_TP)
from .simengine import SimulationResult
from .workload import TrainingJob, TransformerSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or invalid configuration input."""


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required field {key!r}")
    return mapping[key]


def _check_version(data: dict, context: str):
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{context}: unsupported schema_version {version!r}")


def parse_yaml(text: str, context: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{context}: YAML parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected a mapping at the top level")
    return data


def dump_yaml(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


# ---------------------------------------------------------------- domains

def domain_to_dict(domain: TrustedDomain) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": domain.name,
        "mode": domain.mode,
        "network": {
            "default_bandwidth_bps": domain.network.default_bandwidth,
            "default_latency_s": domain.network.default_latency,
            "links": [
                {"a": a, "b": b, "bandwidth_bps": link.bandwidth,
                 "latency_s": link.latency}
                for a, b, link in domain.network.links
            ],
        },
        "devices": [
            {
                "id": d.id,
                "cpu_throughput_flops": d.cpu_throughput,
                "gpu_throughput_flops": d.gpu_throughput,
                "mem_capacity_bytes": d.mem_capacity,
                "usable_mem_fraction": d.usable_mem_fraction,
                "power_idle_w": d.power_idle,
                "power_cpu_busy_w": d.power_cpu_busy,
                "power_gpu_busy_w": d.power_gpu_busy,
                "power_net_w": d.power_net,
            }
            for d in domain.devices
        ],
    }


def domain_from_dict(data: dict) -> TrustedDomain:
    _check_version(data, "domain")
    devices = []
    for i, entry in enumerate(_require(data, "devices", "domain")):
        ctx = f"domain.devices[{i}]"
        try:
            devices.append(DeviceProfile(
                id=str(_require(entry, "id", ctx)),
                cpu_throughput=float(_require(entry, "cpu_throughput_flops", ctx)),
                gpu_throughput=float(entry.get("gpu_throughput_flops", 0.0)),
                mem_capacity=float(_require(entry, "mem_capacity_bytes", ctx)),
                usable_mem_fraction=float(entry.get("usable_mem_fraction", 0.9)),
                power_idle=float(_require(entry, "power_idle_w", ctx)),
                power_cpu_busy=float(_require(entry, "power_cpu_busy_w", ctx)),
                power_gpu_busy=float(_require(entry, "power_gpu_busy_w", ctx)),
                power_net=float(entry.get("power_net_w", 0.0)),
            ))
        except ValidationError as exc:
            raise ConfigError(f"{ctx}: {exc}") from exc
    net_data = data.get("network", {})
    try:
        links = tuple(
            (str(_require(e, "a", "link")), str(_require(e, "b", "link")),
             Link(float(_require(e, "bandwidth_bps", "link")),
                  float(e.get("latency_s", 0.0))))
            for e in net_data.get("links", []))
        network = NetworkModel(
            default_bandwidth=float(net_data.get("default_bandwidth_bps", 1e9)),
            default_latency=float(net_data.get("default_latency_s", 1e-4)),
            links=links)
        return TrustedDomain(devices=tuple(devices), network=network,
                             mode=str(data.get("mode", "gpu")),
                             name=str(data.get("name", "custom")))
    except ValidationError as exc:
        raise ConfigError(f"domain: {exc}") from exc


# ---------------------------------------------------------------- model/job

def model_to_dict(spec: TransformerSpec) -> dict:
    d = asdict(spec)
    d["schema_version"] = SCHEMA_VERSION
    return d


def model_from_dict(data: dict) -> TransformerSpec:
    _check_version(data, "model")
    try:
        return TransformerSpec(
            name=str(_require(data, "name", "model")),
            num_blocks=int(_require(data, "num_blocks", "model")),
            hidden_size=int(_require(data, "hidden_size", "model")),
            num_heads=int(_require(data, "num_heads", "model")),
            vocab_size=int(_require(data, "vocab_size", "model")),
            mlp_ratio=int(data.get("mlp_ratio", 4)))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def job_to_dict(job: TrainingJob) -> dict:
    return asdict(job)


def job_from_dict(data: dict) -> TrainingJob:
    try:
        return TrainingJob(
            global_batch=int(_require(data, "global_batch", "job")),
            seq_len=int(_require(data, "seq_len", "job")),
            micro_batch=int(_require(data, "micro_batch", "job")),
            dp_sync_period=int(data.get("dp_sync_period", 5)),
            param_bytes=float(data.get("param_bytes", 4.0)),
            optimizer_state_multiplier=float(
                data.get("optimizer_state_multiplier", 4.0)),
            activation_bytes_factor=float(
                data.get("activation_bytes_factor", 2.0)))
    except ValueError as exc:
        raise ConfigError(f"job: {exc}") from exc


# ---------------------------------------------------------------- plans

def _partition_to_dict(plan: ParallelPlan) -> dict:
    p = plan.partition
    if p is None:
        return {}
    if isinstance(p, DataParallelPartition):
        return {"shard_sizes": list(p.shard_sizes), "sync_period": p.sync_period}
    if isinstance(p, SequenceParallelPartition):
        return {"subseq_lengths": list(p.subseq_lengths)}
    if isinstance(p, TensorParallelPartition):
        return {"heads_per_device": list(p.heads_per_device),
                "hidden_slice_per_device": list(p.hidden_slice_per_device)}
    if isinstance(p, PipelineParallelPartition):
        return {"stages": [{"device": d, "start": s, "end": e}
                           for d, (s, e) in p.stages],
                "micro_batch_count": p.micro_batch_count}
    raise ConfigError(f"unknown partition type {type(p).__name__}")


def _partition_from_dict(kind: str, data: dict):
    if kind == KIND_DP:
        return DataParallelPartition(tuple(_require(data, "shard_sizes", "plan")),
                                     int(_require(data, "sync_period", "plan")))
    if kind == KIND_SP:
        return SequenceParallelPartition(
            tuple(_require(data, "subseq_lengths", "plan")))
    if kind == KIND_TP:
        return TensorParallelPartition(
            tuple(_require(data, "heads_per_device", "plan")),
            tuple(_require(data, "hidden_slice_per_device", "plan")))
    if kind == KIND_PP:
        stages = tuple((str(s["device"]), (int(s["start"]), int(s["end"])))
                       for s in _require(data, "stages", "plan"))
        return PipelineParallelPartition(
            stages, int(_require(data, "micro_batch_count", "plan")))
    return None


def plan_to_dict(plan: ParallelPlan, domain: TrustedDomain,
                 checkpoint_interval: float | None = None,
                 predicted: SimulationResult | None = None) -> dict:
    data: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "kind": plan.kind,
        "participants": list(plan.participants),
        "partition": _partition_to_dict(plan),
        "model": model_to_dict(plan.spec),
        "job": job_to_dict(plan.job),
        "domain": domain_to_dict(domain),
    }
    if checkpoint_interval is not None:
        data["checkpoint_interval_s"] = checkpoint_interval
    if predicted is not None and not predicted.oom:
        data["predicted"] = {
            "latency_per_sample_s": predicted.latency_per_sample,
            "energy_per_sample_j": predicted.energy_per_sample,
        }
    return data


def plan_from_dict(data: dict) -> tuple[ParallelPlan, TrustedDomain, float | None]:
    _check_version(data, "plan")
    domain = domain_from_dict(_require(data, "domain", "plan"))
    spec = model_from_dict(_require(data, "model", "plan"))
    job = job_from_dict(_require(data, "job", "plan"))
    kind = str(_require(data, "kind", "plan"))
    participants = tuple(str(p) for p in _require(data, "participants", "plan"))
    for p in participants:
        try:
            domain.device(p)
        except KeyError as exc:
            raise ConfigError(f"plan: participant {p!r} is not in the domain") \
                from exc
    try:
        plan = ParallelPlan(kind=kind, participants=participants,
                            partition=_partition_from_dict(
                                kind, data.get("partition", {})),
                            job=job, spec=spec)
    except ValueError as exc:
        raise ConfigError(f"plan: {exc}") from exc
    interval = data.get("checkpoint_interval_s")
    return plan, domain, interval


# ---------------------------------------------------------------- results

def result_to_dict(result: SimulationResult) -> dict:
    data: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "plan_kind": result.plan_kind,
        "iterations_simulated": result.iterations_simulated,
        "samples_processed": result.samples_processed,
        "oom": result.oom,
        "per_device": {
            dev: {"peak_mem_bytes": u.peak_mem,
                  "compute_time_s": u.compute_time,
                  "comm_time_s": u.comm_time,
                  "idle_time_s": u.idle_time,
                  "energy_j": u.energy}
            for dev, u in sorted(result.per_device.items())
        },
        "comm_bytes_by_op": dict(sorted(result.comm_bytes_by_op.items())),
    }
    if result.oom:
        data["oom_devices"] = list(result.oom_devices)
    else:
        data["makespan_s"] = result.makespan
        data["latency_per_sample_s"] = result.latency_per_sample
        data["energy_per_sample_j"] = result.energy_per_sample
    return data
