"""Device, power and network modeling for a trusted edge domain.

Profiles are declared metadata (no live probing).  Effective throughputs and
power draws for the built-in Jetson profiles are assumptions chosen at
roughly half the datasheet peaks; downstream acceptance checks rely only on
ratios and orderings that are robust to these defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

MODE_CPU = "cpu"
MODE_GPU = "gpu"
MODES = (MODE_CPU, MODE_GPU)


class ValidationError(ValueError):
    """A profile or domain violates a structural invariant."""


@dataclass(frozen=True)
class DeviceProfile:
    id: str
    cpu_throughput: float            # effective sustained FLOP/s
    gpu_throughput: float            # FLOP/s, 0 if no GPU
    mem_capacity: float              # bytes
    power_idle: float                # watts
    power_cpu_busy: float            # watts
    power_gpu_busy: float            # watts
    power_net: float                 # additive watts while transmitting
    usable_mem_fraction: float = 0.9

    def __post_init__(self):
        if not self.id:
            raise ValidationError("device id must be non-empty")
        if self.cpu_throughput < 0 or self.gpu_throughput < 0:
            raise ValidationError(f"{self.id}: throughputs must be >= 0")
        if self.mem_capacity <= 0:
            raise ValidationError(f"{self.id}: mem_capacity must be > 0")
        if not 0 < self.usable_mem_fraction <= 1:
            raise ValidationError(f"{self.id}: usable_mem_fraction must be in (0, 1]")
        if self.power_idle < 0 or self.power_net < 0:
            raise ValidationError(f"{self.id}: power values must be >= 0")
        if self.power_idle > self.power_cpu_busy or self.power_idle > self.power_gpu_busy:
            raise ValidationError(f"{self.id}: power_idle must not exceed busy power")

    @property
    def usable_memory(self) -> float:
        """Bytes available to the training runtime; single OOM choke point."""
        return self.mem_capacity * self.usable_mem_fraction


def effective_throughput(device: DeviceProfile, mode: str) -> float:
    """Sustained FLOP/s under the given execution mode."""
    if mode == MODE_CPU:
        return device.cpu_throughput
    if mode == MODE_GPU:
        return max(device.cpu_throughput, device.gpu_throughput)
    raise ValidationError(f"unknown mode {mode!r} (expected one of {MODES})")


def busy_power(device: DeviceProfile, mode: str) -> float:
    """Power draw while computing, matching the unit effective_throughput picks."""
    if mode == MODE_GPU and device.gpu_throughput >= device.cpu_throughput \
            and device.gpu_throughput > 0:
        return device.power_gpu_busy
    return device.power_cpu_busy


@dataclass(frozen=True)
class Link:
    bandwidth: float   # bits/s
    latency: float     # seconds

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValidationError("link bandwidth must be > 0")
        if self.latency < 0:
            raise ValidationError("link latency must be >= 0")

    @property
    def bytes_per_second(self) -> float:
        return self.bandwidth / 8.0


@dataclass(frozen=True)
class NetworkModel:
    default_bandwidth: float = 1e9   # bits/s (1000 Mbps wireless)
    default_latency: float = 1e-4    # seconds per hop
    links: tuple = ()                # ((dev_a, dev_b, Link), ...)

    def __post_init__(self):
        if self.default_bandwidth <= 0:
            raise ValidationError("default_bandwidth must be > 0")
        if self.default_latency < 0:
            raise ValidationError("default_latency must be >= 0")

    def link_between(self, a: str, b: str) -> Link:
        key = frozenset((a, b))
        for da, db, link in self.links:
            if frozenset((da, db)) == key:
                return link
        return Link(self.default_bandwidth, self.default_latency)


@dataclass(frozen=True)
class TrustedDomain:
    devices: tuple[DeviceProfile, ...]
    network: NetworkModel = field(default_factory=NetworkModel)
    mode: str = MODE_GPU
    name: str = "custom"

    def __post_init__(self):
        if not self.devices:
            raise ValidationError("a trusted domain needs at least one device")
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ValidationError("device ids must be unique")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")

    def device(self, device_id: str) -> DeviceProfile:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(f"unknown device id {device_id!r}")

    @property
    def device_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.devices)

    def with_mode(self, mode: str) -> "TrustedDomain":
        return replace(self, mode=mode)


@dataclass(frozen=True)
class FaultModel:
    mtbf_per_device: float            # seconds
    checkpoint_write_bandwidth: float  # bytes/s
    recovery_reload_bandwidth: float   # bytes/s
    rng_seed: int = 0

    def __post_init__(self):
        if self.mtbf_per_device <= 0:
            raise ValidationError("mtbf_per_device must be > 0")
        if self.checkpoint_write_bandwidth <= 0 or self.recovery_reload_bandwidth <= 0:
            raise ValidationError("fault-model bandwidths must be > 0")


DEFAULT_FAULT_MODEL = FaultModel(
    mtbf_per_device=86400.0,            # one day
    checkpoint_write_bandwidth=50e6,    # local flash write
    recovery_reload_bandwidth=50e6,
    rng_seed=0,
)


def jetson_nano(device_id: str) -> DeviceProfile:
    return DeviceProfile(id=device_id, cpu_throughput=15e9, gpu_throughput=240e9,
                         mem_capacity=4e9, power_idle=2.0, power_cpu_busy=7.0,
                         power_gpu_busy=10.0, power_net=1.5)


def jetson_tx2(device_id: str) -> DeviceProfile:
    return DeviceProfile(id=device_id, cpu_throughput=30e9, gpu_throughput=600e9,
                         mem_capacity=8e9, power_idle=3.0, power_cpu_busy=10.0,
                         power_gpu_busy=15.0, power_net=1.5)


def jetson_nx(device_id: str) -> DeviceProfile:
    return DeviceProfile(id=device_id, cpu_throughput=60e9, gpu_throughput=1200e9,
                         mem_capacity=8e9, power_idle=4.0, power_cpu_busy=12.0,
                         power_gpu_busy=20.0, power_net=1.5)


DEVICE_PROFILE_FACTORIES = {
    "nano": jetson_nano,
    "tx2": jetson_tx2,
    "nx": jetson_nx,
}

TESTBED_PRESETS = ("homogeneous-nano4", "heterogeneous-mix4")


def testbed_preset(name: str, mode: str = MODE_GPU) -> TrustedDomain:
    """Built-in testbeds: four Nanos, or two Nanos + TX2 + NX, 1000 Mbps links."""
    network = NetworkModel(default_bandwidth=1e9, default_latency=1e-4)
    if name == "homogeneous-nano4":
        devices = tuple(jetson_nano(f"nano-{i}") for i in range(4))
    elif name == "heterogeneous-mix4":
        devices = (jetson_nano("nano-0"), jetson_nano("nano-1"),
                   jetson_tx2("tx2-0"), jetson_nx("nx-0"))
    else:
        known = ", ".join(TESTBED_PRESETS)
        raise KeyError(f"unknown testbed preset {name!r} (known: {known})")
    return TrustedDomain(devices=devices, network=network, mode=mode, name=name)
