"""Multi-RSU task pre-migration environment.

Vehicles follow trajectories across a field of roadside units (RSUs). Each
slot every vehicle picks one RSU to receive a pre-migrated share (fraction
alpha) of its twin task; the rest is processed at the serving RSU (nearest by
Euclidean distance). The environment computes uplink/downlink transmission
latencies from a deterministic distance-law channel, backhaul migration
latency, queue-dependent processing latencies with a cache-reuse discount for
stable choices, a contention-driven bit error rate, and the resulting QoE.

All units are SI: meters, seconds, Hz, watts, bits, CPU cycles.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .configio import ConfigError, get_float, get_int, get_str
from .roadnet import GeoPoint
from .trajgen import Trajectory


class ActionError(ValueError):
    """An action was outside 0..E-1."""


@dataclass(frozen=True)
class ChannelParams:
    """Deterministic distance-law channel: h = A * (c / (4 pi f d))^2."""

    gain_coeff: float = 1.0        # A
    carrier: float = 2.4e9         # f, Hz
    light_speed: float = 3.0e8     # c, m/s


@dataclass(frozen=True)
class RsuSpec:
    id: int
    pos: GeoPoint
    compute: float                 # C_e, cycles/s
    max_load: float                # cap on queued cycles
    bw_up: float                   # Hz
    bw_down: float                 # Hz
    noise_power: float             # receiver noise, W
    backhaul: dict[int, float] = field(default_factory=dict)  # peer id -> bits/s


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    tx_power: float                            # W
    cycles_per_bit: float                      # f_v
    task_bits: np.ndarray                      # per-slot schedule (cycled), bits
    request_bits: float                        # uplink request size, bits
    result_bits: np.ndarray                    # per-RSU result size, bits
    trajectory: Trajectory

    def task_bits_at(self, t: int) -> float:
        return float(self.task_bits[t % len(self.task_bits)])


@dataclass(frozen=True)
class EnvConfig:
    alpha: float = 0.5             # pre-migrated task fraction, in [0, 1)
    mu: float = 0.5                # rendering reuse coefficient, [0, 1]
    tau: float = 5e-8              # error contribution per pre-migrated bit
    lambda1: float = 1.0           # QoE weight on error rate
    lambda2: float = 1.0           # QoE weight on latency
    slot_seconds: float = 1.0
    horizon: int = 100
    reward_mode: str = "latency"   # 'latency' (reward = -T_total) or 'qoe'
    background_mean: float = 0.0   # mean background cycles arriving per RSU per slot
    background_unit: float = 5e8   # cycles per background arrival (Poisson counts)
    init_load: float = 0.0         # queued cycles at reset
    warmup_slots: int = 32         # random-action slots used to set the latency scale

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must be in [0, 1)")
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError("mu must be in [0, 1]")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("QoE weights must be nonnegative")
        if self.reward_mode not in ("latency", "qoe"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")


# Observation layout per vehicle: [prev action, E RSU loads, error rate,
# stability flag, contention flag, total latency], all scaled to ~[0, 1].
OBS_EXTRA = 5


@dataclass
class SlotMetrics:
    """Per-vehicle outcome of one slot."""

    action: int
    serving: int
    t_up: float
    t_mig: float
    t_proc: float
    t_down: float
    t_total: float
    err_rate: float
    qoe: float
    reward: float
    remapped: bool
    stability: float               # 1.0 when the target RSU was kept
    contention: float              # 1.0 when another vehicle shares the target
    t_proc_serving: float = 0.0    # processing branch at the serving RSU
    t_proc_target: float = 0.0     # processing branch at the pre-migration RSU


@dataclass
class StepResult:
    observations: list[np.ndarray]
    rewards: np.ndarray
    metrics: list[SlotMetrics]
    done: bool


class PremigrationEnv:
    """Single-writer environment; create one instance per concurrent rollout."""

    def __init__(
        self,
        rsus: Sequence[RsuSpec],
        vehicles: Sequence[VehicleSpec],
        channel: ChannelParams,
        cfg: EnvConfig,
    ):
        if not rsus:
            raise ValueError("need at least one RSU")
        if not vehicles:
            raise ValueError("need at least one vehicle")
        self.rsus = list(rsus)
        self.vehicles = list(vehicles)
        self.channel = channel
        self.cfg = cfg
        self.E = len(self.rsus)
        self.V = len(self.vehicles)
        self.obs_dim = self.E + OBS_EXTRA
        for v in self.vehicles:
            if not v.trajectory.points:
                raise ValueError(f"vehicle {v.id} has an empty trajectory")
            if not v.trajectory.is_monotone():
                raise ValueError(f"vehicle {v.id} trajectory timestamps not strictly increasing")
        self._rsu_xy = np.array([[r.pos.x, r.pos.y] for r in self.rsus])
        self._max_load = np.array([r.max_load for r in self.rsus])
        self._compute = np.array([r.compute for r in self.rsus])
        # Per-vehicle trajectory arrays for position lookup.
        self._traj_t = [np.array([p.t for p in v.trajectory.points]) for v in self.vehicles]
        self._traj_xy = [
            np.array([[p.pos.x, p.pos.y] for p in v.trajectory.points])
            for v in self.vehicles
        ]
        self._action_scale = float(max(self.E - 1, 1))
        self._latency_scale = 1.0
        self._rng: Optional[np.random.Generator] = None

    # --- position / channel helpers ---

    def position(self, v: int, slot: int) -> GeoPoint:
        """Vehicle position at the start of a slot, held constant off the ends."""
        ts = self._traj_t[v]
        xy = self._traj_xy[v]
        t = ts[0] + slot * self.cfg.slot_seconds
        if t <= ts[0]:
            return GeoPoint(float(xy[0, 0]), float(xy[0, 1]))
        if t >= ts[-1]:
            return GeoPoint(float(xy[-1, 0]), float(xy[-1, 1]))
        i = int(np.searchsorted(ts, t, side="right")) - 1
        u = (t - ts[i]) / (ts[i + 1] - ts[i])
        p = xy[i] + u * (xy[i + 1] - xy[i])
        return GeoPoint(float(p[0]), float(p[1]))

    def distance(self, v: int, e: int, slot: int) -> float:
        """Vehicle-RSU distance, clamped to 1 m for co-located pairs."""
        p = self.position(v, slot)
        r = self.rsus[e].pos
        return max(1.0, math.hypot(p.x - r.x, p.y - r.y))

    def channel_gain(self, v: int, e: int, slot: int) -> float:
        d = self.distance(v, e, slot)
        c = self.channel
        return c.gain_coeff * (c.light_speed / (4.0 * math.pi * c.carrier * d)) ** 2

    def uplink_rate(self, v: int, e: int, slot: int) -> float:
        """Shannon-form rate on the RSU's uplink bandwidth, bits/s."""
        snr = self.vehicles[v].tx_power * self.channel_gain(v, e, slot) / self.rsus[e].noise_power
        return self.rsus[e].bw_up * math.log2(1.0 + snr)

    def downlink_rate(self, v: int, e: int, slot: int) -> float:
        snr = self.vehicles[v].tx_power * self.channel_gain(v, e, slot) / self.rsus[e].noise_power
        return self.rsus[e].bw_down * math.log2(1.0 + snr)

    def nearest_rsu(self, v: int, slot: int) -> int:
        p = self.position(v, slot)
        d = np.hypot(self._rsu_xy[:, 0] - p.x, self._rsu_xy[:, 1] - p.y)
        return int(np.argmin(d))  # ties resolve to the lowest id

    # --- latency model pieces (exposed for direct testing) ---

    def transmission_latencies(self, v: int, serving: int, target: int, slot: int) -> tuple[float, float]:
        """(uplink request latency, downlink result latency).

        The request goes to the serving RSU; results come back from the RSUs
        that processed a share (serving and target, once each when equal).
        """
        spec = self.vehicles[v]
        t_up = spec.request_bits / self.uplink_rate(v, serving, slot) if spec.request_bits else 0.0
        participants = {serving, target}
        t_down = 0.0
        for e in participants:
            bits = float(spec.result_bits[e])
            if bits:
                t_down += bits / self.downlink_rate(v, e, slot)
        return t_up, t_down

    def migration_latency(self, v: int, slot: int, from_e: int, to_e: int) -> float:
        """Backhaul transfer time of the pre-migrated share; zero on self."""
        if from_e == to_e:
            return 0.0
        d_mig = self.cfg.alpha * self.vehicles[v].task_bits_at(slot)
        if d_mig == 0.0:
            return 0.0
        bw = self.rsus[from_e].backhaul.get(to_e)
        if bw is None or bw <= 0:
            raise ValueError(f"no backhaul bandwidth configured for pair ({from_e},{to_e})")
        return d_mig / bw

    @staticmethod
    def rendering_sizes(
        d_task: float,
        alpha: float,
        mu: float,
        same_serving: bool,
        same_target: bool,
        prev_local_bits: float,
        prev_mig_bits: float,
    ) -> tuple[float, float, float]:
        """Rendering bit volumes (local share, migrated share, remaining D_L).

        A stable serving RSU reuses mu of last slot's local share; a stable
        pre-migration target reuses mu of last slot's migrated share. Sizes
        clamp at zero.
        """
        d_mig = alpha * d_task
        d_local = d_task - d_mig
        xi_local = d_local - (mu * prev_local_bits if same_serving else 0.0)
        xi_mig = d_mig - (mu * prev_mig_bits if same_target else 0.0)
        return max(0.0, xi_local), max(0.0, xi_mig), d_local

    def processing_latencies(
        self,
        v: int,
        serving: int,
        target: int,
        xi_local: float,
        xi_mig: float,
        t_mig: float,
        loads: np.ndarray,
    ) -> tuple[float, float, float]:
        """(serving-side, target-side, combined parallel) processing latency."""
        f_v = self.vehicles[v].cycles_per_bit
        t_serv = (loads[serving] + xi_local * f_v) / self.rsus[serving].compute
        t_targ = (loads[target] + xi_mig * f_v) / self.rsus[target].compute
        return t_serv, t_targ, max(t_serv, t_targ + t_mig)

    @staticmethod
    def error_rate(contending_mig_bits: Sequence[float], tau: float) -> float:
        """1 - exp(-sum of tau * migrated bits over co-targeting vehicles)."""
        return 1.0 - math.exp(-tau * float(sum(contending_mig_bits)))

    def qoe(self, err: float, t_total: float) -> float:
        return -self.cfg.lambda1 * err - self.cfg.lambda2 * t_total

    # --- episode control ---

    def reset(self, seed: int) -> list[np.ndarray]:
        self._rng = np.random.default_rng(seed)
        self.t = 0
        self.loads = np.full(self.E, min(self.cfg.init_load, float(self._max_load.min())))
        self.loads = np.minimum(self.loads, self._max_load).astype(float)
        self.prev_action = np.full(self.V, -1, dtype=int)
        self.prev_serving = np.full(self.V, -1, dtype=int)
        self.prev_local_bits = np.zeros(self.V)
        self.prev_mig_bits = np.zeros(self.V)
        self.last_metrics: list[Optional[SlotMetrics]] = [None] * self.V
        self._latency_scale = 1.0
        if self.cfg.warmup_slots > 0:
            self._latency_scale = self._calibrate_latency_scale(seed)
        return [self._observation(v) for v in range(self.V)]

    def _calibrate_latency_scale(self, seed: int) -> float:
        """99th-percentile total latency under random actions, from a state copy."""
        snapshot = self._snapshot()
        warm_rng = np.random.default_rng([seed, 0xCA11])
        samples: list[float] = []
        for _ in range(self.cfg.warmup_slots):
            actions = warm_rng.integers(0, self.E, size=self.V)
            result = self.step(list(actions))
            samples.extend(m.t_total for m in result.metrics)
            if result.done:
                break
        self._restore(snapshot)
        scale = float(np.percentile(samples, 99.0)) if samples else 1.0
        return scale if scale > 0 else 1.0

    def _snapshot(self):
        return (
            self.t,
            self.loads.copy(),
            self.prev_action.copy(),
            self.prev_serving.copy(),
            self.prev_local_bits.copy(),
            self.prev_mig_bits.copy(),
            list(self.last_metrics),
            copy.deepcopy(self._rng.bit_generator.state),
            self._latency_scale,
        )

    def _restore(self, snap) -> None:
        (
            self.t,
            self.loads,
            self.prev_action,
            self.prev_serving,
            self.prev_local_bits,
            self.prev_mig_bits,
            self.last_metrics,
            rng_state,
            self._latency_scale,
        ) = snap
        self._rng.bit_generator.state = rng_state

    @property
    def latency_scale(self) -> float:
        return self._latency_scale

    def observation_scales(self) -> dict[str, float]:
        """Documented normalization scales; raw values are obs * scale."""
        return {
            "action": self._action_scale,
            "load": 0.0,  # per-RSU: max_load[e]
            "err_rate": 1.0,
            "stability": 1.0,
            "contention": 1.0,
            "t_total": self._latency_scale,
        }

    def _observation(self, v: int) -> np.ndarray:
        m = self.last_metrics[v]
        obs = np.zeros(self.obs_dim)
        obs[1 : 1 + self.E] = self.loads / self._max_load
        if m is not None:
            obs[0] = m.action / self._action_scale
            obs[1 + self.E] = m.err_rate
            obs[2 + self.E] = m.stability
            obs[3 + self.E] = m.contention
            obs[4 + self.E] = m.t_total / self._latency_scale
        return obs

    def denormalize_observation(self, obs: np.ndarray) -> dict[str, np.ndarray]:
        """Invert observation scaling back to raw metric values."""
        return {
            "action": obs[0] * self._action_scale,
            "loads": obs[1 : 1 + self.E] * self._max_load,
            "err_rate": obs[1 + self.E],
            "stability": obs[2 + self.E],
            "contention": obs[3 + self.E],
            "t_total": obs[4 + self.E] * self._latency_scale,
        }

    def step(self, joint_actions: Sequence[int]) -> StepResult:
        """Advance one slot under the given per-vehicle RSU choices."""
        if self._rng is None:
            raise RuntimeError("call reset() before step()")
        if len(joint_actions) != self.V:
            raise ActionError(f"expected {self.V} actions, got {len(joint_actions)}")
        for a in joint_actions:
            if not (0 <= int(a) < self.E):
                raise ActionError(f"action {a} outside 0..{self.E - 1}")

        t = self.t
        first_slot = t == 0
        serving = np.array([self.nearest_rsu(v, t) for v in range(self.V)])
        d_task = np.array([self.vehicles[v].task_bits_at(t) for v in range(self.V)])

        final_action = np.zeros(self.V, dtype=int)
        remapped = np.zeros(self.V, dtype=bool)
        xi_local = np.zeros(self.V)
        xi_mig = np.zeros(self.V)
        d_local = np.zeros(self.V)
        stability = np.zeros(self.V)
        # Vehicles commit work in id order; feasibility is checked against the
        # load already pending on the target this slot.
        pending = self.loads.copy()
        for v in range(self.V):
            a = int(joint_actions[v])
            same_serving = (not first_slot) and serving[v] == self.prev_serving[v]

            def sizes(target: int) -> tuple[float, float, float, bool]:
                same_target = (not first_slot) and target == self.prev_action[v]
                xl, xm, dl = self.rendering_sizes(
                    d_task[v],
                    self.cfg.alpha,
                    self.cfg.mu,
                    same_serving,
                    same_target,
                    self.prev_local_bits[v],
                    self.prev_mig_bits[v],
                )
                return xl, xm, dl, same_target

            xl, xm, dl, same_target = sizes(a)
            incoming = xm * self.vehicles[v].cycles_per_bit
            if a != serving[v] and pending[a] + incoming > self._max_load[a]:
                a = int(serving[v])
                remapped[v] = True
                xl, xm, dl, same_target = sizes(a)
                incoming = xm * self.vehicles[v].cycles_per_bit
            final_action[v] = a
            xi_local[v], xi_mig[v], d_local[v] = xl, xm, dl
            stability[v] = 1.0 if same_target else 0.0
            pending[serving[v]] += xi_local[v] * self.vehicles[v].cycles_per_bit
            pending[a] += incoming

        # Contention: vehicles sharing a pre-migration target this slot.
        mig_bits = self.cfg.alpha * d_task
        err = np.zeros(self.V)
        contention = np.zeros(self.V)
        for v in range(self.V):
            others = [
                mig_bits[w]
                for w in range(self.V)
                if w != v and final_action[w] == final_action[v]
            ]
            contention[v] = 1.0 if others else 0.0
            err[v] = self.error_rate(others, self.cfg.tau)

        metrics: list[SlotMetrics] = []
        rewards = np.zeros(self.V)
        for v in range(self.V):
            e_s, e_t = int(serving[v]), int(final_action[v])
            t_up, t_down = self.transmission_latencies(v, e_s, e_t, t)
            t_mig = self.migration_latency(v, t, e_s, e_t)
            t_proc_s, t_proc_t, t_proc = self.processing_latencies(
                v, e_s, e_t, xi_local[v], xi_mig[v], t_mig, self.loads
            )
            t_total = t_up + t_proc + t_down
            q = self.qoe(err[v], t_total)
            reward = q if self.cfg.reward_mode == "qoe" else -t_total
            rewards[v] = reward
            metrics.append(
                SlotMetrics(
                    action=e_t,
                    serving=e_s,
                    t_up=t_up,
                    t_mig=t_mig,
                    t_proc=t_proc,
                    t_down=t_down,
                    t_total=t_total,
                    err_rate=err[v],
                    qoe=q,
                    reward=reward,
                    remapped=bool(remapped[v]),
                    stability=stability[v],
                    contention=contention[v],
                    t_proc_serving=t_proc_s,
                    t_proc_target=t_proc_t,
                )
            )

        # Queue dynamics: drain at capacity, add this slot's work and random
        # background arrivals, clamp into [0, max_load].
        assigned = pending - self.loads
        drained = np.maximum(0.0, self.loads + assigned - self._compute * self.cfg.slot_seconds)
        if self.cfg.background_mean > 0:
            lam = self.cfg.background_mean / self.cfg.background_unit
            arrivals = self._rng.poisson(lam, size=self.E) * self.cfg.background_unit
            drained = drained + arrivals
        self.loads = np.minimum(drained, self._max_load)

        self.prev_action = final_action
        self.prev_serving = serving
        self.prev_local_bits = d_local
        self.prev_mig_bits = mig_bits
        self.last_metrics = metrics
        self.t = t + 1
        done = self.t >= self.cfg.horizon
        observations = [self._observation(v) for v in range(self.V)]
        return StepResult(observations, rewards, metrics, done)


METRICS_HEADER = [
    "episode", "slot", "vehicle", "action", "serving",
    "T_u", "T_m", "T_p", "T_d", "T_total", "err_rate", "qoe", "reward", "remapped",
]


def metrics_row(episode: int, slot: int, vehicle: int, m: SlotMetrics) -> list:
    return [
        episode, slot, vehicle, m.action, m.serving,
        f"{m.t_up:.9g}", f"{m.t_mig:.9g}", f"{m.t_proc:.9g}", f"{m.t_down:.9g}",
        f"{m.t_total:.9g}", f"{m.err_rate:.9g}", f"{m.qoe:.9g}", f"{m.reward:.9g}",
        int(m.remapped),
    ]


# --- scenario config interface ---

def _veh_key(cfg: dict[str, str], i: int, name: str) -> str:
    """veh.<i>.<name> with fallback to the unindexed veh.<name>."""
    specific = f"veh.{i}.{name}"
    return specific if specific in cfg else f"veh.{name}"


def _rsu_key(cfg: dict[str, str], i: int, name: str) -> str:
    specific = f"rsu.{i}.{name}"
    return specific if specific in cfg else f"rsu.{name}"


def build_env(
    cfg: dict[str, str],
    trajectories: Optional[Sequence[Trajectory]] = None,
) -> PremigrationEnv:
    """Assemble an environment from a flat scenario config.

    Vehicle trajectories come from the `trajectories` argument when given,
    otherwise from the CSV named by `veh.traj_csv` (vehicle i takes the i-th
    trajectory in file order, cycling when fewer are available).
    """
    from .trajgen import read_trajectories_csv

    n_rsu = get_int(cfg, "rsu.count")
    n_veh = get_int(cfg, "veh.count")
    if n_rsu < 1 or n_veh < 1:
        raise ConfigError("rsu.count and veh.count must be >= 1")

    rsus = []
    for i in range(n_rsu):
        backhaul: dict[int, float] = {}
        for j in range(n_rsu):
            if i == j:
                continue
            key = f"backhaul.{i}.{j}"
            alt = f"backhaul.{j}.{i}"
            if key in cfg:
                backhaul[j] = get_float(cfg, key)
            elif alt in cfg:
                backhaul[j] = get_float(cfg, alt)
            elif "backhaul.default" in cfg:
                backhaul[j] = get_float(cfg, "backhaul.default")
        rsus.append(
            RsuSpec(
                id=i,
                pos=GeoPoint(get_float(cfg, f"rsu.{i}.x"), get_float(cfg, f"rsu.{i}.y")),
                compute=get_float(cfg, _rsu_key(cfg, i, "compute")),
                max_load=get_float(cfg, _rsu_key(cfg, i, "max_load")),
                bw_up=get_float(cfg, _rsu_key(cfg, i, "bw_up")),
                bw_down=get_float(cfg, _rsu_key(cfg, i, "bw_down")),
                noise_power=get_float(cfg, _rsu_key(cfg, i, "noise")),
                backhaul=backhaul,
            )
        )

    if trajectories is None:
        path = get_str(cfg, "veh.traj_csv")
        with open(path, "r", encoding="utf-8") as fh:
            trajectories = read_trajectories_csv(fh)
    if not trajectories:
        raise ConfigError("no trajectories available for vehicles")

    vehicles = []
    for i in range(n_veh):
        result_bits = get_float(cfg, _veh_key(cfg, i, "result_bits"), 0.0)
        vehicles.append(
            VehicleSpec(
                id=i,
                tx_power=get_float(cfg, _veh_key(cfg, i, "power")),
                cycles_per_bit=get_float(cfg, _veh_key(cfg, i, "cycles_per_bit")),
                task_bits=np.array([get_float(cfg, _veh_key(cfg, i, "task_bits"))]),
                request_bits=get_float(cfg, _veh_key(cfg, i, "request_bits"), 0.0),
                result_bits=np.full(n_rsu, result_bits),
                trajectory=trajectories[i % len(trajectories)],
            )
        )

    channel = ChannelParams(
        gain_coeff=get_float(cfg, "channel.gain", 1.0),
        carrier=get_float(cfg, "channel.carrier", 2.4e9),
        light_speed=get_float(cfg, "channel.light_speed", 3.0e8),
    )
    try:
        env_cfg = EnvConfig(
            alpha=get_float(cfg, "env.alpha", 0.5),
            mu=get_float(cfg, "env.mu", 0.5),
            tau=get_float(cfg, "env.tau", 5e-8),
            lambda1=get_float(cfg, "env.lambda1", 1.0),
            lambda2=get_float(cfg, "env.lambda2", 1.0),
            slot_seconds=get_float(cfg, "env.slot_seconds", 1.0),
            horizon=get_int(cfg, "env.horizon", 100),
            reward_mode=get_str(cfg, "env.reward_mode", "latency"),
            background_mean=get_float(cfg, "env.background_mean", 0.0),
            background_unit=get_float(cfg, "env.background_unit", 5e8),
            init_load=get_float(cfg, "env.init_load", 0.0),
            warmup_slots=get_int(cfg, "env.warmup_slots", 32),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return PremigrationEnv(rsus, vehicles, channel, env_cfg)
