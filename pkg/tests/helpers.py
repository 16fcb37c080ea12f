"""Shared builders for environment and scenario tests."""

import numpy as np

from vtmigsim.envsim import ChannelParams, EnvConfig, PremigrationEnv, RsuSpec, VehicleSpec
from vtmigsim.roadnet import GeoPoint, RoadNetwork
from vtmigsim.trajgen import Trajectory, TrajectoryPoint

RSU_POSITIONS = [(0.0, 0.0), (1000.0, 0.0), (0.0, 1000.0), (1000.0, 1000.0)]


def line_trajectory(vid, x0, y0, vx, vy, duration=600.0, dt=10.0, t0=0.0):
    points = []
    t = t0
    while t <= t0 + duration:
        points.append(TrajectoryPoint(t, GeoPoint(x0 + vx * (t - t0), y0 + vy * (t - t0))))
        t += dt
    return Trajectory(vid, points)


def make_env(
    n_rsu=2,
    n_veh=1,
    compute=1e9,
    max_load=1e10,
    bw=1e6,
    noise=1e-9,
    backhaul=1e8,
    tx_power=0.1,
    cycles_per_bit=100.0,
    task_bits=1e6,
    request_bits=0.0,
    result_bits=0.0,
    trajectories=None,
    channel=None,
    **cfg_overrides,
):
    rsus = []
    for i in range(n_rsu):
        x, y = RSU_POSITIONS[i]
        rsus.append(
            RsuSpec(
                id=i,
                pos=GeoPoint(x, y),
                compute=compute,
                max_load=max_load,
                bw_up=bw,
                bw_down=bw,
                noise_power=noise,
                backhaul={j: backhaul for j in range(n_rsu) if j != i},
            )
        )
    if trajectories is None:
        trajectories = [
            line_trajectory(v, 50.0 + 30.0 * v, 10.0, 1.0, 0.0) for v in range(n_veh)
        ]
    vehicles = [
        VehicleSpec(
            id=v,
            tx_power=tx_power,
            cycles_per_bit=cycles_per_bit,
            task_bits=np.array([task_bits]),
            request_bits=request_bits,
            result_bits=np.full(n_rsu, result_bits),
            trajectory=trajectories[v],
        )
        for v in range(n_veh)
    ]
    defaults = dict(horizon=10, warmup_slots=0, slot_seconds=1.0)
    defaults.update(cfg_overrides)
    cfg = EnvConfig(**defaults)
    return PremigrationEnv(rsus, vehicles, channel or ChannelParams(), cfg)
