"""Self-describing checkpoint files.

A checkpoint is a NumPy ``.npz`` archive with the keys

    theta    flat network parameters [W1 row-major, b1, w2, b2]
    width    hidden-layer width
    seed     RNG seed the run was started from
    period   oscillation period the mode was trained for, s
    q0       initial configuration of the mode, rad
    pendulum physical constants [m, d, g, k, b]

so a stored run can be re-simulated without its original config file.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import PendulumParams
from .potential import PotentialNet


@dataclass
class Checkpoint:
    net: PotentialNet
    pendulum: PendulumParams
    q0: np.ndarray
    period: float
    seed: int


def save_checkpoint(path, net, pendulum, q0, period, seed):
    np.savez(
        path,
        theta=net.to_flat(),
        width=net.width,
        seed=int(seed),
        period=float(period),
        q0=np.asarray(q0, dtype=float),
        pendulum=np.array(
            [pendulum.m, pendulum.d, pendulum.g, pendulum.k, pendulum.b]
        ),
    )


def load_checkpoint(path):
    with np.load(path) as data:
        width = int(data["width"])
        net = PotentialNet.from_flat(data["theta"], width)
        m, d, g, k, b = (float(v) for v in data["pendulum"])
        return Checkpoint(
            net=net,
            pendulum=PendulumParams(m=m, d=d, g=g, k=k, b=b),
            q0=np.array(data["q0"], dtype=float),
            period=float(data["period"]),
            seed=int(data["seed"]),
        )
