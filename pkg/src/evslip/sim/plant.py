"""One-dimensional grasp plant: gravity and load against two friction contacts."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

G = 9.81


@dataclass(frozen=True)
class PlantState:
    """Object held between two fingers.

    ``y_pos`` is the downward slip of the object relative to the fingers in
    metres and ``y_vel`` its rate. ``arm_accel`` is the upward acceleration
    of the hand, which adds to the load the contacts have to carry.
    """

    object_mass: float = 0.3
    load_mass: float = 0.0
    mu: float = 0.5
    grip_percent: float = 20.0
    newtons_per_percent: float = 0.2
    y_pos: float = 0.0
    y_vel: float = 0.0
    slipping: bool = False
    supported: bool = False
    arm_accel: float = 0.0
    dropped: bool = False

    @property
    def total_mass(self) -> float:
        return self.object_mass + self.load_mass

    @property
    def normal_force(self) -> float:
        """Normal force per contact, N."""
        return self.grip_percent * self.newtons_per_percent

    @property
    def friction_capacity(self) -> float:
        return 2.0 * self.mu * self.normal_force

    def required_grip_percent(self, g: float = G) -> float:
        """Smallest grip that holds the object at rest."""
        need = self.total_mass * (g + self.arm_accel) / (2.0 * self.mu * self.newtons_per_percent)
        return max(need, 0.0)


def step_plant(state: PlantState, dt: float, g: float = G, drop_distance: float = math.inf) -> PlantState:
    """Advance the contact dynamics by ``dt`` seconds (semi-implicit Euler).

    At rest the object stays put while its weight fits inside the friction
    cone of both contacts. Once moving, friction acts against the motion and
    the object stops as soon as the velocity would change sign.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.supported or state.dropped:
        return replace(state, y_vel=0.0, slipping=False) if state.y_vel or state.slipping else state

    m = state.total_mass
    weight = m * (g + state.arm_accel)
    cap = state.friction_capacity
    if state.y_vel <= 0.0 and weight <= cap:
        return replace(state, y_vel=0.0, slipping=False) if state.slipping else state

    a = (weight - cap) / m
    v = state.y_vel + a * dt
    if v <= 0.0:
        return replace(state, y_vel=0.0, slipping=False)
    y = state.y_pos + v * dt
    dropped = y >= drop_distance
    return replace(state, y_pos=y, y_vel=0.0 if dropped else v, slipping=not dropped, dropped=dropped)


def add_load(state: PlantState, mass: float, drop_height: float = 0.0, coupling: float = 1.0, g: float = G) -> PlantState:
    """Add ``mass`` to the object, dropped from ``drop_height`` metres.

    A dropped load hits the object with speed sqrt(2 g h); ``coupling`` is the
    share of that momentum that ends up in the object's slip (the rest is
    absorbed by finger and object compliance).
    """
    if mass < 0 or drop_height < 0 or not 0 <= coupling <= 1:
        raise ValueError("mass and drop height must be >= 0 and coupling in [0, 1]")
    new_mass = state.total_mass + mass
    dv = coupling * mass * math.sqrt(2.0 * g * drop_height) / new_mass
    v = state.y_vel + dv
    return replace(state, load_mass=state.load_mass + mass, y_vel=v, slipping=v > 0 or state.slipping)


class Actuator:
    """Gripper force response: dead time, first-order lag and optional overshoot.

    ``overshoot`` adds a decaying excess of ``overshoot * (new - old)`` on
    top of each commanded step.
    """

    def __init__(self, grip: float, tau_s: float = 0.03, delay_s: float = 0.0, overshoot: float = 0.0):
        if tau_s <= 0 or delay_s < 0 or overshoot < 0:
            raise ValueError("tau_s must be > 0, delay_s and overshoot >= 0")
        self.tau = tau_s
        self.delay = delay_s
        self.overshoot = overshoot
        self.grip = float(grip)
        self.target = float(grip)
        self._excess = 0.0
        self._pending: list[tuple[float, float]] = []

    def command(self, t: float, value: float) -> None:
        self._pending.append((t + self.delay, float(value)))

    def step(self, t: float, dt: float) -> float:
        """Advance to time ``t + dt`` and return the applied grip percent."""
        while self._pending and self._pending[0][0] <= t:
            _, value = self._pending.pop(0)
            self._excess = self.overshoot * max(value - self.target, 0.0)
            self.target = value
        decay = math.exp(-dt / self.tau)
        self._excess *= decay
        goal = min(self.target + self._excess, 100.0)
        self.grip = goal + (self.grip - goal) * decay
        return self.grip
