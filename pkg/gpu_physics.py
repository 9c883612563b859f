# Copyright 2025 DeepMind Technologies Limited.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Per-GPU power, frequency and thermal behavior."""

import dataclasses
import math
from typing import Sequence

import numpy as np


@dataclasses.dataclass(frozen=True)
class GpuModel:
  """Physical parameters of one GPU.

  Attributes:
    idle_power_w: Power drawn with no kernel running, at ambient temperature.
    power_coeff_m: Active power per GHz (P_active = M * f).
    thermal_resistance_k_per_w: Steady-state heating per watt.
    thermal_tau_s: First-order thermal time constant.
    ambient_c: Inlet temperature.
    throttle_start_c: Temperature above which the clock is throttled.
    throttle_slope_ghz_per_c: Clock lost per degree above throttle_start_c.
    f_min_ghz: Lowest clock.
    f_max_ghz: Highest clock.
    leakage_w_per_c: Static power gained per degree above ambient.
  """

  idle_power_w: float = 100.0
  power_coeff_m: float = 200.0
  thermal_resistance_k_per_w: float = 0.06
  thermal_tau_s: float = 20.0
  ambient_c: float = 30.0
  throttle_start_c: float = 95.0
  throttle_slope_ghz_per_c: float = 0.02
  f_min_ghz: float = 0.5
  f_max_ghz: float = 2.4
  leakage_w_per_c: float = 0.0

  def __post_init__(self):
    for field in dataclasses.fields(self):
      value = getattr(self, field.name)
      if field.name == 'leakage_w_per_c':
        if value < 0:
          raise ValueError(f'{field.name} must be >= 0, got {value}')
      elif value <= 0:
        raise ValueError(f'{field.name} must be positive, got {value}')
    if self.f_min_ghz >= self.f_max_ghz:
      raise ValueError('f_min_ghz must be below f_max_ghz')
    if self.throttle_start_c <= self.ambient_c:
      raise ValueError('throttle_start_c must be above ambient_c')

  def static_power_w(self, temperature_c: float) -> float:
    heat = max(0.0, temperature_c - self.ambient_c)
    return self.idle_power_w + self.leakage_w_per_c * heat

  def busy_power_w(self, frequency_ghz: float, temperature_c: float) -> float:
    return self.power_coeff_m * frequency_ghz + self.static_power_w(
        temperature_c
    )


@dataclasses.dataclass
class GpuState:
  temperature_c: float
  frequency_ghz: float
  power_w: float
  power_cap_w: float
  clock_ns: int = 0


def step_frequency(model: GpuModel, cap_w: float, temperature_c: float):
  """Clock allowed by the power cap and by thermal throttling."""
  if cap_w <= model.idle_power_w:
    raise ValueError(
        f'power cap {cap_w} W is not above idle power {model.idle_power_w} W'
    )
  f_cap = (cap_w - model.static_power_w(temperature_c)) / model.power_coeff_m
  f_thermal = model.f_max_ghz - model.throttle_slope_ghz_per_c * max(
      0.0, temperature_c - model.throttle_start_c
  )
  return float(np.clip(min(f_cap, f_thermal), model.f_min_ghz, model.f_max_ghz))


def step_thermal(
    model: GpuModel, state: GpuState, consumed_power_w: float, dt_s: float
) -> float:
  """First-order response of the temperature to dt_s of constant power."""
  if dt_s <= 0:
    raise ValueError(f'dt_s must be positive, got {dt_s}')
  target = model.ambient_c + model.thermal_resistance_k_per_w * consumed_power_w
  decay = math.exp(-dt_s / model.thermal_tau_s)
  return state.temperature_c + (target - state.temperature_c) * (1.0 - decay)


def steady_state_temperature(
    model: GpuModel, cap_w: float, busy_fraction: float = 1.0
) -> float:
  """Temperature at which heating balances the power drawn under a cap."""
  temperature = model.ambient_c
  for _ in range(200):
    frequency = step_frequency(model, cap_w, temperature)
    power = busy_fraction * model.busy_power_w(frequency, temperature) + (
        1.0 - busy_fraction
    ) * model.static_power_w(temperature)
    updated = model.ambient_c + model.thermal_resistance_k_per_w * power
    if abs(updated - temperature) < 1e-9:
      return updated
    temperature = updated
  return temperature


def overlapped_duration(
    start_ns: int,
    base_ns: float,
    active: Sequence[tuple[int, int]],
    overlap_penalty: float,
) -> tuple[int, int]:
  """Duration of a kernel slowed while collectives are active.

  Work done while a collective is active takes (1 + overlap_penalty) times
  longer. The active windows are sorted and disjoint, so the end time has a
  closed form per window.

  Args:
    start_ns: Kernel start.
    base_ns: Duration with no overlap.
    active: Sorted, disjoint [begin, end) windows of collective activity.
    overlap_penalty: Slowdown under full overlap.

  Returns:
    (duration_ns, overlap_ns), both integers, duration at least 1.
  """
  t = float(start_ns)
  work = float(base_ns)
  overlap = 0.0
  stretch = 1.0 + overlap_penalty
  for begin, end in active:
    if end <= t:
      continue
    if begin > t:
      if work <= begin - t:
        break
      work -= begin - t
      t = float(begin)
    capacity = (end - t) / stretch
    if work <= capacity:
      overlap += work * stretch
      t += work * stretch
      work = 0.0
      break
    work -= capacity
    overlap += end - t
    t = float(end)
  t += work
  duration = max(1, int(round(t - start_ns)))
  return duration, min(int(round(overlap)), duration)
