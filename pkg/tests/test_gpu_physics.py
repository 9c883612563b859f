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

import math

import pytest

import gpu_physics
from gpu_physics import GpuModel
from gpu_physics import GpuState


def _state(temperature_c):
  return GpuState(temperature_c=temperature_c, frequency_ghz=2.0,
                  power_w=100.0, power_cap_w=700.0)


def test_unconstrained_gpu_runs_at_max_clock():
  model = GpuModel()

  assert gpu_physics.step_frequency(model, 10_000, model.ambient_c) == 2.4


def test_cap_limited_clock():
  model = GpuModel(power_coeff_m=100.0, idle_power_w=150.0)

  assert gpu_physics.step_frequency(model, 350, 40.0) == pytest.approx(2.0)


def test_thermal_throttling():
  model = GpuModel()

  frequency = gpu_physics.step_frequency(model, 10_000, 105.0)

  assert frequency == pytest.approx(2.4 - 0.2)


def test_clock_is_clamped_to_minimum():
  model = GpuModel()

  assert gpu_physics.step_frequency(model, 101.0, 30.0) == model.f_min_ghz


def test_cap_must_exceed_idle_power():
  with pytest.raises(ValueError):
    gpu_physics.step_frequency(GpuModel(), 100.0, 30.0)


def test_leakage_slows_hot_gpus_under_the_same_cap():
  model = GpuModel(leakage_w_per_c=4.0)

  cool = gpu_physics.step_frequency(model, 700, 70.0)
  hot = gpu_physics.step_frequency(model, 700, 80.0)

  assert hot == pytest.approx(cool - 40.0 / model.power_coeff_m)


def test_raising_the_cap_never_lowers_the_clock():
  model = GpuModel(leakage_w_per_c=4.0)
  previous = 0.0
  for cap in range(300, 751, 10):
    frequency = gpu_physics.step_frequency(model, cap, 75.0)
    assert frequency >= previous
    previous = frequency


def test_thermal_step_example():
  model = GpuModel(thermal_resistance_k_per_w=0.05, thermal_tau_s=60.0)

  temperature = gpu_physics.step_thermal(model, _state(30.0), 700.0, 60.0)

  assert temperature == pytest.approx(30 + 35 * (1 - math.exp(-1)))
  assert temperature == pytest.approx(52.12, abs=0.01)


def test_thermal_fixed_point_and_limit():
  model = GpuModel(thermal_resistance_k_per_w=0.05)
  steady = model.ambient_c + 0.05 * 500.0

  assert gpu_physics.step_thermal(
      model, _state(steady), 500.0, 0.1
  ) == pytest.approx(steady)
  assert gpu_physics.step_thermal(
      model, _state(30.0), 500.0, 1e6
  ) == pytest.approx(steady)


def test_thermal_step_needs_positive_dt():
  with pytest.raises(ValueError):
    gpu_physics.step_thermal(GpuModel(), _state(30.0), 500.0, 0.0)


def test_steady_state_balances_heating():
  model = GpuModel(leakage_w_per_c=4.0, thermal_resistance_k_per_w=0.06)

  temperature = gpu_physics.steady_state_temperature(model, 700.0)

  frequency = gpu_physics.step_frequency(model, 700.0, temperature)
  power = model.busy_power_w(frequency, temperature)
  assert power == pytest.approx(700.0)
  assert temperature == pytest.approx(model.ambient_c + 0.06 * 700.0)


def test_model_validation():
  with pytest.raises(ValueError):
    GpuModel(f_min_ghz=3.0)
  with pytest.raises(ValueError):
    GpuModel(throttle_start_c=20.0)
  with pytest.raises(ValueError):
    GpuModel(thermal_tau_s=0.0)
  with pytest.raises(ValueError):
    GpuModel(leakage_w_per_c=-1.0)


def test_duration_without_communication():
  assert gpu_physics.overlapped_duration(1000, 500.0, [], 0.19) == (500, 0)


def test_fully_overlapped_kernel_is_stretched():
  duration, overlap = gpu_physics.overlapped_duration(
      0, 1000.0, [(0, 10_000)], 0.2
  )

  assert duration == 1200
  assert overlap == 1200


def test_partially_overlapped_kernel():
  # 200 ns alone, 200 ns under communication, then the rest alone.
  duration, overlap = gpu_physics.overlapped_duration(
      0, 1000.0, [(200, 400)], 0.5
  )

  assert overlap == 200
  assert duration == round(1000 + 0.5 * 200 / 1.5)


def test_window_after_kernel_is_ignored():
  assert gpu_physics.overlapped_duration(
      0, 100.0, [(500, 900)], 0.19
  ) == (100, 0)


def test_zero_penalty_keeps_duration():
  duration, overlap = gpu_physics.overlapped_duration(
      0, 1000.0, [(100, 300), (600, 700)], 0.0
  )

  assert duration == 1000
  assert overlap == 300
