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
"""Power management backends the control loop talks to."""

import logging
import time
from typing import Any, Callable, Optional

import numpy as np

from simulation_utils import NodeConfig
from simulation_utils import NodeSimulator
from simulation_utils import SimulationError
from traces import IterationTrace

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
  """A backend call failed; the call may succeed when retried."""


class CapRejectedError(RuntimeError):
  """The backend refused a cap vector."""


class PowerBackend:
  """Synchronous request/response interface to a node's GPUs."""

  gpu_count: int = 0

  def sample_iteration(self) -> IterationTrace:
    raise NotImplementedError

  def set_caps(self, caps) -> bool:
    raise NotImplementedError

  def read_power(self) -> np.ndarray:
    raise NotImplementedError


class SimulatedBackend(PowerBackend):
  """Drives a NodeSimulator, one iteration per sample request."""

  def __init__(
      self,
      config: NodeConfig,
      tdp_w: float = 750.0,
      min_cap_w: Optional[float] = None,
  ):
    self.simulator = NodeSimulator(config)
    self.gpu_count = config.gpu_count
    self.tdp_w = tdp_w
    self.min_cap_w = min_cap_w
    self.last_trace: Optional[IterationTrace] = None

  def sample_iteration(self) -> IterationTrace:
    try:
      self.last_trace = self.simulator.run_iteration()
    except SimulationError as e:
      raise BackendError(f'simulated iteration failed: {e}') from e
    return self.last_trace

  def set_caps(self, caps) -> bool:
    values = np.asarray(getattr(caps, 'caps', caps), dtype=float)
    if values.shape != (self.gpu_count,):
      raise CapRejectedError(
          f'expected {self.gpu_count} caps, got {values.shape}'
      )
    floors = [
        model.idle_power_w if self.min_cap_w is None else self.min_cap_w
        for model in self.simulator.config.gpus
    ]
    for g, (cap, floor) in enumerate(zip(values, floors)):
      if cap > self.tdp_w or cap <= floor:
        raise CapRejectedError(
            f'GPU {g}: cap {cap} W outside ({floor}, {self.tdp_w}] W'
        )
    self.simulator.set_caps(np.floor(values + 1e-9).tolist())
    return True

  def read_power(self) -> np.ndarray:
    """Per-GPU mean power over the last iteration, in watts."""
    if self.last_trace is None:
      return np.array([g.power_w for g in self.simulator.state.gpus])
    power = []
    for g, samples in enumerate(self.last_trace.telemetry):
      if samples:
        power.append(np.mean([s.power_mW for s in samples]) / 1e3)
      else:
        power.append(self.simulator.state.gpus[g].power_w)
    return np.array(power)


class HardwareBackend(PowerBackend):
  """Placeholder for driver-backed power management."""

  def __init__(self, *args, **kwargs):
    del args, kwargs
    raise BackendError('hardware power management is not available')


BACKEND_REGISTRY = {
    'simulated': SimulatedBackend,
    'hardware': HardwareBackend,
}


def make_backend(name: str, *args, **kwargs) -> PowerBackend:
  if name not in BACKEND_REGISTRY:
    raise ValueError(
        f'unknown backend {name!r}, expected one of {list(BACKEND_REGISTRY)}'
    )
  return BACKEND_REGISTRY[name](*args, **kwargs)


def call_with_retries(
    func: Callable[..., Any],
    *args,
    max_attempts: int = 3,
    wait_time: float = 0.0,
    **kwargs,
):
  """Calls func, retrying BackendError up to max_attempts times."""
  attempts = 0
  while True:
    try:
      return func(*args, **kwargs)
    except BackendError as e:
      attempts += 1
      if attempts >= max_attempts:
        raise RuntimeError(
            f'Backend call failed after {max_attempts} attempts: {e}'
        ) from e
      logger.warning(
          'Attempt %d failed: %s. Retrying after %s seconds...',
          attempts, e, wait_time,
      )
      time.sleep(wait_time)
