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

"""Thermal straggler detection and power-cap mitigation for GPU nodes."""

# pylint: disable=unused-import
from analysis import identify_straggler
from analysis import lead_values
from analysis import overlap_profile
from backends import SimulatedBackend
from configuration import ConfigError
from configuration import resolve_config
from control import CapVector
from control import control_loop
from control import ControllerConfig
from control import convergence_metrics
from models import cost_savings
from models import predict_use_case
from simulation_utils import calibrate_default_node
from simulation_utils import generate_iteration_stream
from simulation_utils import NodeSimulator
from traces import load_trace
from traces import save_trace
from traces import TraceFormatError

__version__ = '0.1.0'
