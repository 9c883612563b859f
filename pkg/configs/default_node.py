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

"""Default 8-GPU node: one dominant straggler, evaluation defaults."""

node_config = {
    "node": "node-1",
    "model": "llama3.1-8b",
    "fsdp": "v2",
    "precision": "bf16",
    "batch_seq": "b2s4",
    "iterations": 1000,
    "sampling_period": 10,
    "warm_up": 50,
    "window_size": 3,
    "aggregation": "sum",
    "max_adjustment": 15,
    "scale": "global",
    "power_cap": 700,
    "power_budget": 20,
    "use_case": "GPU-Red",
    "seed": 0,
    "gpu_count": 8,
    "layers": 8,
    "tdp": 750,
}
