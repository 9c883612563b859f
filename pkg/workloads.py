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

"""Synthetic FSDP-shaped training workloads.

Each transformer layer runs seven kernels forward and the same seven in
reverse order backward. Collectives are issued when the kernel before their
anchor completes: an all-gather before the first GEMM of a layer, and in the
backward pass a reduce-scatter with the next all-gather queued behind it.
"""

import dataclasses
import re
from typing import Any, Optional

FORWARD_OPS = (
    'qkv_ip', 'attn_fa', 'attn_op', 'vec', 'mlp_gp', 'mlp_up', 'mlp_dp'
)
BACKWARD_OPS = tuple(reversed(FORWARD_OPS))
GEMM_OPS = ('qkv_ip', 'attn_op', 'mlp_gp', 'mlp_up', 'mlp_dp')
BACKWARD_WORK_FACTOR = 2.0

# Forward work in giga-cycles per op at b2s4 and bf16.
MODEL_OP_WORK = {
    'llama3.1-8b': {
        'qkv_ip': 0.012,
        'attn_fa': 0.016,
        'attn_op': 0.010,
        'vec': 0.002,
        'mlp_gp': 0.020,
        'mlp_up': 0.020,
        'mlp_dp': 0.020,
    },
    'mistral-7b': {
        'qkv_ip': 0.012,
        'attn_fa': 0.013,
        'attn_op': 0.010,
        'vec': 0.002,
        'mlp_gp': 0.021,
        'mlp_up': 0.021,
        'mlp_dp': 0.021,
    },
}

# (name, phase, anchor op, duration in ms) per FSDP version.
FSDP_COLLECTIVES = {
    'v2': (
        ('ag', 'forward', 'qkv_ip', 12.0),
        ('rs', 'backward', 'mlp_dp', 22.0),
        ('ag', 'backward', 'mlp_up', 11.4),
    ),
    'v1': (
        ('ag', 'forward', 'qkv_ip', 15.0),
        ('rs', 'backward', 'mlp_dp', 27.5),
        ('ag', 'backward', 'mlp_dp', 14.25),
    ),
}

PRECISION_GEMM_FACTOR = {'bf16': 1.0, 'fp8': 0.5}
_BATCH_SEQ = re.compile(r'^b(\d+)s(\d+)$')


@dataclasses.dataclass(frozen=True)
class KernelSpec:
  """One position of the per-iteration kernel sequence."""

  name: str
  layer: int
  phase: str
  kind: str
  work_gcycles: float = 0.0
  duration_ns: int = 0

  @property
  def is_communication(self) -> bool:
    return self.kind == 'communication'


@dataclasses.dataclass(frozen=True)
class CollectiveSpec:
  name: str
  phase: str
  anchor: str
  duration_ns: int


@dataclasses.dataclass(frozen=True)
class WorkloadSpec:
  """The kernel sequence every GPU executes in one iteration."""

  layers: int
  kernels: tuple[KernelSpec, ...]
  overlap_penalty: float = 0.19
  descriptor: Optional[dict[str, Any]] = None

  def __post_init__(self):
    if self.layers < 1:
      raise ValueError('a workload needs at least one layer')
    if not 0 <= self.overlap_penalty <= 1:
      raise ValueError(
          f'overlap_penalty must be in [0, 1], got {self.overlap_penalty}'
      )
    for kernel in self.kernels:
      if kernel.is_communication and kernel.duration_ns <= 0:
        raise ValueError(f'collective {kernel.name} needs a positive duration')
      if not kernel.is_communication and kernel.work_gcycles <= 0:
        raise ValueError(f'kernel {kernel.name} needs positive work')

  @property
  def compute_kernels(self) -> int:
    return sum(1 for k in self.kernels if not k.is_communication)

  def describe(self) -> dict[str, Any]:
    description = dict(self.descriptor or {})
    description.update({
        'layers': self.layers,
        'kernels_per_iteration': len(self.kernels),
        'overlap_penalty': self.overlap_penalty,
    })
    return description


def make_workload(
    layers: int,
    op_work: dict[str, float],
    collectives: tuple[CollectiveSpec, ...],
    overlap_penalty: float = 0.19,
    descriptor: Optional[dict[str, Any]] = None,
) -> WorkloadSpec:
  """Lays out forward then backward kernels with collectives at anchors."""
  for collective in collectives:
    if collective.anchor not in FORWARD_OPS:
      raise ValueError(
          f'collective {collective.name} anchors on unknown op'
          f' {collective.anchor!r}'
      )
  missing = set(FORWARD_OPS) - set(op_work)
  if missing:
    raise ValueError(f'op work missing for {sorted(missing)}')

  kernels = []
  for phase, ops, layer_order, factor in (
      ('forward', FORWARD_OPS, range(layers), 1.0),
      ('backward', BACKWARD_OPS, reversed(range(layers)),
       BACKWARD_WORK_FACTOR),
  ):
    prefix = phase[0]
    for layer in layer_order:
      for op in ops:
        for c in collectives:
          if c.phase == phase and c.anchor == op:
            kernels.append(KernelSpec(
                name=f'{prefix}_{c.name}',
                layer=layer,
                phase=phase,
                kind='communication',
                duration_ns=c.duration_ns,
            ))
        kernels.append(KernelSpec(
            name=f'{prefix}_{op}',
            layer=layer,
            phase=phase,
            kind='vector' if op == 'vec' else 'compute',
            work_gcycles=op_work[op] * factor,
        ))
  return WorkloadSpec(
      layers=layers,
      kernels=tuple(kernels),
      overlap_penalty=overlap_penalty,
      descriptor=descriptor,
  )


def batch_seq_scale(batch_seq: str) -> tuple[float, float]:
  """Work scale of GEMMs and of attention relative to b2s4."""
  match = _BATCH_SEQ.match(batch_seq)
  if not match:
    raise ValueError(f'batch_seq must look like b2s4, got {batch_seq!r}')
  batch, seq = int(match.group(1)), int(match.group(2))
  linear = batch * seq / 8.0
  return linear, linear * seq / 4.0


def build_workload(
    model: str = 'llama3.1-8b',
    fsdp: str = 'v2',
    precision: str = 'bf16',
    batch_seq: str = 'b2s4',
    layers: int = 8,
    overlap_penalty: float = 0.19,
) -> WorkloadSpec:
  if model not in MODEL_OP_WORK:
    raise ValueError(f'unknown model {model!r}')
  if fsdp not in FSDP_COLLECTIVES:
    raise ValueError(f'unknown fsdp version {fsdp!r}')
  if precision not in PRECISION_GEMM_FACTOR:
    raise ValueError(f'unknown precision {precision!r}')
  linear, attention = batch_seq_scale(batch_seq)

  op_work = {}
  for op, work in MODEL_OP_WORK[model].items():
    if op == 'attn_fa':
      op_work[op] = work * attention
    elif op in GEMM_OPS:
      op_work[op] = work * linear * PRECISION_GEMM_FACTOR[precision]
    else:
      op_work[op] = work * linear
  collectives = tuple(
      CollectiveSpec(name, phase, anchor, int(round(ms * 1e6)))
      for name, phase, anchor, ms in FSDP_COLLECTIVES[fsdp]
  )
  return make_workload(
      layers,
      op_work,
      collectives,
      overlap_penalty,
      descriptor={
          'model': model,
          'fsdp': fsdp,
          'precision': precision,
          'batch_seq': batch_seq,
      },
  )
