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

import pytest

import workloads


def _work(workload, name, layer=0):
  for kernel in workload.kernels:
    if kernel.name == name and kernel.layer == layer:
      return kernel.work_gcycles
  raise KeyError(name)


def test_default_workload_shape():
  workload = workloads.build_workload()

  assert workload.layers == 8
  assert workload.compute_kernels == 8 * 7 * 2
  assert len(workload.kernels) == 8 * 7 * 2 + 8 * 3
  assert workload.overlap_penalty == 0.19


def test_forward_layer_starts_with_prefetch():
  workload = workloads.build_workload(layers=2)
  names = [k.name for k in workload.kernels[:9]]

  assert names == ['f_ag', 'f_qkv_ip', 'f_attn_fa', 'f_attn_op', 'f_vec',
                   'f_mlp_gp', 'f_mlp_up', 'f_mlp_dp', 'f_ag']


def test_backward_layer_issues_reduce_scatter_then_all_gather():
  workload = workloads.build_workload(layers=1)
  backward = [k.name for k in workload.kernels if k.phase == 'backward']

  assert backward[:4] == ['b_rs', 'b_mlp_dp', 'b_ag', 'b_mlp_up']
  assert all(k.layer == 0 for k in workload.kernels)


def test_backward_runs_layers_in_reverse():
  workload = workloads.build_workload(layers=3)
  layers = [k.layer for k in workload.kernels
            if k.phase == 'backward' and k.name == 'b_mlp_dp']

  assert layers == [2, 1, 0]


def test_backward_work_is_doubled():
  workload = workloads.build_workload(layers=1)

  assert _work(workload, 'b_mlp_up') == pytest.approx(
      2 * _work(workload, 'f_mlp_up')
  )


def test_fp8_halves_gemm_work_only():
  bf16 = workloads.build_workload(layers=1)
  fp8 = workloads.build_workload(layers=1, precision='fp8')

  assert _work(fp8, 'f_qkv_ip') == pytest.approx(_work(bf16, 'f_qkv_ip') / 2)
  assert _work(fp8, 'f_attn_fa') == _work(bf16, 'f_attn_fa')
  assert _work(fp8, 'f_vec') == _work(bf16, 'f_vec')


def test_batch_seq_scale():
  assert workloads.batch_seq_scale('b2s4') == (1.0, 1.0)
  assert workloads.batch_seq_scale('b4s4') == (2.0, 2.0)
  assert workloads.batch_seq_scale('b2s8') == (2.0, 4.0)
  with pytest.raises(ValueError):
    workloads.batch_seq_scale('2x4')


def test_fsdp_v1_queues_both_collectives_before_the_first_kernel():
  v1 = workloads.build_workload(layers=1, fsdp='v1')
  backward = [k.name for k in v1.kernels if k.phase == 'backward']

  assert backward[:3] == ['b_rs', 'b_ag', 'b_mlp_dp']


def test_collective_durations():
  workload = workloads.build_workload(layers=1)
  durations = {k.name: k.duration_ns for k in workload.kernels
               if k.is_communication}

  assert durations == {'f_ag': 12_000_000, 'b_rs': 22_000_000,
                       'b_ag': 11_400_000}


@pytest.mark.parametrize('kwargs', [
    {'model': 'gpt-2'},
    {'fsdp': 'v3'},
    {'precision': 'int4'},
    {'batch_seq': 'b2'},
])
def test_unknown_workload_knobs(kwargs):
  with pytest.raises(ValueError):
    workloads.build_workload(**kwargs)


def test_workload_validation():
  op_work = dict(workloads.MODEL_OP_WORK['llama3.1-8b'])
  with pytest.raises(ValueError, match='anchors'):
    workloads.make_workload(
        1, op_work, (workloads.CollectiveSpec('ag', 'forward', 'lm_head', 1),)
    )
  with pytest.raises(ValueError, match='overlap_penalty'):
    workloads.make_workload(1, op_work, (), overlap_penalty=1.5)
  del op_work['vec']
  with pytest.raises(ValueError, match='missing'):
    workloads.make_workload(1, op_work, ())


def test_describe_carries_descriptor():
  description = workloads.build_workload(model='mistral-7b').describe()

  assert description['model'] == 'mistral-7b'
  assert description['kernels_per_iteration'] == 136
