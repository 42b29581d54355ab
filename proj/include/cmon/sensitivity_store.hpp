/*
 Copyright 2026 The cmon-rti Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef CMON_SENSITIVITY_STORE_HPP
#define CMON_SENSITIVITY_STORE_HPP

#include <vector>

#include "cmon/integrator.hpp"
#include "cmon/types.hpp"

namespace cmon {

/**
 * @brief Per-node Jacobian blocks plus the previous-instant caches used by
 * the nonlinearity measures.
 *
 * All caches refer to the same previous instant i-1:
 *  - prev_phi[k]      integrator output at the node of instant i-1
 *  - prev_nodes[k]    node value w_k at instant i-1
 *  - prev_dir_pri[k]  blocks[k] * (w_k^i - w_k^{i-1})
 *  - prev_dir_dual[k] dlambda_{k+1}^T * blocks[k]
 * `primed` is false until one instant has filled them.
 */
struct SensitivityStore {
  std::vector<SensitivityBlock> blocks;
  std::vector<Vector> prev_phi;
  std::vector<Vector> prev_nodes;
  std::vector<Vector> prev_dir_pri;
  std::vector<RowVector> prev_dir_dual;
  bool primed = false;

  static SensitivityStore empty(int N, int nx, int nu) {
    SensitivityStore s;
    const auto n = static_cast<std::size_t>(N);
    s.blocks.assign(n, SensitivityBlock{Matrix::Zero(nx, nx + nu), true});
    s.prev_phi.assign(n, Vector::Zero(nx));
    s.prev_nodes.assign(n, Vector::Zero(nx + nu));
    s.prev_dir_pri.assign(n, Vector::Zero(nx));
    s.prev_dir_dual.assign(n, RowVector::Zero(nx + nu));
    return s;
  }

  int size() const { return static_cast<int>(blocks.size()); }

  /// Every block has been evaluated at least once.
  bool filled = false;
};

}  // namespace cmon

#endif  // CMON_SENSITIVITY_STORE_HPP
