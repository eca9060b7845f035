#pragma once

// Conversion of tree states and push actions into the attributed graphs the
// models consume. Inputs are preprocessed into a fully connected directed
// graph; physical structure survives through the stiffness attribute (zero
// on non-branch edges) and the growth-direction sign.

#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "arbor/forest.hpp"
#include "arbor/pushsim.hpp"

namespace arbor::treegraph {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TreeGraph {
  Eigen::VectorXd global_attr;              // trajectory, or empty for policy
  Eigen::MatrixXd node_attrs;               // N x d_n
  Eigen::Matrix<int, Eigen::Dynamic, 2> edge_index;  // E x 2, (src, dst)
  Eigen::MatrixXd edge_attrs;               // E x d_e
  std::vector<bool> branch_mask;            // per edge: physical adjacency
  int node_count = 0;
};

/// Edge-attribute layout is [p_j - p_i, v_ij, K_s] with columns dropped per
/// flags (ablation variants). fully_connected=false keeps only the 2(N-1)
/// branch edges.
struct EncodeOptions {
  bool fully_connected = true;
  bool include_delta = true;      // p_j - p_i
  bool include_growth = true;     // v_ij
  bool include_stiffness = true;  // K_s
  double stiffness_scale = 1.0;   // dataset-level divisor for K_s
};

int edge_dim(const EncodeOptions& opts);

/// +1 when j is deeper than i, -1 when shallower, 0 at equal depth. On
/// branch edges this is the root-to-leaf growth direction.
int growth_sign(const forest::TreeSpec& tree, int i, int j);

/// Forward-model input: g = trajectory, n_j = contact flag, e_ij as above,
/// at the given node positions (rest pose for fresh pushes).
TreeGraph encode_forward(const forest::TreeSpec& tree,
                         const pushsim::PushAction& action,
                         const EncodeOptions& opts = {});

/// Contact-policy input: empty g, n_j = target - initial per node, edges
/// identical to encode_forward at the initial positions.
TreeGraph encode_policy(const forest::Points& initial,
                        const forest::Points& target,
                        const forest::TreeSpec& tree,
                        const EncodeOptions& opts = {});

}  // namespace arbor::treegraph
