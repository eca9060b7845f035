#include "arbor/treegraph.hpp"

namespace arbor::treegraph {

int edge_dim(const EncodeOptions& opts) {
  return (opts.include_delta ? 3 : 0) + (opts.include_growth ? 1 : 0) +
         (opts.include_stiffness ? 1 : 0);
}

int growth_sign(const forest::TreeSpec& tree, int i, int j) {
  const auto d = tree.depths();
  if (d[j] > d[i]) return 1;
  if (d[j] < d[i]) return -1;
  return 0;
}

namespace {

// Shared edge construction (Eq. 6 attributes). Edges are emitted destination-
// major so incoming edges of each node are contiguous and in a canonical
// order.
void build_edges(const forest::TreeSpec& tree, const forest::Points& positions,
                 const EncodeOptions& opts, TreeGraph& g) {
  const int n = tree.node_count;
  const auto depths = tree.depths();

  // branch stiffness lookup between adjacent nodes; -1 if not adjacent
  auto branch_of = [&](int i, int j) -> int {
    if (tree.parent[j] == i) return j;
    if (tree.parent[i] == j) return i;
    return -1;
  };

  std::vector<std::pair<int, int>> pairs;
  if (opts.fully_connected) {
    pairs.reserve(static_cast<std::size_t>(n) * (n - 1));
    for (int dst = 0; dst < n; ++dst) {
      for (int src = 0; src < n; ++src) {
        if (src != dst) pairs.emplace_back(src, dst);
      }
    }
  } else {
    pairs.reserve(2 * (n - 1));
    for (int dst = 0; dst < n; ++dst) {
      for (int src = 0; src < n; ++src) {
        if (src != dst && branch_of(src, dst) >= 0) pairs.emplace_back(src, dst);
      }
    }
  }

  const int e = static_cast<int>(pairs.size());
  const int d_e = edge_dim(opts);
  g.edge_index.resize(e, 2);
  g.edge_attrs.resize(e, d_e);
  g.branch_mask.assign(e, false);
  for (int k = 0; k < e; ++k) {
    const auto [src, dst] = pairs[k];
    g.edge_index(k, 0) = src;
    g.edge_index(k, 1) = dst;
    const int b = branch_of(src, dst);
    g.branch_mask[k] = b >= 0;
    int col = 0;
    if (opts.include_delta) {
      g.edge_attrs.block<1, 3>(k, col) =
          positions.row(dst) - positions.row(src);
      col += 3;
    }
    if (opts.include_growth) {
      int v = 0;
      if (depths[dst] > depths[src]) v = 1;
      else if (depths[dst] < depths[src]) v = -1;
      g.edge_attrs(k, col++) = static_cast<double>(v);
    }
    if (opts.include_stiffness) {
      g.edge_attrs(k, col++) =
          b >= 0 ? tree.stiffness[b - 1] / opts.stiffness_scale : 0.0;
    }
  }
}

}  // namespace

TreeGraph encode_forward(const forest::TreeSpec& tree,
                         const pushsim::PushAction& action,
                         const EncodeOptions& opts) {
  if (action.contact_node <= 0 || action.contact_node >= tree.node_count) {
    throw ShapeMismatch("contact node out of range");
  }
  TreeGraph g;
  g.node_count = tree.node_count;
  g.global_attr = action.trajectory;
  g.node_attrs.setZero(tree.node_count, 1);
  g.node_attrs(action.contact_node, 0) = 1.0;
  build_edges(tree, tree.rest_positions, opts, g);
  return g;
}

TreeGraph encode_policy(const forest::Points& initial,
                        const forest::Points& target,
                        const forest::TreeSpec& tree,
                        const EncodeOptions& opts) {
  if (initial.rows() != tree.node_count || target.rows() != tree.node_count) {
    throw ShapeMismatch("state shape does not match tree");
  }
  TreeGraph g;
  g.node_count = tree.node_count;
  g.global_attr.resize(0);
  g.node_attrs = target - initial;
  build_edges(tree, initial, opts, g);
  return g;
}

}  // namespace arbor::treegraph
