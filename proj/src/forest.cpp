#include "arbor/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "arbor/jsonio.hpp"
#include "arbor/rng.hpp"

namespace arbor::forest {

std::vector<int> TreeSpec::depths() const {
  std::vector<int> d(node_count, 0);
  for (int j = 1; j < node_count; ++j) d[j] = d[parent[j]] + 1;
  return d;
}

std::vector<std::vector<int>> TreeSpec::children() const {
  std::vector<std::vector<int>> ch(node_count);
  for (int j = 1; j < node_count; ++j) ch[parent[j]].push_back(j);
  return ch;
}

bool operator==(const TreeSpec& a, const TreeSpec& b) {
  return a.node_count == b.node_count && a.parent == b.parent &&
         a.rest_positions.rows() == b.rest_positions.rows() &&
         (a.rest_positions.array() == b.rest_positions.array()).all() &&
         (a.radius.array() == b.radius.array()).all() &&
         (a.length.array() == b.length.array()).all() &&
         (a.stiffness.array() == b.stiffness.array()).all() &&
         (a.damping.array() == b.damping.array()).all() &&
         a.elastic_modulus == b.elastic_modulus && a.seed == b.seed;
}

double stiffness_from_beam(double elastic_modulus, double radius,
                           double length) {
  if (!(elastic_modulus > 0.0)) {
    throw DegenerateGeometry("elastic modulus must be > 0");
  }
  if (!(radius > 0.0)) throw DegenerateGeometry("branch radius must be > 0");
  if (!(length > 0.0)) throw DegenerateGeometry("branch length must be > 0");
  const double r2 = radius * radius;
  return elastic_modulus * std::numbers::pi * r2 * r2 / (2.0 * length);
}

double damping_from_stiffness(double stiffness) {
  if (!(stiffness > 0.0)) throw DegenerateGeometry("stiffness must be > 0");
  return stiffness / 10.0;
}

namespace {

struct Skeleton {
  std::vector<Eigen::Vector3d> pos;
  std::vector<int> parent;
};

// One space-colonization growth attempt. Returns nothing if growth stalls
// before reaching node_count.
std::optional<Skeleton> grow_skeleton(Rng& rng, int node_count,
                                      const ScaParams& p) {
  std::vector<Eigen::Vector3d> attractors;
  attractors.reserve(p.attraction_points);
  for (int i = 0; i < p.attraction_points; ++i) {
    Eigen::Vector3d q = rng.in_unit_ball();
    q.z() = std::abs(q.z());  // upper half-ball: hemispherical crown
    attractors.push_back(p.crown_center + p.crown_radius * q);
  }
  std::vector<bool> alive(attractors.size(), true);

  Skeleton sk;
  sk.pos.push_back(Eigen::Vector3d::Zero());
  sk.parent.push_back(-1);

  const double infl2 = p.influence_radius * p.influence_radius;
  const double kill2 = p.kill_radius * p.kill_radius;
  const double dedupe2 = 0.25 * p.step_length * p.step_length;

  auto kill_near = [&](const Eigen::Vector3d& q) {
    for (std::size_t a = 0; a < attractors.size(); ++a) {
      if (alive[a] && (attractors[a] - q).squaredNorm() < kill2) {
        alive[a] = false;
      }
    }
  };
  kill_near(sk.pos[0]);

  for (int iter = 0;
       iter < p.max_iterations && static_cast<int>(sk.pos.size()) < node_count;
       ++iter) {
    const int n = static_cast<int>(sk.pos.size());

    // Assign each live attractor to its nearest node, if within influence.
    std::vector<Eigen::Vector3d> dir(n, Eigen::Vector3d::Zero());
    std::vector<int> hits(n, 0);
    bool any_influence = false;
    double best_d2 = std::numeric_limits<double>::max();
    int best_node = -1;
    std::size_t best_attr = 0;
    for (std::size_t a = 0; a < attractors.size(); ++a) {
      if (!alive[a]) continue;
      double nearest = std::numeric_limits<double>::max();
      int who = -1;
      for (int v = 0; v < n; ++v) {
        const double d2 = (attractors[a] - sk.pos[v]).squaredNorm();
        if (d2 < nearest) {
          nearest = d2;
          who = v;
        }
      }
      if (nearest < best_d2) {
        best_d2 = nearest;
        best_node = who;
        best_attr = a;
      }
      if (nearest <= infl2) {
        const Eigen::Vector3d u = attractors[a] - sk.pos[who];
        dir[who] += u / std::sqrt(u.squaredNorm());
        hits[who]++;
        any_influence = true;
      }
    }

    if (!any_influence) {
      // Trunk phase: extend the nearest node toward the nearest attractor.
      if (best_node < 0) return std::nullopt;  // attractor set exhausted
      const Eigen::Vector3d u = attractors[best_attr] - sk.pos[best_node];
      const double un = std::sqrt(u.squaredNorm());
      if (un < 1e-12) return std::nullopt;
      sk.pos.push_back(sk.pos[best_node] + (p.step_length / un) * u);
      sk.parent.push_back(best_node);
      kill_near(sk.pos.back());
      continue;
    }

    bool added = false;
    for (int v = 0; v < n && static_cast<int>(sk.pos.size()) < node_count;
         ++v) {
      if (hits[v] == 0) continue;
      const double dn = std::sqrt(dir[v].squaredNorm());
      if (dn < 1e-9) continue;  // attractors cancel out
      const Eigen::Vector3d cand = sk.pos[v] + (p.step_length / dn) * dir[v];
      bool stacked = false;
      for (const auto& q : sk.pos) {
        if ((q - cand).squaredNorm() < dedupe2) {
          stacked = true;
          break;
        }
      }
      if (stacked) continue;
      sk.pos.push_back(cand);
      sk.parent.push_back(v);
      kill_near(cand);
      added = true;
    }
    if (!added) return std::nullopt;  // influenced but fully blocked
  }

  if (static_cast<int>(sk.pos.size()) != node_count) return std::nullopt;
  return sk;
}

TreeSpec finalize(std::uint64_t seed, const Skeleton& sk, const ScaParams& p) {
  TreeSpec t;
  t.node_count = static_cast<int>(sk.pos.size());
  t.parent = sk.parent;
  t.rest_positions.resize(t.node_count, 3);
  for (int j = 0; j < t.node_count; ++j) {
    t.rest_positions.row(j) = sk.pos[j].transpose();
  }
  t.elastic_modulus = p.elastic_modulus;
  t.seed = seed;

  const int nb = t.branch_count();
  t.radius.resize(nb);
  t.length.resize(nb);
  t.stiffness.resize(nb);
  t.damping.resize(nb);

  const auto ch = t.children();
  // Children always carry a larger index, so a reverse sweep sees every
  // child branch before its parent. Pipe model: r_parent^4 = sum r_child^4.
  for (int j = t.node_count - 1; j >= 1; --j) {
    double r;
    if (ch[j].empty()) {
      r = p.leaf_radius;
    } else {
      double sum4 = 0.0;
      double rmax = 0.0;
      for (int c : ch[j]) {
        const double rc = t.radius[c - 1];
        sum4 += rc * rc * rc * rc;
        rmax = std::max(rmax, rc);
      }
      r = std::max(std::sqrt(std::sqrt(sum4)), rmax);
    }
    t.radius[j - 1] = r;
    t.length[j - 1] =
        (t.rest_positions.row(j) - t.rest_positions.row(t.parent[j])).norm();
    t.stiffness[j - 1] =
        stiffness_from_beam(t.elastic_modulus, r, t.length[j - 1]);
    t.damping[j - 1] = damping_from_stiffness(t.stiffness[j - 1]);
  }
  return t;
}

}  // namespace

TreeSpec generate_tree(std::uint64_t seed, int node_count,
                       const ScaParams& params) {
  if (node_count < 2) {
    throw GenerationStalled("node_count must be >= 2, got " +
                            std::to_string(node_count));
  }
  if (!(params.step_length > 0.0) || !(params.influence_radius > 0.0) ||
      !(params.kill_radius > 0.0) || params.attraction_points < 1) {
    throw GenerationStalled("SCA parameters must be positive");
  }

  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    Rng rng = Rng::stream(seed, 0x5ca, static_cast<std::uint64_t>(attempt));
    auto sk = grow_skeleton(rng, node_count, params);
    if (!sk) continue;
    const double h =
        std::max_element(sk->pos.begin(), sk->pos.end(),
                         [](const auto& a, const auto& b) {
                           return a.z() < b.z();
                         })
            ->z();
    if (h < params.height_min || h > params.height_max) continue;
    TreeSpec t = finalize(seed, *sk, params);
    validate_tree(t);
    return t;
  }
  throw GenerationStalled(
      "SCA could not produce a " + std::to_string(node_count) +
      "-node tree within height band (seed=" + std::to_string(seed) + ")");
}

void validate_tree(const TreeSpec& t) {
  if (t.node_count < 2) throw MalformedTreeFile("node_count: must be >= 2");
  if (static_cast<int>(t.parent.size()) != t.node_count) {
    throw MalformedTreeFile("parent: wrong length");
  }
  if (t.parent[0] != -1) throw MalformedTreeFile("parent: root must be node 0");
  for (int j = 1; j < t.node_count; ++j) {
    // parent[j] < j also rules out cycles and multiple roots.
    if (t.parent[j] < 0 || t.parent[j] >= j) {
      throw MalformedTreeFile("parent: node " + std::to_string(j) +
                              " must reference an earlier node (cycle or "
                              "forward reference)");
    }
  }
  if (t.rest_positions.rows() != t.node_count) {
    throw MalformedTreeFile("nodes: wrong position count");
  }
  if (t.rest_positions.row(0).norm() != 0.0) {
    throw MalformedTreeFile("nodes: root must sit at the origin");
  }
  const int nb = t.branch_count();
  if (t.radius.size() != nb || t.length.size() != nb ||
      t.stiffness.size() != nb || t.damping.size() != nb) {
    throw MalformedTreeFile("branches: wrong branch count (need N-1)");
  }
  if (!(t.elastic_modulus > 0.0)) {
    throw MalformedTreeFile("elastic_modulus: must be > 0");
  }
  for (int j = 1; j < t.node_count; ++j) {
    const int b = j - 1;
    if (!(t.radius[b] > 0.0)) {
      throw MalformedTreeFile("branches: radius must be > 0 (child " +
                              std::to_string(j) + ")");
    }
    if (!(t.length[b] > 0.0)) {
      throw MalformedTreeFile("branches: length must be > 0 (child " +
                              std::to_string(j) + ")");
    }
    if (!(t.stiffness[b] > 0.0)) {
      throw MalformedTreeFile("branches: stiffness must be > 0 (child " +
                              std::to_string(j) + ")");
    }
    if (!(t.damping[b] > 0.0)) {
      throw MalformedTreeFile("branches: damping must be > 0 (child " +
                              std::to_string(j) + ")");
    }
    const double geo =
        (t.rest_positions.row(j) - t.rest_positions.row(t.parent[j])).norm();
    if (geo != t.length[b]) {
      throw MalformedTreeFile("branches: length must equal rest parent-child "
                              "distance (child " +
                              std::to_string(j) + ")");
    }
    // Radius monotonicity along every root-to-leaf path.
    if (t.parent[j] != 0 && t.radius[b] > t.radius[t.parent[j] - 1]) {
      throw MalformedTreeFile("branches: child radius exceeds parent radius "
                              "(child " +
                              std::to_string(j) + ")");
    }
  }
}

nlohmann::ordered_json tree_to_json(const TreeSpec& t) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["seed"] = t.seed;
  j["elastic_modulus"] = t.elastic_modulus;
  auto nodes = nlohmann::ordered_json::array();
  for (int i = 0; i < t.node_count; ++i) {
    nlohmann::ordered_json n;
    n["id"] = i;
    n["parent"] = t.parent[i];
    n["position"] = {t.rest_positions(i, 0), t.rest_positions(i, 1),
                     t.rest_positions(i, 2)};
    nodes.push_back(std::move(n));
  }
  j["nodes"] = std::move(nodes);
  auto branches = nlohmann::ordered_json::array();
  for (int c = 1; c < t.node_count; ++c) {
    nlohmann::ordered_json b;
    b["child"] = c;
    b["radius"] = t.radius[c - 1];
    b["length"] = t.length[c - 1];
    b["stiffness"] = t.stiffness[c - 1];
    b["damping"] = t.damping[c - 1];
    branches.push_back(std::move(b));
  }
  j["branches"] = std::move(branches);
  return j;
}

void save_tree(const TreeSpec& t, const std::filesystem::path& path) {
  jsonio::write_file(path, jsonio::canonical_dump(tree_to_json(t)) + "\n");
}

namespace {

const nlohmann::json& require(const nlohmann::json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw MalformedTreeFile(std::string(field) + ": missing field");
  }
  return *it;
}

}  // namespace

TreeSpec tree_from_json(const nlohmann::json& j) {
  TreeSpec t;
  try {
    if (require(j, "version").get<int>() != 1) {
      throw MalformedTreeFile("version: unsupported");
    }
    t.seed = require(j, "seed").get<std::uint64_t>();
    t.elastic_modulus = require(j, "elastic_modulus").get<double>();
    const auto& nodes = require(j, "nodes");
    t.node_count = static_cast<int>(nodes.size());
    if (t.node_count < 2) throw MalformedTreeFile("nodes: need at least 2");
    t.parent.resize(t.node_count);
    t.rest_positions.resize(t.node_count, 3);
    int expect = 0;
    for (const auto& n : nodes) {
      const int id = require(n, "id").get<int>();
      if (id != expect++) throw MalformedTreeFile("nodes: ids must be 0..N-1");
      t.parent[id] = require(n, "parent").get<int>();
      const auto& pos = require(n, "position");
      if (pos.size() != 3) throw MalformedTreeFile("nodes: position not 3d");
      for (int k = 0; k < 3; ++k) t.rest_positions(id, k) = pos[k].get<double>();
    }
    const auto& branches = require(j, "branches");
    if (static_cast<int>(branches.size()) != t.node_count - 1) {
      throw MalformedTreeFile("branches: need exactly N-1 entries");
    }
    const int nb = t.branch_count();
    t.radius.resize(nb);
    t.length.resize(nb);
    t.stiffness.resize(nb);
    t.damping.resize(nb);
    int expect_child = 1;
    for (const auto& b : branches) {
      const int c = require(b, "child").get<int>();
      if (c != expect_child++) {
        throw MalformedTreeFile("branches: children must be 1..N-1 in order");
      }
      t.radius[c - 1] = require(b, "radius").get<double>();
      t.length[c - 1] = require(b, "length").get<double>();
      t.stiffness[c - 1] = require(b, "stiffness").get<double>();
      t.damping[c - 1] = require(b, "damping").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedTreeFile(e.what());
  }

  validate_tree(t);
  return t;
}

TreeSpec load_tree(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = jsonio::parse_file(path);
  } catch (const std::runtime_error& e) {
    throw MalformedTreeFile(e.what());
  }
  try {
    return tree_from_json(j);
  } catch (const MalformedTreeFile& e) {
    throw MalformedTreeFile(path.string() + ": " + e.what());
  }
}

}  // namespace arbor::forest
