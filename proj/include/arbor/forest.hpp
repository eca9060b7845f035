#pragma once

// Procedural tree generation. Skeletons come from the space colonization
// algorithm; joints are parameterized from Euler-Bernoulli beam bending of a
// circular cross-section, with damping fixed at a tenth of the stiffness.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace arbor::forest {

struct GenerationStalled : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedTreeFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Static description of one tree. Node 0 is the root, fixed at the world
/// origin. Branch j (j = 1..N-1) is the link from parent[j] to node j; all
/// per-branch arrays are indexed by j-1.
struct TreeSpec {
  int node_count = 0;
  std::vector<int> parent;  // parent[0] == -1; parent[j] < j
  Points rest_positions;    // N x 3, meters
  Eigen::VectorXd radius;    // N-1, meters
  Eigen::VectorXd length;    // N-1, meters; equals rest parent-child distance
  Eigen::VectorXd stiffness; // N-1, N*m/rad
  Eigen::VectorXd damping;   // N-1, N*m*s/rad; stiffness / 10
  double elastic_modulus = 0.0;  // Pa
  std::uint64_t seed = 0;

  int branch_count() const { return node_count - 1; }
  double height() const { return rest_positions.col(2).maxCoeff(); }
  std::vector<int> depths() const;
  /// Children of each node, in node-index order.
  std::vector<std::vector<int>> children() const;
};

bool operator==(const TreeSpec& a, const TreeSpec& b);

struct ScaParams {
  int attraction_points = 200;
  double influence_radius = 0.4;   // m
  double kill_radius = 0.1;        // m
  double step_length = 0.1;        // m
  // Attraction points fill the upper half-ball around crown_center.
  Eigen::Vector3d crown_center{0.0, 0.0, 0.60};
  double crown_radius = 0.55;      // m
  double height_min = 0.6;         // m
  double height_max = 1.7;         // m
  double elastic_modulus = 1e10;   // Pa, order of green wood
  double leaf_radius = 0.005;      // m
  int max_iterations = 4000;       // growth rounds per attempt
  int max_attempts = 64;           // sub-seed retries for height band / stalls
};

/// Eq. of the beam deflection model: K_s = E*pi*r^4 / (2*l).
double stiffness_from_beam(double elastic_modulus, double radius,
                           double length);

/// K_d = K_s / 10.
double damping_from_stiffness(double stiffness);

/// Grow a tree with exactly node_count nodes. Deterministic in
/// (seed, node_count, params); attempts whose height falls outside
/// [height_min, height_max] are regenerated with an incremented sub-seed.
/// Throws GenerationStalled when no attempt succeeds.
TreeSpec generate_tree(std::uint64_t seed, int node_count,
                       const ScaParams& params = {});

/// Structural validation shared by the generator and the loader. Throws
/// MalformedTreeFile naming the offending field.
void validate_tree(const TreeSpec& tree);

/// Versioned JSON tree document; round-trips bit-exactly.
nlohmann::ordered_json tree_to_json(const TreeSpec& tree);
TreeSpec tree_from_json(const nlohmann::json& j);
void save_tree(const TreeSpec& tree, const std::filesystem::path& path);
TreeSpec load_tree(const std::filesystem::path& path);

}  // namespace arbor::forest
