#pragma once

// Quasi-static push simulation. The end-effector is modeled as a stiff
// linear spring coupling the contact node to a moving target; the steady
// state is the minimizer of total elastic + coupling energy over per-joint
// rotation vectors.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "arbor/forest.hpp"

namespace arbor::pushsim {

struct NoConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DatasetStalled : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Points = forest::Points;

/// Per-joint rotation vectors (radians); row j-1 belongs to the joint at
/// branch j's parent. The root link never rotates.
struct JointState {
  Eigen::Matrix<double, Eigen::Dynamic, 3> rotations;

  static JointState zero(const forest::TreeSpec& tree) {
    JointState s;
    s.rotations.setZero(tree.branch_count(), 3);
    return s;
  }
};

struct PushAction {
  int contact_node = 0;          // never the root
  Eigen::Vector3d trajectory = Eigen::Vector3d::Zero();  // meters
};

struct PushEpisode {
  Points initial_positions;  // rest pose
  Points final_positions;
  PushAction action;
  Eigen::VectorXd stiffness;  // copy of the tree's per-joint K_s
  int tree_id = 0;
  std::uint64_t seed = 0;
};

struct SolveOptions {
  double coupling_stiffness = 1e4;  // N/m
  double grad_tol_rel = 1e-8;       // residual <= tol * max(1, |grad(0)|)
  int max_iterations = 5000;
  bool quasi_newton = true;         // L-BFGS acceleration over plain descent
  int lbfgs_memory = 10;
};

/// Energy per accepted iteration (strictly decreasing) and the final
/// residual, for diagnostics and tests.
struct SolveTrace {
  std::vector<double> energy;
  double grad_norm = 0.0;
  double grad_tol = 0.0;
  int iterations = 0;
};

struct PushParams {
  double min_distance = 0.05;  // m
  double max_distance = 0.5;   // m
  int max_retries = 8;         // resamples per episode on NoConvergence
};

Eigen::Matrix3d rotation_from_rotvec(const Eigen::Vector3d& w);
Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& w);

Points forward_kinematics(const forest::TreeSpec& tree, const JointState& state);

/// Total energy and its gradient w.r.t. the flattened rotation vector stack.
/// Target is the pushed contact point rest position + trajectory.
double push_energy(const forest::TreeSpec& tree, const Eigen::VectorXd& theta,
                   const PushAction& action, double coupling_stiffness,
                   Eigen::VectorXd* grad = nullptr);

JointState solve_equilibrium(const forest::TreeSpec& tree,
                             const PushAction& action,
                             const SolveOptions& opts = {},
                             SolveTrace* trace = nullptr);

PushEpisode run_episode(const forest::TreeSpec& tree, const PushAction& action,
                        const SolveOptions& opts = {});

/// Contact node uniform over non-root nodes, direction uniform on the
/// sphere, distance uniform in [min_distance, max_distance].
PushAction sample_action(const forest::TreeSpec& tree, std::uint64_t seed,
                         const PushParams& params = {});

/// episodes_per_tree successful episodes for every tree, resampling failed
/// solves with bounded retries. Each episode draws from an independent
/// stream of (seed, tree_id, episode_index), so results do not depend on
/// scheduling; threads > 1 splits episodes across workers and merges in
/// index order.
std::vector<PushEpisode> collect_dataset(
    const std::vector<forest::TreeSpec>& trees, int episodes_per_tree,
    std::uint64_t seed, const PushParams& params = {},
    const SolveOptions& opts = {}, int threads = 1);

/// JSON-lines dataset; one episode per line, canonical field order.
std::string episode_to_json_line(const PushEpisode& ep);
PushEpisode episode_from_json_line(const std::string& line);
void save_dataset(const std::vector<PushEpisode>& eps,
                  const std::filesystem::path& path);
std::vector<PushEpisode> load_dataset(const std::filesystem::path& path);

}  // namespace arbor::pushsim
