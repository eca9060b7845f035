#pragma once

// Affordance-ordered contact planning for a configurable serial revolute
// arm: forward kinematics, capsule collision against the (deformed) tree
// and ground, RRT* in joint space, and the descending-affordance planner
// that returns the first feasible reach.

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

#include "arbor/forest.hpp"
#include "arbor/pushsim.hpp"

namespace arbor::armplan {

struct JointLimit : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PlanBudgetExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoFeasiblePlan : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Capsule {
  Eigen::Vector3d p0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d p1 = Eigen::Vector3d::Zero();
  double radius = 0.0;
};

struct JointSpec {
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();  // in the joint frame
  Eigen::Vector3d origin_xyz = Eigen::Vector3d::Zero();
  Eigen::Vector3d origin_rpy = Eigen::Vector3d::Zero();
  double lower = -3.1415926535897931;
  double upper = 3.1415926535897931;
};

struct ArmModel {
  std::vector<JointSpec> joints;
  /// Collision capsules expressed in the frame after the given joint.
  std::vector<std::pair<int, Capsule>> capsules;
  Eigen::Isometry3d base = Eigen::Isometry3d::Identity();
  Eigen::Vector3d tool_offset = Eigen::Vector3d::Zero();

  int dof() const { return static_cast<int>(joints.size()); }

  /// Six-revolute tabletop chain with roughly 0.85 m reach, based near
  /// (0.9, 0, 0) facing the tree at the origin.
  static ArmModel default_arm();
  static ArmModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ArmPose {
  std::vector<Eigen::Isometry3d> frames;  // world frame after each joint
  Eigen::Vector3d tip = Eigen::Vector3d::Zero();
  Eigen::Vector3d tool_axis = Eigen::Vector3d::UnitZ();
  std::vector<Capsule> world_capsules;
};

/// Throws JointLimit when q leaves the limits.
ArmPose arm_fk(const ArmModel& arm, const Eigen::VectorXd& q);

double segment_distance(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                        const Eigen::Vector3d& q0, const Eigen::Vector3d& q1);

/// Branch capsules of a tree in its current deformation.
struct TreeObstacle {
  std::vector<Capsule> capsules;
  std::vector<int> branch_child;  // child node of each capsule

  static TreeObstacle from_tree(const forest::TreeSpec& tree,
                                const forest::Points& positions,
                                double clearance = 0.0);
};

/// Arm-vs-tree and arm-vs-ground capsule tests. Branches whose child node
/// appears in exempt_children are skipped (the approach corridor of the
/// intended contact).
bool collides(const ArmPose& pose, const TreeObstacle& tree,
              const std::vector<int>& exempt_children = {},
              double ground_z = 0.0);

struct GoalSpec {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();  // pre-push contact point
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();  // predicted push
  double tol_pos = 0.02;        // m
  double tol_angle_deg = 30.0;  // approach cone around direction
};

bool goal_satisfied(const ArmPose& pose, const GoalSpec& goal);

struct RrtOptions {
  int iterations = 3000;
  double step = 0.3;                   // rad, joint-space steering
  double goal_bias = 0.15;
  double collision_resolution = 0.02;  // rad along every checked edge
  std::uint64_t seed = 0;
};

struct RrtResult {
  std::vector<Eigen::VectorXd> path;
  double cost = 0.0;               // joint-space path length
  std::vector<double> best_cost_log;  // appended on improvement
};

/// Damped-least-squares IK toward the goal predicate from random seed
/// configurations; returns collision-free goal configurations.
std::vector<Eigen::VectorXd> ik_goals(const ArmModel& arm, const GoalSpec& goal,
                                      const TreeObstacle& tree,
                                      const std::vector<int>& exempt_children,
                                      int seeds, std::uint64_t seed);

/// RRT* from start toward any configuration satisfying the goal predicate.
/// goal_hints (IK solutions) steer the goal-biased samples. Throws
/// PlanBudgetExhausted when the budget expires without a feasible path.
RrtResult rrt_star(const ArmModel& arm, const Eigen::VectorXd& start,
                   const GoalSpec& goal, const TreeObstacle& tree,
                   const std::vector<int>& exempt_children,
                   const RrtOptions& opts,
                   const std::vector<Eigen::VectorXd>& goal_hints);

struct PlanResult {
  int chosen_node = -1;
  int rank = 0;  // 1 = highest affordance
  std::vector<Eigen::VectorXd> joint_path;
  pushsim::PushAction push;
  double cost = 0.0;
};

struct PlanOptions {
  RrtOptions rrt;
  int ik_seeds = 8;
  double clearance = 0.0;
  double max_push = 0.5;
  Eigen::VectorXd home;  // empty: all zeros
};

/// Algorithm: walk candidate nodes by decreasing affordance score; for each,
/// find IK goal configurations and run RRT*; return the first feasible plan.
PlanResult plan_contact(const Eigen::Matrix<double, Eigen::Dynamic, 3>& traj_pred,
                        const Eigen::VectorXd& affordance,
                        const forest::TreeSpec& tree,
                        const forest::Points& positions, const ArmModel& arm,
                        std::uint64_t seed, const PlanOptions& opts = {});

nlohmann::ordered_json plan_to_json(const PlanResult& plan);

}  // namespace arbor::armplan
