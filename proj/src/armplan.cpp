#include "arbor/armplan.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "arbor/rng.hpp"

namespace arbor::armplan {

namespace {

Eigen::Isometry3d make_transform(const Eigen::Vector3d& xyz,
                                 const Eigen::Vector3d& rpy) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.translation() = xyz;
  t.linear() = (Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) *
                Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
                Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX()))
                   .toRotationMatrix();
  return t;
}

}  // namespace

ArmModel ArmModel::default_arm() {
  ArmModel arm;
  arm.base = make_transform({0.9, 0.0, 0.0}, {0.0, 0.0, 0.0});
  const double pi = std::numbers::pi;
  arm.joints = {
      {{0, 0, 1}, {0.0, 0.0, 0.10}, {0, 0, 0}, -pi, pi},
      {{0, 1, 0}, {0.0, 0.0, 0.05}, {0, 0, 0}, -2.6, 2.6},
      {{0, 1, 0}, {0.0, 0.0, 0.35}, {0, 0, 0}, -2.8, 2.8},
      {{0, 1, 0}, {0.0, 0.0, 0.30}, {0, 0, 0}, -2.8, 2.8},
      {{0, 0, 1}, {0.0, 0.0, 0.08}, {0, 0, 0}, -pi, pi},
      {{0, 1, 0}, {0.0, 0.0, 0.06}, {0, 0, 0}, -2.8, 2.8},
  };
  arm.tool_offset = {0.0, 0.0, 0.12};
  arm.capsules = {
      {0, {{0, 0, -0.08}, {0, 0, 0.05}, 0.055}},
      {1, {{0, 0, 0}, {0, 0, 0.35}, 0.045}},
      {2, {{0, 0, 0}, {0, 0, 0.30}, 0.04}},
      {3, {{0, 0, 0}, {0, 0, 0.08}, 0.035}},
      {4, {{0, 0, 0}, {0, 0, 0.06}, 0.035}},
      {5, {{0, 0, 0}, {0, 0, 0.12}, 0.025}},
  };
  return arm;
}

namespace {

Eigen::Vector3d vec3(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

nlohmann::ordered_json jvec(const Eigen::Vector3d& v) {
  return {v.x(), v.y(), v.z()};
}

}  // namespace

ArmModel ArmModel::from_json(const nlohmann::json& j) {
  ArmModel arm;
  arm.base = make_transform(vec3(j.at("base_xyz")), vec3(j.at("base_rpy")));
  arm.tool_offset = vec3(j.at("tool_offset"));
  for (const auto& js : j.at("joints")) {
    JointSpec s;
    s.axis = vec3(js.at("axis")).normalized();
    s.origin_xyz = vec3(js.at("origin_xyz"));
    s.origin_rpy = vec3(js.at("origin_rpy"));
    s.lower = js.at("lower").get<double>();
    s.upper = js.at("upper").get<double>();
    if (!(s.lower < s.upper)) {
      throw std::runtime_error("arm config: joint limits must satisfy lower < upper");
    }
    arm.joints.push_back(s);
  }
  if (arm.dof() < 2) throw std::runtime_error("arm config: need >= 2 joints");
  for (const auto& jc : j.at("capsules")) {
    Capsule c;
    c.p0 = vec3(jc.at("p0"));
    c.p1 = vec3(jc.at("p1"));
    c.radius = jc.at("radius").get<double>();
    if (!(c.radius > 0.0)) {
      throw std::runtime_error("arm config: capsule radius must be > 0");
    }
    arm.capsules.emplace_back(jc.at("frame").get<int>(), c);
  }
  return arm;
}

nlohmann::json ArmModel::to_json() const {
  nlohmann::ordered_json j;
  j["base_xyz"] = jvec(base.translation());
  const Eigen::Vector3d rpy = base.rotation().eulerAngles(2, 1, 0).reverse();
  j["base_rpy"] = jvec(rpy);
  j["tool_offset"] = jvec(tool_offset);
  auto joints_json = nlohmann::ordered_json::array();
  for (const auto& s : joints) {
    nlohmann::ordered_json js;
    js["axis"] = jvec(s.axis);
    js["origin_xyz"] = jvec(s.origin_xyz);
    js["origin_rpy"] = jvec(s.origin_rpy);
    js["lower"] = s.lower;
    js["upper"] = s.upper;
    joints_json.push_back(std::move(js));
  }
  j["joints"] = std::move(joints_json);
  auto caps = nlohmann::ordered_json::array();
  for (const auto& [frame, c] : capsules) {
    nlohmann::ordered_json jc;
    jc["frame"] = frame;
    jc["p0"] = jvec(c.p0);
    jc["p1"] = jvec(c.p1);
    jc["radius"] = c.radius;
    caps.push_back(std::move(jc));
  }
  j["capsules"] = std::move(caps);
  return j;
}

ArmPose arm_fk(const ArmModel& arm, const Eigen::VectorXd& q) {
  if (q.size() != arm.dof()) throw JointLimit("joint vector size mismatch");
  for (int i = 0; i < arm.dof(); ++i) {
    if (q[i] < arm.joints[i].lower || q[i] > arm.joints[i].upper) {
      throw JointLimit("joint " + std::to_string(i) + " outside limits");
    }
  }
  ArmPose pose;
  Eigen::Isometry3d t = arm.base;
  for (int i = 0; i < arm.dof(); ++i) {
    t = t * make_transform(arm.joints[i].origin_xyz, arm.joints[i].origin_rpy) *
        Eigen::AngleAxisd(q[i], arm.joints[i].axis);
    pose.frames.push_back(t);
  }
  pose.tip = t * arm.tool_offset;
  pose.tool_axis = t.rotation() * Eigen::Vector3d::UnitZ();
  for (const auto& [frame, c] : arm.capsules) {
    Capsule w;
    w.p0 = pose.frames.at(frame) * c.p0;
    w.p1 = pose.frames.at(frame) * c.p1;
    w.radius = c.radius;
    pose.world_capsules.push_back(w);
  }
  return pose;
}

double segment_distance(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                        const Eigen::Vector3d& q0, const Eigen::Vector3d& q1) {
  // Closest points between two segments (Ericson, Real-Time Collision
  // Detection, 5.1.9).
  const Eigen::Vector3d d1 = p1 - p0;
  const Eigen::Vector3d d2 = q1 - q0;
  const Eigen::Vector3d r = p0 - q0;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  double s, t;
  constexpr double kEps = 1e-12;
  if (a <= kEps && e <= kEps) {
    return r.norm();
  }
  if (a <= kEps) {
    s = 0.0;
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kEps) {
      t = 0.0;
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > kEps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return (p0 + s * d1 - (q0 + t * d2)).norm();
}

TreeObstacle TreeObstacle::from_tree(const forest::TreeSpec& tree,
                                     const forest::Points& positions,
                                     double clearance) {
  TreeObstacle obs;
  for (int j = 1; j < tree.node_count; ++j) {
    Capsule c;
    c.p0 = positions.row(tree.parent[j]).transpose();
    c.p1 = positions.row(j).transpose();
    c.radius = tree.radius[j - 1] + clearance;
    obs.capsules.push_back(c);
    obs.branch_child.push_back(j);
  }
  return obs;
}

bool collides(const ArmPose& pose, const TreeObstacle& tree,
              const std::vector<int>& exempt_children, double ground_z) {
  for (const auto& c : pose.world_capsules) {
    if (std::min(c.p0.z(), c.p1.z()) - c.radius < ground_z) return true;
    for (std::size_t k = 0; k < tree.capsules.size(); ++k) {
      if (std::find(exempt_children.begin(), exempt_children.end(),
                    tree.branch_child[k]) != exempt_children.end()) {
        continue;
      }
      const auto& b = tree.capsules[k];
      if (segment_distance(c.p0, c.p1, b.p0, b.p1) < c.radius + b.radius) {
        return true;
      }
    }
  }
  return false;
}

bool goal_satisfied(const ArmPose& pose, const GoalSpec& goal) {
  if ((pose.tip - goal.point).norm() > goal.tol_pos) return false;
  if (goal.tol_angle_deg >= 180.0) return true;
  const double dn = goal.direction.norm();
  if (dn < 1e-12) return true;
  const double cosang =
      pose.tool_axis.dot(goal.direction) / (pose.tool_axis.norm() * dn);
  return cosang >=
         std::cos(goal.tol_angle_deg * std::numbers::pi / 180.0);
}

namespace {

Eigen::VectorXd clamp_to_limits(const ArmModel& arm, Eigen::VectorXd q) {
  for (int i = 0; i < arm.dof(); ++i) {
    q[i] = std::clamp(q[i], arm.joints[i].lower, arm.joints[i].upper);
  }
  return q;
}

}  // namespace

std::vector<Eigen::VectorXd> ik_goals(const ArmModel& arm, const GoalSpec& goal,
                                      const TreeObstacle& tree,
                                      const std::vector<int>& exempt_children,
                                      int seeds, std::uint64_t seed) {
  const int n = arm.dof();
  std::vector<Eigen::VectorXd> goals;
  Rng rng = Rng::stream(seed, 0x1c);
  const double w_rot = goal.tol_angle_deg >= 180.0 ? 0.0 : 0.3;
  for (int s = 0; s < seeds; ++s) {
    Eigen::VectorXd q(n);
    if (s == 0) {
      q.setZero();
      q = clamp_to_limits(arm, q);
    } else {
      for (int i = 0; i < n; ++i) {
        q[i] = rng.uniform(arm.joints[i].lower, arm.joints[i].upper);
      }
    }
    for (int it = 0; it < 120; ++it) {
      const ArmPose pose = arm_fk(arm, q);
      const Eigen::Vector3d e_pos = goal.point - pose.tip;
      Eigen::Vector3d e_rot = Eigen::Vector3d::Zero();
      const double dn = goal.direction.norm();
      if (w_rot > 0.0 && dn > 1e-12) {
        e_rot = w_rot * pose.tool_axis.cross(goal.direction / dn);
      }
      Eigen::Matrix<double, 6, Eigen::Dynamic> jac(6, n);
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d z =
            pose.frames[i].rotation() * arm.joints[i].axis;
        jac.col(i).head<3>() = z.cross(pose.tip - pose.frames[i].translation());
        jac.col(i).tail<3>() = w_rot * z.cross(pose.tool_axis);
      }
      Eigen::Matrix<double, 6, 1> err;
      err << e_pos, e_rot;
      if (e_pos.norm() < 0.5 * goal.tol_pos && it > 4) break;
      const double lambda = 0.05;
      const Eigen::MatrixXd jjt =
          jac * jac.transpose() +
          lambda * lambda * Eigen::Matrix<double, 6, 6>::Identity();
      q = clamp_to_limits(arm, q + jac.transpose() * jjt.ldlt().solve(err));
    }
    const ArmPose pose = arm_fk(arm, q);
    if (!goal_satisfied(pose, goal)) continue;
    if (collides(pose, tree, exempt_children)) continue;
    bool duplicate = false;
    for (const auto& g : goals) {
      if ((g - q).norm() < 1e-3) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) goals.push_back(q);
  }
  return goals;
}

namespace {

struct RrtNode {
  Eigen::VectorXd q;
  int parent = -1;
  double cost = 0.0;
  std::vector<int> children;
};

// collision along the straight joint-space edge, endpoints included
bool edge_free(const ArmModel& arm, const TreeObstacle& tree,
               const std::vector<int>& exempt, const Eigen::VectorXd& a,
               const Eigen::VectorXd& b, double resolution) {
  const double dist = (b - a).norm();
  const int steps = std::max(1, static_cast<int>(std::ceil(dist / resolution)));
  for (int s = 0; s <= steps; ++s) {
    const double u = static_cast<double>(s) / steps;
    const Eigen::VectorXd q = a + u * (b - a);
    if (collides(arm_fk(arm, q), tree, exempt)) return false;
  }
  return true;
}

void update_subtree_costs(std::vector<RrtNode>& nodes, int root) {
  for (int c : nodes[root].children) {
    nodes[c].cost = nodes[root].cost + (nodes[c].q - nodes[root].q).norm();
    update_subtree_costs(nodes, c);
  }
}

}  // namespace

RrtResult rrt_star(const ArmModel& arm, const Eigen::VectorXd& start,
                   const GoalSpec& goal, const TreeObstacle& tree,
                   const std::vector<int>& exempt_children,
                   const RrtOptions& opts,
                   const std::vector<Eigen::VectorXd>& goal_hints) {
  const int n = arm.dof();
  {
    const ArmPose p = arm_fk(arm, start);
    if (collides(p, tree, exempt_children)) {
      throw PlanBudgetExhausted("start configuration is in collision");
    }
  }

  std::vector<RrtNode> nodes;
  nodes.push_back(RrtNode{start, -1, 0.0, {}});
  std::vector<int> goal_nodes;
  RrtResult result;
  Rng rng = Rng::stream(opts.seed, 0x4242);

  const auto record_best = [&]() {
    double best = std::numeric_limits<double>::infinity();
    for (int g : goal_nodes) best = std::min(best, nodes[g].cost);
    if (!goal_nodes.empty() &&
        (result.best_cost_log.empty() || best < result.best_cost_log.back())) {
      result.best_cost_log.push_back(best);
    }
  };

  for (int iter = 0; iter < opts.iterations; ++iter) {
    // sample: goal-biased toward the IK hints, else uniform in limits
    Eigen::VectorXd target(n);
    if (!goal_hints.empty() && rng.uniform() < opts.goal_bias) {
      target = goal_hints[rng.below(goal_hints.size())];
    } else {
      for (int i = 0; i < n; ++i) {
        target[i] = rng.uniform(arm.joints[i].lower, arm.joints[i].upper);
      }
    }

    int nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double d = (nodes[i].q - target).norm();
      if (d < nearest_d) {
        nearest_d = d;
        nearest = static_cast<int>(i);
      }
    }
    if (nearest_d < 1e-9) continue;

    Eigen::VectorXd q_new =
        nearest_d <= opts.step
            ? target
            : Eigen::VectorXd(nodes[nearest].q +
                              (opts.step / nearest_d) *
                                  (target - nodes[nearest].q));
    q_new = clamp_to_limits(arm, q_new);

    if (!edge_free(arm, tree, exempt_children, nodes[nearest].q, q_new,
                   opts.collision_resolution)) {
      continue;
    }

    // neighbors within the shrinking RRT* radius
    const double radius = std::min(
        2.0 * opts.step,
        2.5 * std::pow(std::log(static_cast<double>(nodes.size() + 1)) /
                           static_cast<double>(nodes.size() + 1),
                       1.0 / n));
    std::vector<int> neighbors;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if ((nodes[i].q - q_new).norm() <= std::max(radius, opts.step)) {
        neighbors.push_back(static_cast<int>(i));
      }
    }

    int parent = nearest;
    double best_cost = nodes[nearest].cost + (q_new - nodes[nearest].q).norm();
    for (int i : neighbors) {
      const double c = nodes[i].cost + (nodes[i].q - q_new).norm();
      if (c < best_cost &&
          edge_free(arm, tree, exempt_children, nodes[i].q, q_new,
                    opts.collision_resolution)) {
        best_cost = c;
        parent = i;
      }
    }

    const int id = static_cast<int>(nodes.size());
    nodes.push_back(RrtNode{q_new, parent, best_cost, {}});
    nodes[parent].children.push_back(id);

    // rewire neighbors through the new node
    for (int i : neighbors) {
      const double c = best_cost + (nodes[i].q - q_new).norm();
      if (c + 1e-12 < nodes[i].cost &&
          edge_free(arm, tree, exempt_children, q_new, nodes[i].q,
                    opts.collision_resolution)) {
        auto& old = nodes[nodes[i].parent].children;
        old.erase(std::find(old.begin(), old.end(), i));
        nodes[i].parent = id;
        nodes[i].cost = c;
        nodes[id].children.push_back(i);
        update_subtree_costs(nodes, i);
      }
    }

    if (goal_satisfied(arm_fk(arm, q_new), goal)) goal_nodes.push_back(id);
    record_best();
  }

  if (goal_nodes.empty()) {
    throw PlanBudgetExhausted("no goal-satisfying configuration reached in " +
                              std::to_string(opts.iterations) + " iterations");
  }
  int best = goal_nodes.front();
  for (int g : goal_nodes) {
    if (nodes[g].cost < nodes[best].cost) best = g;
  }
  for (int at = best; at != -1; at = nodes[at].parent) {
    result.path.push_back(nodes[at].q);
  }
  std::reverse(result.path.begin(), result.path.end());
  result.cost = nodes[best].cost;
  return result;
}

PlanResult plan_contact(const Eigen::Matrix<double, Eigen::Dynamic, 3>& traj_pred,
                        const Eigen::VectorXd& affordance,
                        const forest::TreeSpec& tree,
                        const forest::Points& positions, const ArmModel& arm,
                        std::uint64_t seed, const PlanOptions& opts) {
  if (traj_pred.rows() != tree.node_count ||
      affordance.size() != tree.node_count) {
    throw std::invalid_argument("policy output does not match tree size");
  }
  const TreeObstacle obstacle =
      TreeObstacle::from_tree(tree, positions, opts.clearance);
  Eigen::VectorXd home = opts.home;
  if (home.size() == 0) home = Eigen::VectorXd::Zero(arm.dof());

  std::vector<int> order(tree.node_count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return affordance[a] > affordance[b];
  });

  for (int k = 0; k < tree.node_count; ++k) {
    const int node = order[k];
    GoalSpec goal;
    goal.point = positions.row(node).transpose();
    Eigen::Vector3d t = traj_pred.row(node).transpose();
    if (t.norm() > opts.max_push) t *= opts.max_push / t.norm();
    if (t.norm() > 1e-9) {
      goal.direction = t.normalized();
    } else {
      goal.tol_angle_deg = 180.0;  // no meaningful approach direction
    }

    std::vector<int> exempt = {node};
    for (int j = 1; j < tree.node_count; ++j) {
      if (tree.parent[j] == node) exempt.push_back(j);
    }

    const auto hints =
        ik_goals(arm, goal, obstacle, exempt, opts.ik_seeds,
                 mix_seed(seed, static_cast<std::uint64_t>(node), 0x1c));
    if (hints.empty()) continue;

    RrtOptions ro = opts.rrt;
    ro.seed = mix_seed(seed, static_cast<std::uint64_t>(node), 0x447);
    try {
      RrtResult rrt =
          rrt_star(arm, home, goal, obstacle, exempt, ro, hints);
      PlanResult plan;
      plan.chosen_node = node;
      plan.rank = k + 1;
      plan.joint_path = std::move(rrt.path);
      plan.cost = rrt.cost;
      plan.push.contact_node = node;
      plan.push.trajectory = t;
      return plan;
    } catch (const PlanBudgetExhausted&) {
      continue;
    }
  }
  throw NoFeasiblePlan("no candidate node admits a feasible plan");
}

nlohmann::ordered_json plan_to_json(const PlanResult& plan) {
  nlohmann::ordered_json j;
  j["chosen_node"] = plan.chosen_node;
  j["rank"] = plan.rank;
  auto waypoints = nlohmann::ordered_json::array();
  for (const auto& q : plan.joint_path) {
    auto row = nlohmann::ordered_json::array();
    for (int i = 0; i < q.size(); ++i) row.push_back(q[i]);
    waypoints.push_back(std::move(row));
  }
  j["waypoints"] = std::move(waypoints);
  j["cost"] = plan.cost;
  nlohmann::ordered_json push;
  push["contact_node"] = plan.push.contact_node;
  push["trajectory"] = {plan.push.trajectory.x(), plan.push.trajectory.y(),
                        plan.push.trajectory.z()};
  j["push"] = std::move(push);
  return j;
}

}  // namespace arbor::armplan
