#include "arbor/pushsim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>
#include <thread>

#include "arbor/jsonio.hpp"
#include "arbor/rng.hpp"

namespace arbor::pushsim {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return s;
}

}  // namespace

Eigen::Matrix3d rotation_from_rotvec(const Eigen::Vector3d& w) {
  const double t2 = w.squaredNorm();
  const Eigen::Matrix3d k = skew(w);
  if (t2 < 1e-16) {
    // Second-order series; truncation error below double precision here.
    return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  }
  const double t = std::sqrt(t2);
  return Eigen::Matrix3d::Identity() + (std::sin(t) / t) * k +
         ((1.0 - std::cos(t)) / t2) * k * k;
}

Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& w) {
  const double t2 = w.squaredNorm();
  const Eigen::Matrix3d k = skew(w);
  double a, b;
  if (t2 < 1e-8) {
    a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  } else {
    const double t = std::sqrt(t2);
    a = (1.0 - std::cos(t)) / t2;
    b = (t - std::sin(t)) / (t2 * t);
  }
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

namespace {

// FK with cumulative rotations kept for the gradient pass.
void fk_full(const forest::TreeSpec& tree, const Eigen::VectorXd& theta,
             std::vector<Eigen::Matrix3d>& rot, Points& pos) {
  const int n = tree.node_count;
  rot.resize(n);
  pos.resize(n, 3);
  rot[0] = Eigen::Matrix3d::Identity();
  pos.row(0) = tree.rest_positions.row(0);
  for (int j = 1; j < n; ++j) {
    const int p = tree.parent[j];
    rot[j] = rot[p] * rotation_from_rotvec(theta.segment<3>(3 * (j - 1)));
    const Eigen::Vector3d link =
        (tree.rest_positions.row(j) - tree.rest_positions.row(p)).transpose();
    pos.row(j) = pos.row(p) + (rot[j] * link).transpose();
  }
}

}  // namespace

Points forward_kinematics(const forest::TreeSpec& tree,
                          const JointState& state) {
  if (state.rotations.rows() != tree.branch_count()) {
    throw std::invalid_argument("joint state size does not match tree");
  }
  Eigen::VectorXd theta(3 * tree.branch_count());
  for (int j = 0; j < tree.branch_count(); ++j) {
    theta.segment<3>(3 * j) = state.rotations.row(j).transpose();
  }
  std::vector<Eigen::Matrix3d> rot;
  Points pos;
  fk_full(tree, theta, rot, pos);
  return pos;
}

double push_energy(const forest::TreeSpec& tree, const Eigen::VectorXd& theta,
                   const PushAction& action, double coupling_stiffness,
                   Eigen::VectorXd* grad) {
  const int n = tree.node_count;
  std::vector<Eigen::Matrix3d> rot;
  Points pos;
  fk_full(tree, theta, rot, pos);

  double energy = 0.0;
  for (int j = 1; j < n; ++j) {
    energy +=
        0.5 * tree.stiffness[j - 1] * theta.segment<3>(3 * (j - 1)).squaredNorm();
  }
  const Eigen::Vector3d target =
      tree.rest_positions.row(action.contact_node).transpose() +
      action.trajectory;
  const Eigen::Vector3d contact = pos.row(action.contact_node).transpose();
  energy += 0.5 * coupling_stiffness * (contact - target).squaredNorm();

  if (grad) {
    grad->setZero(theta.size());
    // dU/dp at the contact node; only joints on the root->contact path see it.
    const Eigen::Vector3d force = coupling_stiffness * (contact - target);
    for (int j = action.contact_node; j != 0; j = tree.parent[j]) {
      const int p = tree.parent[j];
      const Eigen::Vector3d pivot = pos.row(p).transpose();
      const Eigen::Vector3d moment = (contact - pivot).cross(force);
      const Eigen::Vector3d w = theta.segment<3>(3 * (j - 1));
      grad->segment<3>(3 * (j - 1)) =
          so3_left_jacobian(w).transpose() * (rot[p].transpose() * moment);
    }
    for (int j = 1; j < n; ++j) {
      grad->segment<3>(3 * (j - 1)) +=
          tree.stiffness[j - 1] * theta.segment<3>(3 * (j - 1));
    }
  }
  return energy;
}

JointState solve_equilibrium(const forest::TreeSpec& tree,
                             const PushAction& action,
                             const SolveOptions& opts, SolveTrace* trace) {
  if (action.contact_node <= 0 || action.contact_node >= tree.node_count) {
    throw std::invalid_argument("contact node must be a non-root tree node");
  }
  const int dim = 3 * tree.branch_count();

  // Preconditioner: the spring Hessian diagonal. Scaling by 1/K_s makes the
  // problem well conditioned despite trunk/leaf stiffness spanning decades.
  Eigen::VectorXd precond(dim);
  for (int j = 1; j < tree.node_count; ++j) {
    precond.segment<3>(3 * (j - 1)).setConstant(1.0 / tree.stiffness[j - 1]);
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd g(dim);
  double u = push_energy(tree, x, action, opts.coupling_stiffness, &g);
  const double tol = opts.grad_tol_rel * std::max(1.0, g.norm());
  if (trace) {
    trace->energy.push_back(u);
    trace->grad_tol = tol;
  }

  std::deque<Eigen::VectorXd> mem_s, mem_y;
  const auto lbfgs_direction = [&](const Eigen::VectorXd& grad) {
    Eigen::VectorXd q = grad;
    const int m = static_cast<int>(mem_s.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      const double rho = 1.0 / mem_y[i].dot(mem_s[i]);
      alpha[i] = rho * mem_s[i].dot(q);
      q -= alpha[i] * mem_y[i];
    }
    q.array() *= precond.array();
    for (int i = 0; i < m; ++i) {
      const double rho = 1.0 / mem_y[i].dot(mem_s[i]);
      const double beta = rho * mem_y[i].dot(q);
      q += (alpha[i] - beta) * mem_s[i];
    }
    return Eigen::VectorXd(-q);
  };

  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    if (g.norm() <= tol) break;

    Eigen::VectorXd dir = opts.quasi_newton
                              ? lbfgs_direction(g)
                              : Eigen::VectorXd(-(precond.array() * g.array()));
    double slope = dir.dot(g);
    if (!(slope < 0.0)) {
      mem_s.clear();
      mem_y.clear();
      dir = -(precond.array() * g.array());
      slope = dir.dot(g);
    }

    // Armijo backtracking; accepted steps strictly decrease the energy.
    double step = 1.0;
    Eigen::VectorXd x_new;
    double u_new = u;
    bool accepted = false;
    while (step > 1e-16) {
      x_new = x + step * dir;
      u_new = push_energy(tree, x_new, action, opts.coupling_stiffness);
      if (u_new <= u + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // gradient too small to make progress

    Eigen::VectorXd g_new(dim);
    push_energy(tree, x_new, action, opts.coupling_stiffness, &g_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (opts.quasi_newton && sy > 1e-12 * s.norm() * y.norm()) {
      mem_s.push_back(s);
      mem_y.push_back(y);
      if (static_cast<int>(mem_s.size()) > opts.lbfgs_memory) {
        mem_s.pop_front();
        mem_y.pop_front();
      }
    }
    x = std::move(x_new);
    g = std::move(g_new);
    u = u_new;
    if (trace) trace->energy.push_back(u);
  }

  if (trace) {
    trace->grad_norm = g.norm();
    trace->iterations = iter;
  }
  if (g.norm() > tol) {
    throw NoConvergence("equilibrium residual " + std::to_string(g.norm()) +
                        " above tolerance " + std::to_string(tol) + " after " +
                        std::to_string(iter) + " iterations");
  }

  JointState state;
  state.rotations.resize(tree.branch_count(), 3);
  for (int j = 0; j < tree.branch_count(); ++j) {
    state.rotations.row(j) = x.segment<3>(3 * j).transpose();
  }
  return state;
}

PushEpisode run_episode(const forest::TreeSpec& tree, const PushAction& action,
                        const SolveOptions& opts) {
  PushEpisode ep;
  ep.initial_positions = tree.rest_positions;
  ep.final_positions = forward_kinematics(tree, solve_equilibrium(tree, action, opts));
  ep.action = action;
  ep.stiffness = tree.stiffness;
  return ep;
}

PushAction sample_action(const forest::TreeSpec& tree, std::uint64_t seed,
                         const PushParams& params) {
  if (tree.node_count < 2) {
    throw std::invalid_argument("tree needs at least 2 nodes");
  }
  Rng rng = Rng::stream(seed, 0xac7104);
  PushAction a;
  a.contact_node = 1 + static_cast<int>(rng.below(tree.node_count - 1));
  const Eigen::Vector3d dir = rng.unit_vector();
  a.trajectory = rng.uniform(params.min_distance, params.max_distance) * dir;
  return a;
}

std::vector<PushEpisode> collect_dataset(
    const std::vector<forest::TreeSpec>& trees, int episodes_per_tree,
    std::uint64_t seed, const PushParams& params, const SolveOptions& opts,
    int threads) {
  if (trees.empty()) throw std::invalid_argument("tree list is empty");
  const int total = static_cast<int>(trees.size()) * episodes_per_tree;
  std::vector<PushEpisode> out(total);
  std::vector<std::string> failures(total);

  auto work = [&](int begin, int end) {
    for (int idx = begin; idx < end; ++idx) {
      const int t = idx / episodes_per_tree;
      const int e = idx % episodes_per_tree;
      bool done = false;
      for (int r = 0; r <= params.max_retries && !done; ++r) {
        const std::uint64_t ep_seed =
            mix_seed(seed, static_cast<std::uint64_t>(t),
                     static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(r));
        const PushAction a = sample_action(trees[t], ep_seed, params);
        try {
          out[idx] = run_episode(trees[t], a, opts);
          out[idx].tree_id = t;
          out[idx].seed = ep_seed;
          done = true;
        } catch (const NoConvergence&) {
          // resample
        }
      }
      if (!done) {
        failures[idx] = "tree " + std::to_string(t) + " episode " +
                        std::to_string(e) + ": retry budget exhausted";
      }
    }
  };

  const int workers = std::max(1, threads);
  if (workers == 1) {
    work(0, total);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (total + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int b = std::min(total, w * chunk);
      const int e = std::min(total, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  for (const auto& f : failures) {
    if (!f.empty()) throw DatasetStalled(f);
  }
  return out;
}

namespace {

nlohmann::ordered_json points_to_json(const Points& p) {
  auto arr = nlohmann::ordered_json::array();
  for (int i = 0; i < p.rows(); ++i) {
    arr.push_back({p(i, 0), p(i, 1), p(i, 2)});
  }
  return arr;
}

Points points_from_json(const nlohmann::json& j) {
  Points p(static_cast<int>(j.size()), 3);
  for (int i = 0; i < p.rows(); ++i) {
    for (int k = 0; k < 3; ++k) p(i, k) = j[i][k].get<double>();
  }
  return p;
}

}  // namespace

std::string episode_to_json_line(const PushEpisode& ep) {
  nlohmann::ordered_json j;
  j["tree_id"] = ep.tree_id;
  j["seed"] = ep.seed;
  j["contact_node"] = ep.action.contact_node;
  j["trajectory"] = {ep.action.trajectory.x(), ep.action.trajectory.y(),
                     ep.action.trajectory.z()};
  j["initial"] = points_to_json(ep.initial_positions);
  j["final"] = points_to_json(ep.final_positions);
  auto ks = nlohmann::ordered_json::array();
  for (int i = 0; i < ep.stiffness.size(); ++i) ks.push_back(ep.stiffness[i]);
  j["stiffness"] = std::move(ks);
  return jsonio::canonical_dump(j);
}

PushEpisode episode_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  PushEpisode ep;
  ep.tree_id = j.at("tree_id").get<int>();
  ep.seed = j.at("seed").get<std::uint64_t>();
  ep.action.contact_node = j.at("contact_node").get<int>();
  for (int k = 0; k < 3; ++k) {
    ep.action.trajectory[k] = j.at("trajectory")[k].get<double>();
  }
  ep.initial_positions = points_from_json(j.at("initial"));
  ep.final_positions = points_from_json(j.at("final"));
  const auto& ks = j.at("stiffness");
  ep.stiffness.resize(static_cast<int>(ks.size()));
  for (int i = 0; i < ep.stiffness.size(); ++i) ep.stiffness[i] = ks[i].get<double>();
  if (ep.final_positions.rows() != ep.initial_positions.rows() ||
      ep.stiffness.size() != ep.initial_positions.rows() - 1) {
    throw std::runtime_error("episode record: inconsistent shapes");
  }
  return ep;
}

void save_dataset(const std::vector<PushEpisode>& eps,
                  const std::filesystem::path& path) {
  std::string out;
  for (const auto& ep : eps) {
    out += episode_to_json_line(ep);
    out += '\n';
  }
  jsonio::write_file(path, out);
}

std::vector<PushEpisode> load_dataset(const std::filesystem::path& path) {
  std::istringstream in(jsonio::read_file(path));
  std::vector<PushEpisode> eps;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    eps.push_back(episode_from_json_line(line));
  }
  return eps;
}

}  // namespace arbor::pushsim
