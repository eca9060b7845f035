#pragma once

// Evaluation: the per-size mean max-node error metric, heuristic baselines,
// policy execution scoring, affordance-rank analysis, and the edge-attribute
// / connectivity ablation runner.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "arbor/forest.hpp"
#include "arbor/models.hpp"
#include "arbor/pushsim.hpp"

namespace arbor::evalbench {

using ShapeMismatch = gradnet::ShapeMismatch;

/// Eq.-11 style error for one episode: max over nodes of the Euclidean
/// distance between prediction and target.
double max_node_error(const forest::Points& predicted,
                      const forest::Points& target);

struct SizeRow {
  std::string method;
  int size = 0;
  int episodes = 0;
  double e_n = 0.0;
};

struct EvalReport {
  std::vector<SizeRow> rows;
  /// Unweighted mean of the per-size e_N values, per method.
  std::map<std::string, double> method_mean;
  int failed_solves = 0;
};

/// Wires the quasi-static simulator in as a models::ActionExecutor.
/// contact_node 0 is a no-op (the tree holds still); trajectories are
/// clamped to max_push. Solver failures fall back to the rest pose.
models::ActionExecutor make_sim_executor(
    const std::vector<forest::TreeSpec>& trees,
    const pushsim::SolveOptions& solve = {}, double max_push = 0.5);

/// Forward model against the No-Action baseline, per tree size.
EvalReport eval_forward(const models::ModelParams& params,
                        const std::vector<pushsim::PushEpisode>& episodes,
                        const std::vector<forest::TreeSpec>& trees);

struct PolicyEvalConfig {
  pushsim::SolveOptions solve;
  double max_push = 0.5;
  std::uint64_t seed = 0;  // random-baseline stream
  bool with_greedy = true;
  bool with_random = true;
};

/// Executes the top-affordance predicted action per episode in the
/// simulator and scores against the target state, alongside the Greedy,
/// Random and No-Action baselines. Solver failures are counted, not fatal.
EvalReport eval_policy(const models::ModelParams& params,
                       const std::vector<pushsim::PushEpisode>& episodes,
                       const std::vector<forest::TreeSpec>& trees,
                       const PolicyEvalConfig& config = {});

/// Contact node farthest from its target (ties to the lowest non-root
/// index); trajectory is that node's full displacement vector.
pushsim::PushAction greedy_action(const forest::Points& initial,
                                  const forest::Points& target);

/// Uniformly random non-root contact node; trajectory as in greedy.
pushsim::PushAction random_action(const forest::Points& initial,
                                  const forest::Points& target,
                                  std::uint64_t seed);

struct RankRow {
  int rank = 0;  // 1 = highest affordance
  int episodes = 0;
  double mean_max_error = 0.0;
  double mean_avg_error = 0.0;
  double mean_affordance = 0.0;
};

/// Executes the rank-k action for every rank of every episode. Nodes are
/// ranked over the whole tree; executing a root contact leaves the tree
/// still (the root link cannot move).
std::vector<RankRow> rank_analysis(const models::ModelParams& params,
                                   const std::vector<pushsim::PushEpisode>& episodes,
                                   const std::vector<forest::TreeSpec>& trees,
                                   const PolicyEvalConfig& config = {});

struct AblationRow {
  std::string label;
  int layers = 5;
  bool fully_connected = true;
  std::string attrs;
  double e_n = 0.0;  // mean max-node error over the eval episodes
};

struct AblationConfig {
  models::TrainConfig base;          // identical budget for every variant
  bool attr_variants = true;         // none, [v,Ks], [dp,v], [dp,Ks], full
  std::vector<int> partial_layers = {5, 10, 15, 20};
};

std::vector<AblationRow> run_ablation(
    const std::vector<pushsim::PushEpisode>& train_episodes,
    const std::vector<pushsim::PushEpisode>& eval_episodes,
    const std::vector<forest::TreeSpec>& trees, const AblationConfig& config);

/// Writers prepend the producing run's config hash when one is given.
void write_report_csv(const EvalReport& report,
                      const std::filesystem::path& path,
                      const std::string& config_hash = "");
void write_report_svg(const EvalReport& report,
                      const std::filesystem::path& path,
                      const std::string& config_hash = "");
void write_rank_csv(const std::vector<RankRow>& rows,
                    const std::filesystem::path& path,
                    const std::string& config_hash = "");
void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::filesystem::path& path,
                        const std::string& config_hash = "");

}  // namespace arbor::evalbench
