#pragma once

// The learned components: a graph2graph message-passing network with
// forward-model and contact-policy heads, a point-wise max-pool baseline
// with the same heads, and the training loops that produce checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "arbor/forest.hpp"
#include "arbor/gradnet.hpp"
#include "arbor/pushsim.hpp"
#include "arbor/treegraph.hpp"

namespace arbor::models {

struct EmptyDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Task { kForward, kPolicy };
enum class Arch { kGraphNet, kPointwise };

struct ModelConfig {
  Task task = Task::kForward;
  Arch arch = Arch::kGraphNet;
  int g2g_layers = 5;
  int width = 128;      // node/edge embedding and MLP hidden width
  int mlp_layers = 3;
  treegraph::EncodeOptions encode;

  int node_in() const { return task == Task::kForward ? 1 : 3; }
  int global_in() const { return task == Task::kForward ? 3 : 0; }
  int edge_in() const { return treegraph::edge_dim(encode); }
  /// Per-node feature width seen by the point-wise baseline: positions plus
  /// the graph model's node and (broadcast) global attributes.
  int point_in() const { return 3 + node_in() + global_in(); }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Named parameter tensors plus the config needed to interpret them.
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Eigen::MatrixXd> tensors;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
  static ModelParams from_checkpoint(const gradnet::Checkpoint& ckpt);
  gradnet::Checkpoint to_checkpoint(const std::string& config_hash,
                                    const std::optional<gradnet::AdamState>&
                                        adam = std::nullopt) const;
};

struct ForwardPrediction {
  Eigen::Matrix<double, Eigen::Dynamic, 3> delta_positions;
};

struct PolicyPrediction {
  Eigen::Matrix<double, Eigen::Dynamic, 3> per_node_trajectory;
  Eigen::VectorXd affordance;  // softmax over nodes, sums to 1
};

/// One episode prepared for either architecture, with training targets.
struct Sample {
  treegraph::TreeGraph graph;
  Eigen::MatrixXd point_features;
  Eigen::Matrix<double, Eigen::Dynamic, 3> initial;
  Eigen::Matrix<double, Eigen::Dynamic, 3> target_positions;
  Eigen::Matrix<double, Eigen::Dynamic, 3> target_delta;
  int contact = 0;
  Eigen::Vector3d trajectory = Eigen::Vector3d::Zero();
  int tree_id = 0;
  int size = 0;
};

Sample encode_sample(const pushsim::PushEpisode& ep,
                     const forest::TreeSpec& tree, const ModelConfig& config);

/// One message-passing round (standalone, ungraded): new edge embeddings
/// e* = f_e(g, n_src, n_dst, e) for every edge, incoming-sum aggregation,
/// then n* = f_n(g, n, sum_in e*).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> graph2graph_layer(
    const gradnet::MlpParams& f_e, const gradnet::MlpParams& f_n,
    const Eigen::VectorXd& global_attr, const Eigen::MatrixXd& nodes,
    const Eigen::MatrixXd& edges,
    const Eigen::Matrix<int, Eigen::Dynamic, 2>& edge_index);

ForwardPrediction forward_predict(const ModelParams& params,
                                  const treegraph::TreeGraph& graph);
PolicyPrediction policy_predict(const ModelParams& params,
                                const treegraph::TreeGraph& graph);

/// Point-wise baseline: shared per-node MLP, column-wise max pool, pooled
/// context concatenated back per node, then the head MLPs. No edges.
ForwardPrediction pointwise_forward_predict(const ModelParams& params,
                                            const Eigen::MatrixXd& features);
PolicyPrediction pointwise_policy_predict(const ModelParams& params,
                                          const Eigen::MatrixXd& features);

ForwardPrediction predict_forward_sample(const ModelParams& params,
                                         const Sample& s);
PolicyPrediction predict_policy_sample(const ModelParams& params,
                                       const Sample& s);

/// Batched inference; one tape per chunk keeps the GEMMs large.
std::vector<ForwardPrediction> predict_forward_batch(
    const ModelParams& params, const std::vector<Sample>& samples,
    int batch_size = 64);
std::vector<PolicyPrediction> predict_policy_batch(
    const ModelParams& params, const std::vector<Sample>& samples,
    int batch_size = 64);

/// Executes a push in whatever simulator the caller wires in and returns
/// the resulting node positions. contact_node 0 means "no feasible push";
/// implementations return the initial state unchanged.
using ActionExecutor = std::function<forest::Points(
    int tree_id, const pushsim::PushAction& action)>;

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double lr = 0.001;
  double lambda_traj = 1.0;  // weight of the trajectory term in policy loss
  double val_fraction = 0.1;
  int patience = 10;  // early stopping on validation e_N
  std::uint64_t seed = 0;
  ModelConfig model;
  std::filesystem::path out_dir;  // empty: keep results in memory only
  std::string config_hash;
  std::filesystem::path resume;   // optional "last" checkpoint
  bool verbose = false;
};

struct EpochMetric {
  int epoch = 0;
  double train_loss = 0.0;  // full-batch loss at frozen end-of-epoch params
  double val_e_n = 0.0;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochMetric> metrics;
  double best_val_e_n = 0.0;
  int best_epoch = -1;
};

TrainResult train_forward(const std::vector<pushsim::PushEpisode>& episodes,
                          const std::vector<forest::TreeSpec>& trees,
                          const TrainConfig& config);

/// Policy training scores validation by executing the predicted action, so
/// it needs an executor (see evalbench::make_sim_executor).
TrainResult train_policy(const std::vector<pushsim::PushEpisode>& episodes,
                         const std::vector<forest::TreeSpec>& trees,
                         const TrainConfig& config,
                         const ActionExecutor& executor);

/// Mean over episodes of the max-node position error of direct forward
/// prediction; the validation metric for forward training.
double forward_e_n(const ModelParams& params, const std::vector<Sample>& val);

/// Top-affordance action for execution: argmax over non-root nodes, with the
/// predicted trajectory clamped to max_norm.
pushsim::PushAction
policy_action(const PolicyPrediction& pred, double max_norm = 0.5);

}  // namespace arbor::models
