#include "arbor/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "arbor/jsonio.hpp"

namespace arbor::models {

using gradnet::adam_step;
using gradnet::make_mlp;
using gradnet::mlp_forward;
using gradnet::MlpParams;
using gradnet::MlpTensors;
using gradnet::Tape;
using gradnet::Tensor;

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{
      {"task", task == Task::kForward ? "forward" : "policy"},
      {"arch", arch == Arch::kGraphNet ? "graphnet" : "pointwise"},
      {"g2g_layers", g2g_layers},
      {"width", width},
      {"mlp_layers", mlp_layers},
      {"fully_connected", encode.fully_connected},
      {"edge_delta", encode.include_delta},
      {"edge_growth", encode.include_growth},
      {"edge_stiffness", encode.include_stiffness},
      {"stiffness_scale", encode.stiffness_scale},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.task = j.at("task").get<std::string>() == "forward" ? Task::kForward
                                                        : Task::kPolicy;
  c.arch = j.at("arch").get<std::string>() == "graphnet" ? Arch::kGraphNet
                                                         : Arch::kPointwise;
  c.g2g_layers = j.at("g2g_layers").get<int>();
  c.width = j.at("width").get<int>();
  c.mlp_layers = j.at("mlp_layers").get<int>();
  c.encode.fully_connected = j.at("fully_connected").get<bool>();
  c.encode.include_delta = j.at("edge_delta").get<bool>();
  c.encode.include_growth = j.at("edge_growth").get<bool>();
  c.encode.include_stiffness = j.at("edge_stiffness").get<bool>();
  c.encode.stiffness_scale = j.at("stiffness_scale").get<double>();
  return c;
}

namespace {

void store_mlp(std::map<std::string, Eigen::MatrixXd>& t,
               const std::string& prefix, const MlpParams& m) {
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    t[prefix + ".w" + std::to_string(l)] = m.weights[l];
    t[prefix + ".b" + std::to_string(l)] = m.biases[l];
  }
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p;
  p.config = c;
  Rng rng = Rng::stream(seed, 0x1417);
  const int w = c.width;
  const int L = c.mlp_layers;
  if (c.arch == Arch::kGraphNet) {
    store_mlp(p.tensors, "enc_node", make_mlp(c.node_in(), w, w, L, rng));
    store_mlp(p.tensors, "enc_edge", make_mlp(c.edge_in(), w, w, L, rng));
    for (int l = 0; l < c.g2g_layers; ++l) {
      const std::string tag = "g2g" + std::to_string(l);
      store_mlp(p.tensors, tag + ".fe",
                make_mlp(c.global_in() + 3 * w, w, w, L, rng));
      store_mlp(p.tensors, tag + ".fn",
                make_mlp(c.global_in() + 2 * w, w, w, L, rng));
    }
    if (c.task == Task::kForward) {
      store_mlp(p.tensors, "head_node", make_mlp(w, w, 3, L, rng));
    } else {
      store_mlp(p.tensors, "head_traj", make_mlp(w, w, 3, L, rng));
      store_mlp(p.tensors, "head_aff", make_mlp(w, w, 1, L, rng));
    }
  } else {
    store_mlp(p.tensors, "pw_local", make_mlp(c.point_in(), w, w, L, rng));
    if (c.task == Task::kForward) {
      store_mlp(p.tensors, "head_node", make_mlp(2 * w, w, 3, L, rng));
    } else {
      store_mlp(p.tensors, "head_traj", make_mlp(2 * w, w, 3, L, rng));
      store_mlp(p.tensors, "head_aff", make_mlp(2 * w, w, 1, L, rng));
    }
  }
  return p;
}

ModelParams ModelParams::from_checkpoint(const gradnet::Checkpoint& ckpt) {
  ModelParams p;
  p.config = ModelConfig::from_json(ckpt.meta.at("model"));
  p.tensors = ckpt.params;
  const auto it = ckpt.scales.find("stiffness");
  if (it != ckpt.scales.end()) p.config.encode.stiffness_scale = it->second;
  return p;
}

gradnet::Checkpoint ModelParams::to_checkpoint(
    const std::string& config_hash,
    const std::optional<gradnet::AdamState>& adam) const {
  gradnet::Checkpoint c;
  c.config_hash = config_hash;
  c.meta["model"] = config.to_json();
  c.scales["stiffness"] = config.encode.stiffness_scale;
  c.params = tensors;
  c.adam = adam;
  return c;
}

Sample encode_sample(const pushsim::PushEpisode& ep,
                     const forest::TreeSpec& tree, const ModelConfig& mc) {
  if (ep.initial_positions.rows() != tree.node_count) {
    throw treegraph::ShapeMismatch("episode does not match tree size");
  }
  Sample s;
  s.initial = ep.initial_positions;
  s.target_positions = ep.final_positions;
  s.target_delta = ep.final_positions - ep.initial_positions;
  s.contact = ep.action.contact_node;
  s.trajectory = ep.action.trajectory;
  s.tree_id = ep.tree_id;
  s.size = tree.node_count;

  if (mc.task == Task::kForward) {
    s.graph = treegraph::encode_forward(tree, ep.action, mc.encode);
  } else {
    s.graph = treegraph::encode_policy(ep.initial_positions,
                                       ep.final_positions, tree, mc.encode);
  }

  const int n = tree.node_count;
  s.point_features.resize(n, mc.point_in());
  s.point_features.leftCols(3) = ep.initial_positions;
  if (mc.task == Task::kForward) {
    s.point_features.col(3).setZero();
    s.point_features(ep.action.contact_node, 3) = 1.0;
    s.point_features.rightCols(3) =
        ep.action.trajectory.transpose().replicate(n, 1);
  } else {
    s.point_features.rightCols(3) = s.target_delta;
  }
  return s;
}

namespace {

// All graphs of a batch concatenated; node/edge rows carry their graph id.
struct GraphBatch {
  Eigen::MatrixXd node_attrs;
  Eigen::MatrixXd edge_attrs;
  Eigen::MatrixXd globals;  // num_graphs x d_g (d_g may be zero)
  std::vector<int> edge_src, edge_dst;
  std::vector<int> node_graph, edge_graph;
  std::vector<int> node_offset;
  int num_graphs = 0;
  int total_nodes = 0;
  int total_edges = 0;
};

GraphBatch make_batch(const std::vector<const Sample*>& samples, Arch arch) {
  GraphBatch b;
  b.num_graphs = static_cast<int>(samples.size());
  int d_g = 0;
  for (const Sample* s : samples) {
    b.node_offset.push_back(b.total_nodes);
    b.total_nodes += s->graph.node_count;
    b.total_edges += static_cast<int>(s->graph.edge_index.rows());
    d_g = static_cast<int>(s->graph.global_attr.size());
  }
  if (arch == Arch::kPointwise) {
    const int d = static_cast<int>(samples[0]->point_features.cols());
    b.node_attrs.resize(b.total_nodes, d);
    for (int i = 0; i < b.num_graphs; ++i) {
      b.node_attrs.middleRows(b.node_offset[i], samples[i]->size) =
          samples[i]->point_features;
      for (int r = 0; r < samples[i]->size; ++r) b.node_graph.push_back(i);
    }
    b.globals.resize(b.num_graphs, 0);
    return b;
  }

  const int d_n = static_cast<int>(samples[0]->graph.node_attrs.cols());
  const int d_e = static_cast<int>(samples[0]->graph.edge_attrs.cols());
  b.node_attrs.resize(b.total_nodes, d_n);
  b.edge_attrs.resize(b.total_edges, d_e);
  b.globals.resize(b.num_graphs, d_g);
  b.edge_src.reserve(b.total_edges);
  b.edge_dst.reserve(b.total_edges);
  int eat = 0;
  for (int i = 0; i < b.num_graphs; ++i) {
    const auto& g = samples[i]->graph;
    const int off = b.node_offset[i];
    b.node_attrs.middleRows(off, g.node_count) = g.node_attrs;
    for (int r = 0; r < g.node_count; ++r) b.node_graph.push_back(i);
    const int e = static_cast<int>(g.edge_index.rows());
    b.edge_attrs.middleRows(eat, e) = g.edge_attrs;
    for (int r = 0; r < e; ++r) {
      b.edge_src.push_back(off + g.edge_index(r, 0));
      b.edge_dst.push_back(off + g.edge_index(r, 1));
      b.edge_graph.push_back(i);
    }
    eat += e;
    b.globals.row(i) = g.global_attr.transpose();
  }
  return b;
}

// Parameters registered on one tape, with name lookup for MLP slices and
// gradient collection.
class ParamsOnTape {
 public:
  ParamsOnTape(Tape& tape, const ModelParams& p, bool trainable) {
    for (const auto& [k, v] : p.tensors) {
      handles_.emplace(k, tape.leaf(v, trainable));
    }
  }

  MlpTensors mlp(const std::string& prefix) const {
    MlpTensors m;
    for (int l = 0;; ++l) {
      const auto wi = handles_.find(prefix + ".w" + std::to_string(l));
      if (wi == handles_.end()) break;
      m.w.push_back(wi->second);
      m.b.push_back(handles_.at(prefix + ".b" + std::to_string(l)));
    }
    if (m.w.empty()) {
      throw gradnet::ShapeMismatch("model has no MLP named " + prefix);
    }
    return m;
  }

  std::map<std::string, Eigen::MatrixXd> grads(const Tape& tape) const {
    std::map<std::string, Eigen::MatrixXd> g;
    for (const auto& [k, h] : handles_) {
      if (tape.has_grad(h)) g[k] = tape.grad(h);
    }
    return g;
  }

 private:
  std::map<std::string, Tensor> handles_;
};

struct HeadsOut {
  Tensor embedding;  // final per-node embedding or pointwise context
  Tensor node_out;   // forward head
  Tensor traj;       // policy heads
  Tensor aff;        // affordance probabilities (segment softmax)
};

HeadsOut run_batch(Tape& tape, const ParamsOnTape& P, const ModelConfig& c,
                   const GraphBatch& b) {
  Tensor x;
  if (c.arch == Arch::kGraphNet) {
    Tensor n = mlp_forward(tape, P.mlp("enc_node"), tape.leaf(b.node_attrs));
    Tensor e = mlp_forward(tape, P.mlp("enc_edge"), tape.leaf(b.edge_attrs));
    Tensor g = tape.leaf(b.globals);
    // the global attribute feeds f_e and f_n at every layer
    Tensor g_edges = tape.gather_rows(g, b.edge_graph);
    Tensor g_nodes = tape.gather_rows(g, b.node_graph);
    for (int l = 0; l < c.g2g_layers; ++l) {
      const std::string tag = "g2g" + std::to_string(l);
      Tensor fe_in =
          tape.concat_cols({g_edges, tape.gather_rows(n, b.edge_src),
                            tape.gather_rows(n, b.edge_dst), e});
      e = mlp_forward(tape, P.mlp(tag + ".fe"), fe_in);
      Tensor agg = tape.segment_sum(e, b.edge_dst, b.total_nodes);
      n = mlp_forward(tape, P.mlp(tag + ".fn"),
                      tape.concat_cols({g_nodes, n, agg}));
    }
    x = n;
  } else {
    Tensor local =
        mlp_forward(tape, P.mlp("pw_local"), tape.leaf(b.node_attrs));
    Tensor pooled = tape.segment_max(local, b.node_graph, b.num_graphs);
    x = tape.concat_cols({local, tape.gather_rows(pooled, b.node_graph)});
  }

  HeadsOut out;
  out.embedding = x;
  if (c.task == Task::kForward) {
    out.node_out = mlp_forward(tape, P.mlp("head_node"), x);
  } else {
    out.traj = mlp_forward(tape, P.mlp("head_traj"), x);
    Tensor logits = mlp_forward(tape, P.mlp("head_aff"), x);
    out.aff = tape.segment_softmax(logits, b.node_graph, b.num_graphs);
  }
  return out;
}

std::vector<const Sample*> to_ptrs(const std::vector<Sample>& samples,
                                   const std::vector<int>& ids) {
  std::vector<const Sample*> p;
  p.reserve(ids.size());
  for (int i : ids) p.push_back(&samples[i]);
  return p;
}

}  // namespace

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> graph2graph_layer(
    const MlpParams& f_e, const MlpParams& f_n,
    const Eigen::VectorXd& global_attr, const Eigen::MatrixXd& nodes,
    const Eigen::MatrixXd& edges,
    const Eigen::Matrix<int, Eigen::Dynamic, 2>& edge_index) {
  if (edges.rows() != edge_index.rows()) {
    throw gradnet::ShapeMismatch("edge attribute / index count mismatch");
  }
  const int n = static_cast<int>(nodes.rows());
  const int e = static_cast<int>(edges.rows());
  Tape tape;
  Tensor nt = tape.leaf(nodes);
  Tensor et = tape.leaf(edges);
  Tensor gt = tape.leaf(global_attr.transpose());
  std::vector<int> src(e), dst(e);
  for (int k = 0; k < e; ++k) {
    src[k] = edge_index(k, 0);
    dst[k] = edge_index(k, 1);
  }
  Tensor g_e = tape.gather_rows(gt, std::vector<int>(e, 0));
  Tensor g_n = tape.gather_rows(gt, std::vector<int>(n, 0));
  Tensor e_new = mlp_forward(
      tape, f_e,
      tape.concat_cols({g_e, tape.gather_rows(nt, src),
                        tape.gather_rows(nt, dst), et}));
  Tensor agg = tape.segment_sum(e_new, dst, n);
  Tensor n_new =
      mlp_forward(tape, f_n, tape.concat_cols({g_n, nt, agg}));
  return {tape.value(n_new), tape.value(e_new)};
}

namespace {

ForwardPrediction forward_from_rows(const Eigen::MatrixXd& rows, int offset,
                                    int n) {
  ForwardPrediction p;
  p.delta_positions = rows.middleRows(offset, n);
  return p;
}

PolicyPrediction policy_from_rows(const Eigen::MatrixXd& traj,
                                  const Eigen::MatrixXd& aff, int offset,
                                  int n) {
  PolicyPrediction p;
  p.per_node_trajectory = traj.middleRows(offset, n);
  p.affordance = aff.col(0).segment(offset, n);
  return p;
}

}  // namespace

std::vector<ForwardPrediction> predict_forward_batch(
    const ModelParams& params, const std::vector<Sample>& samples,
    int batch_size) {
  if (params.config.task != Task::kForward) {
    throw gradnet::ShapeMismatch("checkpoint is not a forward model");
  }
  std::vector<ForwardPrediction> out;
  out.reserve(samples.size());
  for (std::size_t at = 0; at < samples.size();
       at += static_cast<std::size_t>(batch_size)) {
    std::vector<const Sample*> chunk;
    for (std::size_t i = at;
         i < samples.size() && i < at + static_cast<std::size_t>(batch_size);
         ++i) {
      chunk.push_back(&samples[i]);
    }
    Tape tape;
    ParamsOnTape P(tape, params, false);
    const GraphBatch b = make_batch(chunk, params.config.arch);
    const HeadsOut heads = run_batch(tape, P, params.config, b);
    const auto& rows = tape.value(heads.node_out);
    for (int i = 0; i < b.num_graphs; ++i) {
      out.push_back(forward_from_rows(rows, b.node_offset[i], chunk[i]->size));
    }
  }
  return out;
}

std::vector<PolicyPrediction> predict_policy_batch(
    const ModelParams& params, const std::vector<Sample>& samples,
    int batch_size) {
  if (params.config.task != Task::kPolicy) {
    throw gradnet::ShapeMismatch("checkpoint is not a contact policy");
  }
  std::vector<PolicyPrediction> out;
  out.reserve(samples.size());
  for (std::size_t at = 0; at < samples.size();
       at += static_cast<std::size_t>(batch_size)) {
    std::vector<const Sample*> chunk;
    for (std::size_t i = at;
         i < samples.size() && i < at + static_cast<std::size_t>(batch_size);
         ++i) {
      chunk.push_back(&samples[i]);
    }
    Tape tape;
    ParamsOnTape P(tape, params, false);
    const GraphBatch b = make_batch(chunk, params.config.arch);
    const HeadsOut heads = run_batch(tape, P, params.config, b);
    const auto& traj = tape.value(heads.traj);
    const auto& aff = tape.value(heads.aff);
    for (int i = 0; i < b.num_graphs; ++i) {
      out.push_back(
          policy_from_rows(traj, aff, b.node_offset[i], chunk[i]->size));
    }
  }
  return out;
}

namespace {

Sample sample_from_graph(const treegraph::TreeGraph& graph) {
  Sample s;
  s.graph = graph;
  s.size = graph.node_count;
  return s;
}

}  // namespace

ForwardPrediction forward_predict(const ModelParams& params,
                                  const treegraph::TreeGraph& graph) {
  return predict_forward_batch(params, {sample_from_graph(graph)}, 1)[0];
}

PolicyPrediction policy_predict(const ModelParams& params,
                                const treegraph::TreeGraph& graph) {
  return predict_policy_batch(params, {sample_from_graph(graph)}, 1)[0];
}

ForwardPrediction pointwise_forward_predict(const ModelParams& params,
                                            const Eigen::MatrixXd& features) {
  Sample s;
  s.point_features = features;
  s.size = static_cast<int>(features.rows());
  s.graph.node_count = s.size;
  return predict_forward_batch(params, {std::move(s)}, 1)[0];
}

PolicyPrediction pointwise_policy_predict(const ModelParams& params,
                                          const Eigen::MatrixXd& features) {
  Sample s;
  s.point_features = features;
  s.size = static_cast<int>(features.rows());
  s.graph.node_count = s.size;
  return predict_policy_batch(params, {std::move(s)}, 1)[0];
}

ForwardPrediction predict_forward_sample(const ModelParams& params,
                                         const Sample& s) {
  return predict_forward_batch(params, {s}, 1)[0];
}

PolicyPrediction predict_policy_sample(const ModelParams& params,
                                       const Sample& s) {
  return predict_policy_batch(params, {s}, 1)[0];
}

pushsim::PushAction policy_action(const PolicyPrediction& pred,
                                  double max_norm) {
  pushsim::PushAction a;
  int best = 1;
  for (int j = 2; j < pred.affordance.size(); ++j) {
    if (pred.affordance[j] > pred.affordance[best]) best = j;
  }
  a.contact_node = best;
  Eigen::Vector3d t = pred.per_node_trajectory.row(best).transpose();
  const double n = t.norm();
  if (n > max_norm) t *= max_norm / n;
  a.trajectory = t;
  return a;
}

double forward_e_n(const ModelParams& params, const std::vector<Sample>& val) {
  const auto preds = predict_forward_batch(params, val);
  double sum = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const Eigen::MatrixXd predicted =
        val[i].initial + preds[i].delta_positions;
    double worst = 0.0;
    for (int r = 0; r < predicted.rows(); ++r) {
      worst = std::max(
          worst, (predicted.row(r) - val[i].target_positions.row(r)).norm());
    }
    sum += worst;
  }
  return sum / static_cast<double>(val.size());
}

namespace {

double median_branch_stiffness(const std::vector<forest::TreeSpec>& trees) {
  std::vector<double> ks;
  for (const auto& t : trees) {
    for (int i = 0; i < t.stiffness.size(); ++i) ks.push_back(t.stiffness[i]);
  }
  if (ks.empty()) return 1.0;
  std::sort(ks.begin(), ks.end());
  const std::size_t n = ks.size();
  return n % 2 == 1 ? ks[n / 2] : 0.5 * (ks[n / 2 - 1] + ks[n / 2]);
}

struct BatchTargets {
  Eigen::MatrixXd delta;          // total_nodes x 3
  std::vector<int> contact_rows;  // global node row per graph
  Eigen::MatrixXd traj;           // num_graphs x 3
};

BatchTargets make_targets(const std::vector<const Sample*>& chunk,
                          const GraphBatch& b, Task task) {
  BatchTargets t;
  if (task == Task::kForward) {
    t.delta.resize(b.total_nodes, 3);
    for (int i = 0; i < b.num_graphs; ++i) {
      t.delta.middleRows(b.node_offset[i], chunk[i]->size) =
          chunk[i]->target_delta;
    }
  } else {
    t.traj.resize(b.num_graphs, 3);
    for (int i = 0; i < b.num_graphs; ++i) {
      t.contact_rows.push_back(b.node_offset[i] + chunk[i]->contact);
      t.traj.row(i) = chunk[i]->trajectory.transpose();
    }
  }
  return t;
}

// Builds the loss for one batch; shared by the training step and the frozen
// full-batch re-evaluation.
Tensor batch_loss(Tape& tape, const ParamsOnTape& P, const ModelConfig& mc,
                  const GraphBatch& b, const BatchTargets& targets,
                  double lambda_traj) {
  const HeadsOut heads = run_batch(tape, P, mc, b);
  if (mc.task == Task::kForward) {
    return tape.mse(heads.node_out, targets.delta);
  }
  Tensor ce = tape.cross_entropy(heads.aff, targets.contact_rows);
  Tensor tr = tape.mse(tape.gather_rows(heads.traj, targets.contact_rows),
                       targets.traj);
  return tape.add(ce, tape.scale(tr, lambda_traj));
}

double frozen_loss(const ModelParams& params,
                   const std::vector<Sample>& samples,
                   const std::vector<int>& ids, int batch_size,
                   double lambda_traj) {
  double total = 0.0;
  int count = 0;
  for (std::size_t at = 0; at < ids.size();
       at += static_cast<std::size_t>(batch_size)) {
    std::vector<int> chunk_ids(
        ids.begin() + static_cast<std::ptrdiff_t>(at),
        ids.begin() + static_cast<std::ptrdiff_t>(
                          std::min(ids.size(), at + batch_size)));
    const auto chunk = to_ptrs(samples, chunk_ids);
    Tape tape;
    ParamsOnTape P(tape, params, false);
    const GraphBatch b = make_batch(chunk, params.config.arch);
    const BatchTargets t = make_targets(chunk, b, params.config.task);
    Tensor loss = batch_loss(tape, P, params.config, b, t, lambda_traj);
    total += tape.value(loss)(0, 0) * static_cast<double>(chunk.size());
    count += static_cast<int>(chunk.size());
  }
  return total / std::max(1, count);
}

double policy_val_e_n(const ModelParams& params,
                      const std::vector<Sample>& samples,
                      const std::vector<int>& ids,
                      const ActionExecutor& executor) {
  std::vector<Sample> val;
  for (int i : ids) val.push_back(samples[i]);
  const auto preds = predict_policy_batch(params, val);
  double sum = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const pushsim::PushAction a = policy_action(preds[i]);
    const forest::Points result = executor(val[i].tree_id, a);
    double worst = 0.0;
    for (int r = 0; r < result.rows(); ++r) {
      worst = std::max(
          worst, (result.row(r) - val[i].target_positions.row(r)).norm());
    }
    sum += worst;
  }
  return sum / static_cast<double>(val.size());
}

TrainResult train_model(const std::vector<pushsim::PushEpisode>& episodes,
                        const std::vector<forest::TreeSpec>& trees,
                        const TrainConfig& config,
                        const ActionExecutor* executor) {
  if (episodes.empty()) throw EmptyDataset("no training episodes");
  ModelConfig mc = config.model;
  mc.encode.stiffness_scale = median_branch_stiffness(trees);

  std::vector<Sample> samples;
  samples.reserve(episodes.size());
  for (const auto& ep : episodes) {
    if (ep.tree_id < 0 || ep.tree_id >= static_cast<int>(trees.size())) {
      throw EmptyDataset("episode references missing tree " +
                         std::to_string(ep.tree_id));
    }
    samples.push_back(encode_sample(ep, trees[ep.tree_id], mc));
  }

  // deterministic split: shuffled indices, validation head
  std::vector<int> ids(samples.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  Rng split_rng = Rng::stream(config.seed, 0x5b717);
  for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i) {
    std::swap(ids[i], ids[split_rng.below(static_cast<std::uint64_t>(i + 1))]);
  }
  int val_count = std::max(
      1, static_cast<int>(std::lround(config.val_fraction *
                                      static_cast<double>(ids.size()))));
  val_count = std::min(val_count, static_cast<int>(ids.size()) - 1);
  const std::vector<int> val_ids(ids.begin(), ids.begin() + val_count);
  std::vector<int> train_ids(ids.begin() + val_count, ids.end());

  ModelParams params;
  gradnet::AdamState adam;
  int start_epoch = 0;
  if (!config.resume.empty()) {
    const auto ckpt = gradnet::load_checkpoint(config.resume);
    params = ModelParams::from_checkpoint(ckpt);
    mc = params.config;
    if (ckpt.adam) adam = *ckpt.adam;
    if (ckpt.meta.contains("epochs_done")) {
      start_epoch = ckpt.meta["epochs_done"].get<int>();
    }
  } else {
    params = ModelParams::init(mc, config.seed);
  }

  TrainResult result;
  result.best = params;
  result.best_val_e_n = std::numeric_limits<double>::infinity();
  int since_best = 0;

  const auto eval_val = [&]() {
    std::vector<Sample> val;
    for (int i : val_ids) val.push_back(samples[i]);
    return mc.task == Task::kForward
               ? forward_e_n(params, val)
               : policy_val_e_n(params, samples, val_ids, *executor);
  };

  const auto save_artifacts = [&](int epochs_done) {
    if (config.out_dir.empty()) return;
    auto best = result.best.to_checkpoint(config.config_hash);
    best.meta["epochs_done"] = epochs_done;
    best.meta["best_epoch"] = result.best_epoch;
    best.meta["best_val_e_n"] = result.best_val_e_n;
    gradnet::save_checkpoint(best, config.out_dir / "checkpoint.json");
    auto last = params.to_checkpoint(config.config_hash, adam);
    last.meta["epochs_done"] = epochs_done;
    gradnet::save_checkpoint(last, config.out_dir / "last.json");
    std::string csv = "epoch,train_loss,val_e_n\n";
    for (const auto& m : result.metrics) {
      csv += std::to_string(m.epoch) + "," + jsonio::format_double(m.train_loss) +
             "," + jsonio::format_double(m.val_e_n) + "\n";
    }
    jsonio::write_file(config.out_dir / "metrics.csv", csv);
  };

  int epoch = start_epoch;
  try {
    for (; epoch < start_epoch + config.epochs; ++epoch) {
      Rng shuffle_rng = Rng::stream(config.seed, 0x504f, epoch);
      for (int i = static_cast<int>(train_ids.size()) - 1; i > 0; --i) {
        std::swap(train_ids[i],
                  train_ids[shuffle_rng.below(static_cast<std::uint64_t>(i + 1))]);
      }
      for (std::size_t at = 0; at < train_ids.size();
           at += static_cast<std::size_t>(config.batch_size)) {
        std::vector<int> chunk_ids(
            train_ids.begin() + static_cast<std::ptrdiff_t>(at),
            train_ids.begin() +
                static_cast<std::ptrdiff_t>(std::min(
                    train_ids.size(), at + config.batch_size)));
        const auto chunk = to_ptrs(samples, chunk_ids);
        Tape tape;
        ParamsOnTape P(tape, params, true);
        const GraphBatch b = make_batch(chunk, mc.arch);
        const BatchTargets t = make_targets(chunk, b, mc.task);
        Tensor loss = batch_loss(tape, P, mc, b, t, config.lambda_traj);
        const double lv = tape.value(loss)(0, 0);
        if (!std::isfinite(lv)) throw NonFiniteLoss("loss is not finite");
        tape.backward(loss);
        tape.check_finite();
        adam_step(adam, params.tensors, P.grads(tape), {.lr = config.lr});
      }

      EpochMetric m;
      m.epoch = epoch;
      m.train_loss = frozen_loss(params, samples, train_ids,
                                 config.batch_size, config.lambda_traj);
      m.val_e_n = eval_val();
      result.metrics.push_back(m);
      if (config.verbose) {
        std::fprintf(stderr, "epoch %d train_loss %.6g val_e_n %.6g\n",
                     m.epoch, m.train_loss, m.val_e_n);
      }

      if (m.val_e_n < result.best_val_e_n) {
        result.best_val_e_n = m.val_e_n;
        result.best_epoch = epoch;
        result.best = params;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        ++epoch;
        break;
      }
    }
  } catch (const NonFiniteLoss&) {
    save_artifacts(epoch);  // last-good checkpoint survives the abort
    throw;
  }

  save_artifacts(epoch);
  return result;
}

}  // namespace

TrainResult train_forward(const std::vector<pushsim::PushEpisode>& episodes,
                          const std::vector<forest::TreeSpec>& trees,
                          const TrainConfig& config) {
  if (config.model.task != Task::kForward) {
    throw gradnet::ShapeMismatch("train_forward needs a forward-task config");
  }
  return train_model(episodes, trees, config, nullptr);
}

TrainResult train_policy(const std::vector<pushsim::PushEpisode>& episodes,
                         const std::vector<forest::TreeSpec>& trees,
                         const TrainConfig& config,
                         const ActionExecutor& executor) {
  if (config.model.task != Task::kPolicy) {
    throw gradnet::ShapeMismatch("train_policy needs a policy-task config");
  }
  return train_model(episodes, trees, config, &executor);
}

}  // namespace arbor::models
