#pragma once

// Dense-tensor reverse-mode automatic differentiation on Eigen matrices,
// plus the MLP and Adam building blocks every learned component uses. A
// Tape owns one computation graph; values are computed eagerly and
// gradients by reverse accumulation in creation order. 64-bit floats
// throughout.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "arbor/rng.hpp"

namespace arbor::gradnet {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotScalarLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Tensor {
  int id = -1;
};

/// Single-threaded recording graph. Row-parallel ops (matmul in particular)
/// are computed so that each output row is a bitwise-stable function of the
/// corresponding input row, which makes model outputs exactly equivariant
/// under node permutations.
class Tape {
 public:
  Tensor leaf(Eigen::MatrixXd value, bool requires_grad = false);

  const Eigen::MatrixXd& value(Tensor t) const { return node(t).value; }
  /// Gradient after backward(); zero-shaped matrices never participate.
  const Eigen::MatrixXd& grad(Tensor t) const;
  bool has_grad(Tensor t) const;

  Tensor matmul(Tensor a, Tensor b);
  Tensor add(Tensor a, Tensor b);
  /// Broadcast a 1 x C bias row over every row of a.
  Tensor add_rowvec(Tensor a, Tensor row);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor gather_rows(Tensor a, std::vector<int> rows);
  /// out.row(seg[r]) += a.row(r), accumulated in list order.
  Tensor segment_sum(Tensor a, std::vector<int> segment, int segments);
  /// Column-wise max per segment; gradients flow to the first argmax row.
  Tensor segment_max(Tensor a, std::vector<int> segment, int segments);
  Tensor relu(Tensor a);
  /// Softmax down the single column of a, normalized within each segment.
  Tensor segment_softmax(Tensor a, const std::vector<int>& segment,
                         int segments);
  Tensor softmax(Tensor a);
  /// Mean over rows of the squared row error: sum((pred-target)^2) / rows.
  Tensor mse(Tensor pred, Eigen::MatrixXd target);
  /// -mean_b log(probs[target_rows[b]]); probs is a single column.
  Tensor cross_entropy(Tensor probs, std::vector<int> target_rows);
  Tensor sum(Tensor a);
  Tensor scale(Tensor a, double c);

  void backward(Tensor loss);

  /// Throws on any non-finite value or gradient currently on the tape.
  void check_finite() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::function<void(Tape&)> back;
  };

  Node& node(Tensor t);
  const Node& node(Tensor t) const;
  Eigen::MatrixXd& grad_buffer(int id);
  Tensor push(Eigen::MatrixXd value, bool requires_grad,
              std::function<void(Tape&)> back);

  std::vector<Node> nodes_;
};

enum class Activation { kRelu, kIdentity };

/// Chain of affine layers; hidden layers pass through the activation, the
/// final layer is affine only. Weights are (in x out), biases (1 x out).
struct MlpParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::MatrixXd> biases;
  Activation hidden = Activation::kRelu;

  int input_dim() const { return static_cast<int>(weights.front().rows()); }
  int output_dim() const { return static_cast<int>(weights.back().cols()); }
};

/// He-style uniform fan-in init, biases zero. `layers` counts affine layers
/// (default three: in -> hidden -> hidden -> out).
MlpParams make_mlp(int input, int hidden, int output, int layers, Rng& rng);

struct MlpTensors {
  std::vector<Tensor> w, b;
  Activation hidden = Activation::kRelu;
};

MlpTensors mlp_to_tape(Tape& tape, const MlpParams& params);
Tensor mlp_forward(Tape& tape, const MlpTensors& mlp, Tensor input);
/// Convenience overload registering the parameters as gradient leaves.
Tensor mlp_forward(Tape& tape, const MlpParams& params, Tensor input);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Eigen::MatrixXd> m, v;
  std::int64_t step = 0;
};

/// Standard bias-corrected Adam update, iterating parameters in name order.
void adam_step(AdamState& state, std::map<std::string, Eigen::MatrixXd>& params,
               const std::map<std::string, Eigen::MatrixXd>& grads,
               const AdamConfig& cfg = {});

/// Versioned JSON container of named tensors, optimizer state, and the
/// normalization scales the producing run used.
struct Checkpoint {
  int version = 1;
  std::string config_hash;
  nlohmann::json meta;
  std::map<std::string, double> scales;
  std::map<std::string, Eigen::MatrixXd> params;
  std::optional<AdamState> adam;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace arbor::gradnet
