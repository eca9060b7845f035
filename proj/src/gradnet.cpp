#include "arbor/gradnet.hpp"

#include <cmath>
#include <limits>

#include "arbor/jsonio.hpp"

namespace arbor::gradnet {

namespace {

// Row-count padding for matmul. With the row dimension a multiple of 48
// every micro-kernel strip Eigen uses is full, so each output row is the
// same bitwise function of its input row regardless of where it sits. That
// is what makes model outputs exactly equivariant under node permutations.
int pad48(int m) { return ((m + 47) / 48) * 48; }

Eigen::MatrixXd padded_product(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b) {
  const int m = static_cast<int>(a.rows());
  const int p = pad48(m);
  if (p == m) {
    Eigen::MatrixXd out;
    out.noalias() = a * b;
    return out;
  }
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(p, a.cols());
  padded.topRows(m) = a;
  Eigen::MatrixXd full;
  full.noalias() = padded * b;
  return full.topRows(m);
}

}  // namespace

Tape::Node& Tape::node(Tensor t) {
  if (t.id < 0 || t.id >= static_cast<int>(nodes_.size())) {
    throw std::out_of_range("tensor handle does not belong to this tape");
  }
  return nodes_[t.id];
}

const Tape::Node& Tape::node(Tensor t) const {
  if (t.id < 0 || t.id >= static_cast<int>(nodes_.size())) {
    throw std::out_of_range("tensor handle does not belong to this tape");
  }
  return nodes_[t.id];
}

Eigen::MatrixXd& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

Tensor Tape::push(Eigen::MatrixXd value, bool requires_grad,
                  std::function<void(Tape&)> back) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, false,
                        requires_grad ? std::move(back) : nullptr});
  return Tensor{static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::leaf(Eigen::MatrixXd value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

const Eigen::MatrixXd& Tape::grad(Tensor t) const {
  const Node& n = node(t);
  if (!n.grad_ready) {
    throw std::runtime_error("tensor has no gradient (detached or unused)");
  }
  return n.grad;
}

bool Tape::has_grad(Tensor t) const { return node(t).grad_ready; }

Tensor Tape::matmul(Tensor a, Tensor b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeMismatch("matmul: inner dimensions disagree");
  }
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  Tensor out = push(padded_product(av, bv), rg, nullptr);
  if (rg) {
    const int self = out.id;
    node(out).back = [self, a, b](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      if (t.node(a).requires_grad) {
        t.grad_buffer(a.id).noalias() += go * t.value(b).transpose();
      }
      if (t.node(b).requires_grad) {
        t.grad_buffer(b.id).noalias() += t.value(a).transpose() * go;
      }
    };
  }
  return out;
}

Tensor Tape::add(Tensor a, Tensor b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw ShapeMismatch("add: shapes disagree");
  }
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  Tensor out = push(av + bv, rg, nullptr);
  if (rg) {
    const int self = out.id;
    node(out).back = [self, a, b](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      if (t.node(a).requires_grad) t.grad_buffer(a.id) += go;
      if (t.node(b).requires_grad) t.grad_buffer(b.id) += go;
    };
  }
  return out;
}

Tensor Tape::add_rowvec(Tensor a, Tensor row) {
  const auto& av = value(a);
  const auto& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeMismatch("add_rowvec: bias must be 1 x cols");
  }
  const bool rg = node(a).requires_grad || node(row).requires_grad;
  Eigen::MatrixXd v = av;
  v.rowwise() += rv.row(0);
  Tensor out = push(std::move(v), rg, nullptr);
  if (rg) {
    const int self = out.id;
    node(out).back = [self, a, row](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      if (t.node(a).requires_grad) t.grad_buffer(a.id) += go;
      if (t.node(row).requires_grad) {
        t.grad_buffer(row.id).row(0) += go.colwise().sum();
      }
    };
  }
  return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const int rows = static_cast<int>(value(parts[0]).rows());
  int cols = 0;
  bool rg = false;
  for (Tensor p : parts) {
    if (value(p).rows() != rows) {
      throw ShapeMismatch("concat_cols: row counts disagree");
    }
    cols += static_cast<int>(value(p).cols());
    rg = rg || node(p).requires_grad;
  }
  Eigen::MatrixXd v(rows, cols);
  int at = 0;
  for (Tensor p : parts) {
    const auto& pv = value(p);
    v.middleCols(at, pv.cols()) = pv;
    at += static_cast<int>(pv.cols());
  }
  Tensor out = push(std::move(v), rg, nullptr);
  if (rg) {
    const int self = out.id;
    const std::vector<Tensor> ins = parts;
    node(out).back = [self, ins](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      int at = 0;
      for (Tensor p : ins) {
        const int w = static_cast<int>(t.value(p).cols());
        if (t.node(p).requires_grad) {
          t.grad_buffer(p.id) += go.middleCols(at, w);
        }
        at += w;
      }
    };
  }
  return out;
}

Tensor Tape::gather_rows(Tensor a, std::vector<int> rows) {
  const auto& av = value(a);
  Eigen::MatrixXd v(static_cast<int>(rows.size()), av.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= av.rows()) {
      throw ShapeMismatch("gather_rows: index out of range");
    }
    v.row(static_cast<int>(k)) = av.row(rows[k]);
  }
  Tensor out = push(std::move(v), node(a).requires_grad, nullptr);
  if (node(a).requires_grad) {
    const int self = out.id;
    node(out).back = [self, a, idx = std::move(rows)](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      Eigen::MatrixXd& ga = t.grad_buffer(a.id);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        ga.row(idx[k]) += go.row(static_cast<int>(k));
      }
    };
  }
  return out;
}

Tensor Tape::segment_sum(Tensor a, std::vector<int> segment, int segments) {
  const auto& av = value(a);
  if (static_cast<int>(segment.size()) != av.rows()) {
    throw ShapeMismatch("segment_sum: one segment id per row required");
  }
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(segments, av.cols());
  for (int r = 0; r < av.rows(); ++r) {
    if (segment[r] < 0 || segment[r] >= segments) {
      throw ShapeMismatch("segment_sum: segment id out of range");
    }
    v.row(segment[r]) += av.row(r);
  }
  Tensor out = push(std::move(v), node(a).requires_grad, nullptr);
  if (node(a).requires_grad) {
    const int self = out.id;
    node(out).back = [self, a, seg = std::move(segment)](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      Eigen::MatrixXd& ga = t.grad_buffer(a.id);
      for (std::size_t r = 0; r < seg.size(); ++r) {
        ga.row(static_cast<int>(r)) += go.row(seg[r]);
      }
    };
  }
  return out;
}

Tensor Tape::segment_max(Tensor a, std::vector<int> segment, int segments) {
  const auto& av = value(a);
  if (static_cast<int>(segment.size()) != av.rows()) {
    throw ShapeMismatch("segment_max: one segment id per row required");
  }
  Eigen::MatrixXd v = Eigen::MatrixXd::Constant(
      segments, av.cols(), -std::numeric_limits<double>::infinity());
  Eigen::MatrixXi arg = Eigen::MatrixXi::Constant(segments, av.cols(), -1);
  for (int r = 0; r < av.rows(); ++r) {
    if (segment[r] < 0 || segment[r] >= segments) {
      throw ShapeMismatch("segment_max: segment id out of range");
    }
    for (int c = 0; c < av.cols(); ++c) {
      if (av(r, c) > v(segment[r], c)) {
        v(segment[r], c) = av(r, c);
        arg(segment[r], c) = r;
      }
    }
  }
  Tensor out = push(std::move(v), node(a).requires_grad, nullptr);
  if (node(a).requires_grad) {
    const int self = out.id;
    node(out).back = [self, a, arg](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      Eigen::MatrixXd& ga = t.grad_buffer(a.id);
      for (int s = 0; s < go.rows(); ++s) {
        for (int c = 0; c < go.cols(); ++c) {
          if (arg(s, c) >= 0) ga(arg(s, c), c) += go(s, c);
        }
      }
    };
  }
  return out;
}

Tensor Tape::relu(Tensor a) {
  const auto& av = value(a);
  Tensor out = push(av.cwiseMax(0.0), node(a).requires_grad, nullptr);
  if (node(a).requires_grad) {
    const int self = out.id;
    node(out).back = [self, a](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      t.grad_buffer(a.id).array() +=
          (t.value(a).array() > 0.0).cast<double>() * go.array();
    };
  }
  return out;
}

Tensor Tape::segment_softmax(Tensor a, const std::vector<int>& segment,
                             int segments) {
  const auto& av = value(a);
  if (av.cols() != 1) throw ShapeMismatch("segment_softmax: single column");
  if (static_cast<int>(segment.size()) != av.rows()) {
    throw ShapeMismatch("segment_softmax: one segment id per row required");
  }
  Eigen::VectorXd mx = Eigen::VectorXd::Constant(
      segments, -std::numeric_limits<double>::infinity());
  for (int r = 0; r < av.rows(); ++r) {
    if (segment[r] < 0 || segment[r] >= segments) {
      throw ShapeMismatch("segment_softmax: segment id out of range");
    }
    mx[segment[r]] = std::max(mx[segment[r]], av(r, 0));
  }
  Eigen::MatrixXd v(av.rows(), 1);
  Eigen::VectorXd denom = Eigen::VectorXd::Zero(segments);
  for (int r = 0; r < av.rows(); ++r) {
    v(r, 0) = std::exp(av(r, 0) - mx[segment[r]]);
    denom[segment[r]] += v(r, 0);
  }
  for (int r = 0; r < av.rows(); ++r) v(r, 0) /= denom[segment[r]];
  Tensor out = push(std::move(v), node(a).requires_grad, nullptr);
  if (node(a).requires_grad) {
    const int self = out.id;
    node(out).back = [self, a, seg = segment, segments](Tape& t) {
      const Eigen::MatrixXd& go = t.nodes_[self].grad;
      const Eigen::MatrixXd& p = t.nodes_[self].value;
      Eigen::VectorXd dots = Eigen::VectorXd::Zero(segments);
      for (std::size_t r = 0; r < seg.size(); ++r) {
        dots[seg[r]] += go(static_cast<int>(r), 0) * p(static_cast<int>(r), 0);
      }
      Eigen::MatrixXd& ga = t.grad_buffer(a.id);
      for (std::size_t r = 0; r < seg.size(); ++r) {
        const int i = static_cast<int>(r);
        ga(i, 0) += p(i, 0) * (go(i, 0) - dots[seg[r]]);
      }
    };
  }
  return out;
}

Tensor Tape::softmax(Tensor a) {
  return segment_softmax(a, std::vector<int>(value(a).rows(), 0), 1);
}

Tensor Tape::mse(Tensor pred, Eigen::MatrixXd target) {
  const auto& pv = value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) {
    throw ShapeMismatch("mse: shapes disagree");
  }
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = (pv - target).squaredNorm() / static_cast<double>(pv.rows());
  Tensor out = push(std::move(v), node(pred).requires_grad, nullptr);
  if (node(pred).requires_grad) {
    const int self = out.id;
    node(out).back = [self, pred, tgt = std::move(target)](Tape& t) {
      const double g = t.nodes_[self].grad(0, 0);
      t.grad_buffer(pred.id) +=
          (2.0 * g / static_cast<double>(tgt.rows())) * (t.value(pred) - tgt);
    };
  }
  return out;
}

Tensor Tape::cross_entropy(Tensor probs, std::vector<int> target_rows) {
  const auto& pv = value(probs);
  if (pv.cols() != 1) throw ShapeMismatch("cross_entropy: single column");
  if (target_rows.empty()) throw ShapeMismatch("cross_entropy: no targets");
  double loss = 0.0;
  for (int r : target_rows) {
    if (r < 0 || r >= pv.rows()) {
      throw ShapeMismatch("cross_entropy: target row out of range");
    }
    loss -= std::log(pv(r, 0));
  }
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = loss / static_cast<double>(target_rows.size());
  Tensor out = push(std::move(v), node(probs).requires_grad, nullptr);
  if (node(probs).requires_grad) {
    const int self = out.id;
    node(out).back = [self, probs, idx = std::move(target_rows)](Tape& t) {
      const double g = t.nodes_[self].grad(0, 0);
      Eigen::MatrixXd& gp = t.grad_buffer(probs.id);
      const double inv = 1.0 / static_cast<double>(idx.size());
      for (int r : idx) gp(r, 0) -= g * inv / t.value(probs)(r, 0);
    };
  }
  return out;
}

Tensor Tape::sum(Tensor a) {
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = value(a).sum();
  Tensor out = push(std::move(v), node(a).requires_grad, nullptr);
  if (node(a).requires_grad) {
    const int self = out.id;
    node(out).back = [self, a](Tape& t) {
      t.grad_buffer(a.id).array() += t.nodes_[self].grad(0, 0);
    };
  }
  return out;
}

Tensor Tape::scale(Tensor a, double c) {
  Tensor out = push(value(a) * c, node(a).requires_grad, nullptr);
  if (node(a).requires_grad) {
    const int self = out.id;
    node(out).back = [self, a, c](Tape& t) {
      t.grad_buffer(a.id) += c * t.nodes_[self].grad;
    };
  }
  return out;
}

void Tape::backward(Tensor loss) {
  Node& ln = node(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    throw NotScalarLoss("backward requires a 1x1 loss tensor");
  }
  grad_buffer(loss.id).setConstant(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad_ready && n.requires_grad && n.back) n.back(*this);
  }
}

void Tape::check_finite() const {
  for (const auto& n : nodes_) {
    if (!n.value.allFinite()) {
      throw std::runtime_error("non-finite value on tape");
    }
    if (n.grad_ready && !n.grad.allFinite()) {
      throw std::runtime_error("non-finite gradient on tape");
    }
  }
}

MlpParams make_mlp(int input, int hidden, int output, int layers, Rng& rng) {
  if (layers < 1) throw ShapeMismatch("mlp needs at least one layer");
  MlpParams p;
  for (int l = 0; l < layers; ++l) {
    const int in = l == 0 ? input : hidden;
    const int out = l == layers - 1 ? output : hidden;
    Eigen::MatrixXd w(in, out);
    const double bound = in > 0 ? std::sqrt(6.0 / in) : 0.0;
    for (int i = 0; i < in; ++i) {
      for (int j = 0; j < out; ++j) w(i, j) = rng.uniform(-bound, bound);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::MatrixXd::Zero(1, out));
  }
  return p;
}

MlpTensors mlp_to_tape(Tape& tape, const MlpParams& params) {
  MlpTensors t;
  t.hidden = params.hidden;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    t.w.push_back(tape.leaf(params.weights[l], true));
    t.b.push_back(tape.leaf(params.biases[l], true));
  }
  return t;
}

Tensor mlp_forward(Tape& tape, const MlpTensors& mlp, Tensor input) {
  if (tape.value(input).cols() != tape.value(mlp.w[0]).rows()) {
    throw ShapeMismatch("mlp_forward: input width does not match first layer");
  }
  Tensor x = input;
  for (std::size_t l = 0; l < mlp.w.size(); ++l) {
    x = tape.add_rowvec(tape.matmul(x, mlp.w[l]), mlp.b[l]);
    if (l + 1 < mlp.w.size() && mlp.hidden == Activation::kRelu) {
      x = tape.relu(x);
    }
  }
  return x;
}

Tensor mlp_forward(Tape& tape, const MlpParams& params, Tensor input) {
  return mlp_forward(tape, mlp_to_tape(tape, params), input);
}

void adam_step(AdamState& state, std::map<std::string, Eigen::MatrixXd>& params,
               const std::map<std::string, Eigen::MatrixXd>& grads,
               const AdamConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Eigen::MatrixXd& g = git->second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeMismatch("adam_step: gradient shape mismatch for " + name);
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() == 0) m = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    if (v.size() == 0) v = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -=
        cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

namespace {

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::ordered_json j;
  j["rows"] = static_cast<int>(m.rows());
  j["cols"] = static_cast<int>(m.cols());
  auto data = nlohmann::ordered_json::array();
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  j["data"] = std::move(data);
  return j;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto& data = j.at("data");
  if (static_cast<int>(data.size()) != rows * cols) {
    throw std::runtime_error("checkpoint tensor: data length mismatch");
  }
  Eigen::MatrixXd m(rows, cols);
  int k = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["version"] = ckpt.version;
  j["config_hash"] = ckpt.config_hash;
  j["meta"] = ckpt.meta;
  nlohmann::ordered_json scales;
  for (const auto& [k, v] : ckpt.scales) scales[k] = v;
  j["scales"] = std::move(scales);
  nlohmann::ordered_json params;
  for (const auto& [k, v] : ckpt.params) params[k] = matrix_to_json(v);
  j["params"] = std::move(params);
  if (ckpt.adam) {
    nlohmann::ordered_json adam;
    adam["step"] = ckpt.adam->step;
    nlohmann::ordered_json m, v;
    for (const auto& [k, t] : ckpt.adam->m) m[k] = matrix_to_json(t);
    for (const auto& [k, t] : ckpt.adam->v) v[k] = matrix_to_json(t);
    adam["m"] = std::move(m);
    adam["v"] = std::move(v);
    j["adam"] = std::move(adam);
  }
  jsonio::write_file(path, jsonio::canonical_dump(j) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto j = jsonio::parse_file(path);
  Checkpoint c;
  c.version = j.at("version").get<int>();
  if (c.version != 1) {
    throw std::runtime_error("checkpoint: unsupported version");
  }
  c.config_hash = j.at("config_hash").get<std::string>();
  c.meta = j.at("meta");
  for (const auto& [k, v] : j.at("scales").items()) {
    c.scales[k] = v.get<double>();
  }
  for (const auto& [k, v] : j.at("params").items()) {
    c.params[k] = matrix_from_json(v);
  }
  if (j.contains("adam")) {
    AdamState st;
    st.step = j["adam"].at("step").get<std::int64_t>();
    for (const auto& [k, v] : j["adam"].at("m").items()) {
      st.m[k] = matrix_from_json(v);
    }
    for (const auto& [k, v] : j["adam"].at("v").items()) {
      st.v[k] = matrix_from_json(v);
    }
    c.adam = std::move(st);
  }
  return c;
}

}  // namespace arbor::gradnet
