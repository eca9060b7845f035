#include "arbor/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "arbor/jsonio.hpp"
#include "arbor/rng.hpp"
#include "arbor/svg.hpp"

namespace arbor::evalbench {

double max_node_error(const forest::Points& predicted,
                      const forest::Points& target) {
  if (predicted.rows() != target.rows()) {
    throw ShapeMismatch("max_node_error: node counts disagree");
  }
  double worst = 0.0;
  for (int r = 0; r < predicted.rows(); ++r) {
    worst = std::max(worst, (predicted.row(r) - target.row(r)).norm());
  }
  return worst;
}

models::ActionExecutor make_sim_executor(
    const std::vector<forest::TreeSpec>& trees,
    const pushsim::SolveOptions& solve, double max_push) {
  return [&trees, solve, max_push](int tree_id,
                                   const pushsim::PushAction& action) {
    const forest::TreeSpec& tree = trees.at(tree_id);
    if (action.contact_node == 0) return tree.rest_positions;
    pushsim::PushAction a = action;
    const double n = a.trajectory.norm();
    if (n > max_push) a.trajectory *= max_push / n;
    try {
      return pushsim::run_episode(tree, a, solve).final_positions;
    } catch (const pushsim::NoConvergence&) {
      return tree.rest_positions;
    }
  };
}

namespace {

struct Welford {
  double sum = 0.0;
  int count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  double mean() const { return count ? sum / count : 0.0; }
};

void finish_report(EvalReport& report,
                   const std::map<std::string, std::map<int, Welford>>& acc) {
  for (const auto& [method, by_size] : acc) {
    Welford per_method;
    for (const auto& [size, w] : by_size) {
      report.rows.push_back(SizeRow{method, size, w.count, w.mean()});
      per_method.add(w.mean());
    }
    report.method_mean[method] = per_method.mean();
  }
}

double avg_node_error(const forest::Points& a, const forest::Points& b) {
  double sum = 0.0;
  for (int r = 0; r < a.rows(); ++r) sum += (a.row(r) - b.row(r)).norm();
  return sum / static_cast<double>(a.rows());
}

}  // namespace

EvalReport eval_forward(const models::ModelParams& params,
                        const std::vector<pushsim::PushEpisode>& episodes,
                        const std::vector<forest::TreeSpec>& trees) {
  std::vector<models::Sample> samples;
  samples.reserve(episodes.size());
  for (const auto& ep : episodes) {
    samples.push_back(
        models::encode_sample(ep, trees.at(ep.tree_id), params.config));
  }
  const auto preds = models::predict_forward_batch(params, samples);

  std::map<std::string, std::map<int, Welford>> acc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const forest::Points predicted = s.initial + preds[i].delta_positions;
    acc["model"][s.size].add(max_node_error(predicted, s.target_positions));
    acc["no_action"][s.size].add(
        max_node_error(s.initial, s.target_positions));
  }
  EvalReport report;
  finish_report(report, acc);
  return report;
}

pushsim::PushAction greedy_action(const forest::Points& initial,
                                  const forest::Points& target) {
  if (initial.rows() != target.rows()) {
    throw ShapeMismatch("greedy_action: shapes disagree");
  }
  pushsim::PushAction a;
  a.contact_node = 1;
  double best = -1.0;
  for (int j = 1; j < initial.rows(); ++j) {
    const double d = (target.row(j) - initial.row(j)).norm();
    if (d > best) {
      best = d;
      a.contact_node = j;
    }
  }
  a.trajectory =
      (target.row(a.contact_node) - initial.row(a.contact_node)).transpose();
  return a;
}

pushsim::PushAction random_action(const forest::Points& initial,
                                  const forest::Points& target,
                                  std::uint64_t seed) {
  if (initial.rows() != target.rows()) {
    throw ShapeMismatch("random_action: shapes disagree");
  }
  Rng rng = Rng::stream(seed, 0x2a4d);
  pushsim::PushAction a;
  a.contact_node =
      1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(initial.rows() - 1)));
  a.trajectory =
      (target.row(a.contact_node) - initial.row(a.contact_node)).transpose();
  return a;
}

EvalReport eval_policy(const models::ModelParams& params,
                       const std::vector<pushsim::PushEpisode>& episodes,
                       const std::vector<forest::TreeSpec>& trees,
                       const PolicyEvalConfig& config) {
  std::vector<models::Sample> samples;
  samples.reserve(episodes.size());
  for (const auto& ep : episodes) {
    samples.push_back(
        models::encode_sample(ep, trees.at(ep.tree_id), params.config));
  }
  const auto preds = models::predict_policy_batch(params, samples);

  EvalReport report;
  std::map<std::string, std::map<int, Welford>> acc;
  const auto execute = [&](const forest::TreeSpec& tree,
                           pushsim::PushAction a,
                           const forest::Points& target) -> double {
    const double n = a.trajectory.norm();
    if (n > config.max_push) a.trajectory *= config.max_push / n;
    try {
      const auto ep = pushsim::run_episode(tree, a, config.solve);
      return max_node_error(ep.final_positions, target);
    } catch (const pushsim::NoConvergence&) {
      ++report.failed_solves;
      return max_node_error(tree.rest_positions, target);
    }
  };

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const forest::TreeSpec& tree = trees.at(s.tree_id);
    acc["policy"][s.size].add(
        execute(tree, models::policy_action(preds[i], config.max_push),
                s.target_positions));
    if (config.with_greedy) {
      acc["greedy"][s.size].add(execute(
          tree, greedy_action(s.initial, s.target_positions), s.target_positions));
    }
    if (config.with_random) {
      acc["random"][s.size].add(
          execute(tree,
                  random_action(s.initial, s.target_positions,
                                mix_seed(config.seed, i)),
                  s.target_positions));
    }
    acc["no_action"][s.size].add(
        max_node_error(s.initial, s.target_positions));
  }
  finish_report(report, acc);
  return report;
}

std::vector<RankRow> rank_analysis(const models::ModelParams& params,
                                   const std::vector<pushsim::PushEpisode>& episodes,
                                   const std::vector<forest::TreeSpec>& trees,
                                   const PolicyEvalConfig& config) {
  std::vector<models::Sample> samples;
  samples.reserve(episodes.size());
  for (const auto& ep : episodes) {
    samples.push_back(
        models::encode_sample(ep, trees.at(ep.tree_id), params.config));
  }
  const auto preds = models::predict_policy_batch(params, samples);

  struct RankAcc {
    Welford max_err, avg_err, aff;
  };
  std::map<int, RankAcc> acc;

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const forest::TreeSpec& tree = trees.at(s.tree_id);
    const auto& pred = preds[i];
    std::vector<int> order(s.size);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return pred.affordance[a] > pred.affordance[b];
    });
    for (int k = 0; k < s.size; ++k) {
      const int node = order[k];
      forest::Points result;
      if (node == 0) {
        result = tree.rest_positions;  // the fixed root cannot be pushed
      } else {
        pushsim::PushAction a;
        a.contact_node = node;
        a.trajectory = pred.per_node_trajectory.row(node).transpose();
        const double n = a.trajectory.norm();
        if (n > config.max_push) a.trajectory *= config.max_push / n;
        try {
          result = pushsim::run_episode(tree, a, config.solve).final_positions;
        } catch (const pushsim::NoConvergence&) {
          result = tree.rest_positions;
        }
      }
      auto& row = acc[k + 1];
      row.max_err.add(max_node_error(result, s.target_positions));
      row.avg_err.add(avg_node_error(result, s.target_positions));
      row.aff.add(pred.affordance[node]);
    }
  }

  std::vector<RankRow> rows;
  for (const auto& [rank, a] : acc) {
    rows.push_back(RankRow{rank, a.max_err.count, a.max_err.mean(),
                           a.avg_err.mean(), a.aff.mean()});
  }
  return rows;
}

std::vector<AblationRow> run_ablation(
    const std::vector<pushsim::PushEpisode>& train_episodes,
    const std::vector<pushsim::PushEpisode>& eval_episodes,
    const std::vector<forest::TreeSpec>& trees, const AblationConfig& config) {
  struct Variant {
    std::string label;
    bool delta, growth, stiffness, fully_connected;
    int layers;
  };
  std::vector<Variant> variants;
  if (config.attr_variants) {
    variants.push_back({"attrs:none", false, false, false, true, 5});
    variants.push_back({"attrs:v,Ks", false, true, true, true, 5});
    variants.push_back({"attrs:dp,v", true, true, false, true, 5});
    variants.push_back({"attrs:dp,Ks", true, false, true, true, 5});
  }
  variants.push_back({"full", true, true, true, true, 5});
  for (int layers : config.partial_layers) {
    variants.push_back(
        {"partial@" + std::to_string(layers), true, true, true, false, layers});
  }

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    models::TrainConfig tc = config.base;
    tc.model.task = models::Task::kForward;
    tc.model.arch = models::Arch::kGraphNet;
    tc.model.g2g_layers = v.layers;
    tc.model.encode.include_delta = v.delta;
    tc.model.encode.include_growth = v.growth;
    tc.model.encode.include_stiffness = v.stiffness;
    tc.model.encode.fully_connected = v.fully_connected;
    tc.out_dir.clear();  // ablation variants stay in memory

    const auto result = models::train_forward(train_episodes, trees, tc);

    std::vector<models::Sample> eval_samples;
    for (const auto& ep : eval_episodes) {
      eval_samples.push_back(models::encode_sample(ep, trees.at(ep.tree_id),
                                                   result.best.config));
    }
    const double e_n = models::forward_e_n(result.best, eval_samples);

    std::string attrs;
    if (v.delta) attrs += "dp ";
    if (v.growth) attrs += "v ";
    if (v.stiffness) attrs += "Ks ";
    if (attrs.empty()) attrs = "-";
    else attrs.pop_back();
    rows.push_back(AblationRow{v.label, v.layers, v.fully_connected, attrs, e_n});
  }
  return rows;
}

namespace {

std::string hash_comment(const std::string& config_hash) {
  return config_hash.empty() ? "" : "# config_hash=" + config_hash + "\n";
}

}  // namespace

void write_report_csv(const EvalReport& report,
                      const std::filesystem::path& path,
                      const std::string& config_hash) {
  std::string csv = hash_comment(config_hash) + "method,size,episodes,e_n\n";
  for (const auto& r : report.rows) {
    csv += r.method + "," + std::to_string(r.size) + "," +
           std::to_string(r.episodes) + "," + jsonio::format_double(r.e_n) +
           "\n";
  }
  for (const auto& [method, mean] : report.method_mean) {
    csv += method + ",all,0," + jsonio::format_double(mean) + "\n";
  }
  jsonio::write_file(path, csv);
}

void write_report_svg(const EvalReport& report,
                      const std::filesystem::path& path,
                      const std::string& config_hash) {
  std::set<int> sizes;
  std::set<std::string> methods;
  double peak = 1e-9;
  for (const auto& r : report.rows) {
    sizes.insert(r.size);
    methods.insert(r.method);
    peak = std::max(peak, r.e_n);
  }
  const std::map<std::string, std::string> palette = {
      {"model", "#1f77b4"},   {"policy", "#1f77b4"},
      {"pointwise", "#ff7f0e"}, {"greedy", "#2ca02c"},
      {"random", "#d62728"},  {"no_action", "#7f7f7f"}};
  auto color = [&](const std::string& m) {
    const auto it = palette.find(m);
    return it != palette.end() ? it->second : std::string("#9467bd");
  };

  const double margin = 50.0, width = 640.0, height = 300.0;
  svg::Document doc(width, height + 60.0);
  const double plot_w = width - 2 * margin;
  const double plot_h = height - margin;
  doc.line(margin, height - 20, width - margin, height - 20, "black", 1.0);
  doc.line(margin, height - 20, margin, 20, "black", 1.0);
  doc.text(10, 16, "e_N (m)", 11);

  const int ns = static_cast<int>(sizes.size());
  const int nm = static_cast<int>(methods.size());
  const double group_w = plot_w / std::max(1, ns);
  const double bar_w = 0.8 * group_w / std::max(1, nm);

  int si = 0;
  for (int size : sizes) {
    const double gx = margin + si * group_w;
    doc.text(gx + group_w / 2, height - 6, std::to_string(size), 10, "black",
             "middle");
    int mi = 0;
    for (const auto& m : methods) {
      for (const auto& r : report.rows) {
        if (r.size == size && r.method == m) {
          const double h = (plot_h - 20) * r.e_n / peak;
          doc.rect(gx + 0.1 * group_w + mi * bar_w, height - 20 - h, bar_w - 1,
                   h, color(m));
        }
      }
      ++mi;
    }
    ++si;
  }
  int mi = 0;
  for (const auto& m : methods) {
    const double lx = margin + mi * 120.0;
    doc.rect(lx, height + 16, 10, 10, color(m));
    doc.text(lx + 14, height + 25, m, 10);
    ++mi;
  }
  std::string svg = doc.str();
  if (!config_hash.empty()) {
    svg += "<!-- config_hash=" + config_hash + " -->\n";
  }
  jsonio::write_file(path, svg);
}

void write_rank_csv(const std::vector<RankRow>& rows,
                    const std::filesystem::path& path,
                    const std::string& config_hash) {
  std::string csv = hash_comment(config_hash) +
                    "rank,episodes,mean_max_error,mean_avg_error,mean_affordance\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.rank) + "," + std::to_string(r.episodes) + "," +
           jsonio::format_double(r.mean_max_error) + "," +
           jsonio::format_double(r.mean_avg_error) + "," +
           jsonio::format_double(r.mean_affordance) + "\n";
  }
  jsonio::write_file(path, csv);
}

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::filesystem::path& path,
                        const std::string& config_hash) {
  std::string csv = hash_comment(config_hash) + "label,layers,connectivity,attrs,e_n\n";
  for (const auto& r : rows) {
    csv += r.label + "," + std::to_string(r.layers) + "," +
           (r.fully_connected ? "full" : "partial") + "," + r.attrs + "," +
           jsonio::format_double(r.e_n) + "\n";
  }
  jsonio::write_file(path, csv);
}

}  // namespace arbor::evalbench
