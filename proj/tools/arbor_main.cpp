// arbor: procedural spring-damper trees, push simulation, graph-network
// training, evaluation, and arm planning behind one command-line pipeline:
//   generate -> collect -> train -> eval / ablate / plan / render
//
// Every subcommand takes a versioned JSON config (--config), with --seed and
// --out overriding the corresponding fields. Identical effective configs
// produce byte-identical artifacts, each stamped with the config hash.
// Exit codes: 0 ok, 2 validation failure, 3 assertion failure (--assert).

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "arbor/armplan.hpp"
#include "arbor/evalbench.hpp"
#include "arbor/forest.hpp"
#include "arbor/gradnet.hpp"
#include "arbor/jsonio.hpp"
#include "arbor/models.hpp"
#include "arbor/pushsim.hpp"
#include "arbor/rng.hpp"
#include "arbor/svg.hpp"
#include "arbor/treegraph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace arbor;

namespace {

struct AssertionFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = jsonio::parse_file(path);
  if (j.contains("version") && j["version"].get<int>() != 1) {
    throw std::runtime_error("config: unsupported version");
  }
  return j;
}

// defaults -> file config -> command-line overrides
json effective_config(json defaults, const json& file,
                      std::optional<std::uint64_t> seed,
                      const std::string& out) {
  defaults.update(file);
  if (seed) defaults["seed"] = *seed;
  if (!out.empty()) defaults["out"] = out;
  defaults["version"] = 1;
  return defaults;
}

forest::ScaParams sca_from_config(const json& c) {
  forest::ScaParams p;
  const json s = c.value("sca", json::object());
  p.attraction_points = s.value("attraction_points", p.attraction_points);
  p.influence_radius = s.value("influence_radius", p.influence_radius);
  p.kill_radius = s.value("kill_radius", p.kill_radius);
  p.step_length = s.value("step_length", p.step_length);
  p.crown_center.z() = s.value("crown_center_z", p.crown_center.z());
  p.crown_radius = s.value("crown_radius", p.crown_radius);
  p.height_min = s.value("height_min", p.height_min);
  p.height_max = s.value("height_max", p.height_max);
  p.elastic_modulus = s.value("elastic_modulus", p.elastic_modulus);
  p.leaf_radius = s.value("leaf_radius", p.leaf_radius);
  return p;
}

pushsim::PushParams push_from_config(const json& c) {
  pushsim::PushParams p;
  const json s = c.value("push", json::object());
  p.min_distance = s.value("min_distance", p.min_distance);
  p.max_distance = s.value("max_distance", p.max_distance);
  p.max_retries = s.value("max_retries", p.max_retries);
  return p;
}

pushsim::SolveOptions solve_from_config(const json& c) {
  pushsim::SolveOptions o;
  const json s = c.value("solve", json::object());
  o.coupling_stiffness = s.value("coupling_stiffness", o.coupling_stiffness);
  o.grad_tol_rel = s.value("grad_tol_rel", o.grad_tol_rel);
  o.max_iterations = s.value("max_iterations", o.max_iterations);
  o.quasi_newton = s.value("quasi_newton", o.quasi_newton);
  return o;
}

models::ModelConfig model_from_config(const json& c) {
  models::ModelConfig mc;
  mc.task = c.value("task", std::string("forward")) == "policy"
                ? models::Task::kPolicy
                : models::Task::kForward;
  mc.arch = c.value("arch", std::string("graphnet")) == "pointwise"
                ? models::Arch::kPointwise
                : models::Arch::kGraphNet;
  const json m = c.value("model", json::object());
  mc.g2g_layers = m.value("g2g_layers", mc.g2g_layers);
  mc.width = m.value("width", mc.width);
  mc.mlp_layers = m.value("mlp_layers", mc.mlp_layers);
  mc.encode.fully_connected =
      m.value("fully_connected", mc.encode.fully_connected);
  mc.encode.include_delta = m.value("edge_delta", mc.encode.include_delta);
  mc.encode.include_growth = m.value("edge_growth", mc.encode.include_growth);
  mc.encode.include_stiffness =
      m.value("edge_stiffness", mc.encode.include_stiffness);
  return mc;
}

struct Dataset {
  std::vector<forest::TreeSpec> trees;
  std::vector<pushsim::PushEpisode> episodes;
  double stiffness_scale = 0.0;
  json manifest;
};

// Dataset directories are self-contained: the manifest embeds the trees the
// episodes reference, so downstream stages never chase the original files.
Dataset load_dataset_dir(const fs::path& dir) {
  Dataset d;
  d.manifest = jsonio::parse_file(dir / "manifest.json");
  for (const auto& tj : d.manifest.at("trees")) {
    d.trees.push_back(forest::tree_from_json(tj));
  }
  d.episodes = pushsim::load_dataset(dir / "episodes.jsonl");
  d.stiffness_scale = d.manifest.value("stiffness_scale", 0.0);
  return d;
}

void write_run_stamp(const fs::path& out, const json& config,
                     const std::string& hash) {
  nlohmann::ordered_json stamp;
  stamp["version"] = 1;
  stamp["config_hash"] = hash;
  stamp["config"] = config;
  jsonio::write_file(out / "run.json", jsonio::canonical_dump(stamp) + "\n");
}

int cmd_generate(const json& config) {
  const fs::path out = config.value("out", std::string("out/trees"));
  const std::uint64_t seed = config.value("seed", std::uint64_t{1});
  const auto sizes = config.value("sizes", std::vector<int>{10, 11, 12, 13});
  const int per_size = config.value("trees_per_size", 20);
  const forest::ScaParams sca = sca_from_config(config);
  const std::string hash = jsonio::config_hash(config);

  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["config_hash"] = hash;
  auto files = nlohmann::ordered_json::array();
  int written = 0;
  for (int size : sizes) {
    for (int idx = 0; idx < per_size; ++idx) {
      const std::uint64_t tree_seed =
          mix_seed(seed, static_cast<std::uint64_t>(size),
                   static_cast<std::uint64_t>(idx));
      const forest::TreeSpec tree =
          forest::generate_tree(tree_seed, size, sca);
      char name[64];
      std::snprintf(name, sizeof(name), "tree_n%02d_%03d.json", size, idx);
      forest::save_tree(tree, out / name);
      files.push_back(name);
      ++written;
    }
  }
  manifest["count"] = written;
  manifest["files"] = std::move(files);
  jsonio::write_file(out / "manifest.json",
                     jsonio::canonical_dump(manifest) + "\n");
  write_run_stamp(out, config, hash);
  std::printf("generate: %d trees -> %s\n", written, out.string().c_str());
  return 0;
}

int cmd_collect(const json& config) {
  const fs::path out = config.value("out", std::string("out/dataset"));
  const std::uint64_t seed = config.value("seed", std::uint64_t{2});
  const fs::path trees_dir = config.value("trees", std::string("out/trees"));
  const int episodes_per_tree = config.value("episodes_per_tree", 20);
  const int threads = config.value("threads", 2);
  const auto push = push_from_config(config);
  const auto solve = solve_from_config(config);
  const std::string hash = jsonio::config_hash(config);

  const json trees_manifest = jsonio::parse_file(trees_dir / "manifest.json");
  std::vector<forest::TreeSpec> trees;
  auto embedded = nlohmann::ordered_json::array();
  auto file_list = nlohmann::ordered_json::array();
  for (const auto& f : trees_manifest.at("files")) {
    const fs::path file = trees_dir / f.get<std::string>();
    const forest::TreeSpec tree = forest::load_tree(file);
    embedded.push_back(forest::tree_to_json(tree));
    trees.push_back(std::move(tree));
    file_list.push_back(f.get<std::string>());
  }

  const auto episodes = pushsim::collect_dataset(trees, episodes_per_tree,
                                                 seed, push, solve, threads);
  pushsim::save_dataset(episodes, out / "episodes.jsonl");

  std::vector<double> ks;
  for (const auto& t : trees) {
    for (int i = 0; i < t.stiffness.size(); ++i) ks.push_back(t.stiffness[i]);
  }
  std::sort(ks.begin(), ks.end());
  const double scale = ks.empty() ? 1.0
                       : ks.size() % 2 == 1
                           ? ks[ks.size() / 2]
                           : 0.5 * (ks[ks.size() / 2 - 1] + ks[ks.size() / 2]);

  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["config_hash"] = hash;
  manifest["tree_source"] = trees_dir.string();
  manifest["tree_files"] = std::move(file_list);
  manifest["tree_count"] = static_cast<int>(trees.size());
  manifest["episodes_per_tree"] = episodes_per_tree;
  manifest["episode_count"] = static_cast<int>(episodes.size());
  manifest["stiffness_scale"] = scale;
  manifest["trees"] = std::move(embedded);
  jsonio::write_file(out / "manifest.json",
                     jsonio::canonical_dump(manifest) + "\n");
  write_run_stamp(out, config, hash);
  std::printf("collect: %zu episodes -> %s\n", episodes.size(),
              out.string().c_str());
  return 0;
}

int cmd_train(const json& config) {
  const fs::path out = config.value("out", std::string("out/model"));
  const Dataset data = load_dataset_dir(config.value("dataset", std::string("out/dataset")));
  const std::string hash = jsonio::config_hash(config);

  models::TrainConfig tc;
  tc.model = model_from_config(config);
  tc.epochs = config.value("epochs", 40);
  tc.batch_size = config.value("batch_size", 64);
  tc.lr = config.value("lr", 0.001);
  tc.lambda_traj = config.value("lambda_traj", 1.0);
  tc.val_fraction = config.value("val_fraction", 0.1);
  tc.patience = config.value("patience", 10);
  tc.seed = config.value("seed", std::uint64_t{3});
  tc.out_dir = out;
  tc.config_hash = hash;
  tc.resume = config.value("resume", std::string(""));
  tc.verbose = config.value("verbose", true);

  models::TrainResult result;
  if (tc.model.task == models::Task::kForward) {
    result = models::train_forward(data.episodes, data.trees, tc);
  } else {
    const auto executor = evalbench::make_sim_executor(
        data.trees, solve_from_config(config),
        config.value("max_push", 0.5));
    result = models::train_policy(data.episodes, data.trees, tc, executor);
  }
  write_run_stamp(out, config, hash);
  std::printf("train: best val e_N %.6f at epoch %d -> %s\n",
              result.best_val_e_n, result.best_epoch, out.string().c_str());
  return 0;
}

models::ModelParams load_model(const json& config, const fs::path& ckpt_path) {
  const auto ckpt = gradnet::load_checkpoint(ckpt_path);
  const auto params = models::ModelParams::from_checkpoint(ckpt);
  // Normalization travels with the checkpoint; an explicit conflicting
  // scale in the eval config is refused rather than silently re-scaled.
  if (config.contains("stiffness_scale")) {
    const double want = config["stiffness_scale"].get<double>();
    if (want != params.config.encode.stiffness_scale) {
      throw std::runtime_error(
          "normalization scale mismatch: checkpoint has " +
          jsonio::format_double(params.config.encode.stiffness_scale) +
          ", config asks for " + jsonio::format_double(want));
    }
  }
  return params;
}

void run_assertions(const json& config, const evalbench::EvalReport& report,
                    const std::string& model_method, bool enabled) {
  if (!enabled || !config.contains("assert")) return;
  const json& a = config["assert"];
  const double model_mean = report.method_mean.at(model_method);
  if (a.contains("max_e_n") && !(model_mean <= a["max_e_n"].get<double>())) {
    throw AssertionFailure("e_N " + jsonio::format_double(model_mean) +
                           " exceeds max_e_n");
  }
  if (a.contains("max_ratio_no_action")) {
    const double limit = a["max_ratio_no_action"].get<double>() *
                         report.method_mean.at("no_action");
    if (!(model_mean <= limit)) {
      throw AssertionFailure("e_N not within the allowed No-Action ratio");
    }
  }
  if (a.contains("strictly_below")) {
    for (const auto& other : a["strictly_below"]) {
      const auto it = report.method_mean.find(other.get<std::string>());
      if (it == report.method_mean.end() || !(model_mean < it->second)) {
        throw AssertionFailure("e_N not strictly below " +
                               other.get<std::string>());
      }
    }
  }
}

int cmd_eval(const json& config, bool assert_enabled) {
  const fs::path out = config.value("out", std::string("out/eval"));
  const Dataset data = load_dataset_dir(config.value("dataset", std::string("out/dataset")));
  const auto params =
      load_model(config, config.value("checkpoint", std::string("out/model/checkpoint.json")));
  const std::string hash = jsonio::config_hash(config);

  evalbench::EvalReport report;
  std::string model_method;
  if (params.config.task == models::Task::kForward) {
    report = evalbench::eval_forward(params, data.episodes, data.trees);
    model_method = "model";
  } else {
    evalbench::PolicyEvalConfig pc;
    pc.solve = solve_from_config(config);
    pc.max_push = config.value("max_push", 0.5);
    pc.seed = config.value("seed", std::uint64_t{4});
    report = evalbench::eval_policy(params, data.episodes, data.trees, pc);
    model_method = "policy";
    if (config.value("rank_analysis", false)) {
      const auto rank =
          evalbench::rank_analysis(params, data.episodes, data.trees, pc);
      evalbench::write_rank_csv(rank, out / "rank.csv", hash);
    }
  }
  evalbench::write_report_csv(report, out / "report.csv", hash);
  evalbench::write_report_svg(report, out / "report.svg", hash);
  write_run_stamp(out, config, hash);
  for (const auto& [method, mean] : report.method_mean) {
    std::printf("eval: %-10s mean e_N %.6f m\n", method.c_str(), mean);
  }
  if (report.failed_solves > 0) {
    std::printf("eval: %d solver failures (counted, not fatal)\n",
                report.failed_solves);
  }
  run_assertions(config, report, model_method, assert_enabled);
  return 0;
}

int cmd_ablate(const json& config, bool assert_enabled) {
  const fs::path out = config.value("out", std::string("out/ablation"));
  const Dataset data = load_dataset_dir(config.value("dataset", std::string("out/dataset")));
  const std::string hash = jsonio::config_hash(config);

  // split identical for every variant: tail fraction becomes the eval set
  const double eval_fraction = config.value("eval_fraction", 0.15);
  std::vector<int> ids(data.episodes.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  Rng rng = Rng::stream(config.value("seed", std::uint64_t{5}), 0xab1a7e);
  for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i) {
    std::swap(ids[i], ids[rng.below(static_cast<std::uint64_t>(i + 1))]);
  }
  const int eval_count = std::max(
      1, static_cast<int>(eval_fraction * static_cast<double>(ids.size())));
  std::vector<pushsim::PushEpisode> eval_eps, train_eps;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    (static_cast<int>(i) < eval_count ? eval_eps : train_eps)
        .push_back(data.episodes[ids[i]]);
  }

  evalbench::AblationConfig ac;
  ac.base.model = model_from_config(config);
  ac.base.epochs = config.value("epochs", 12);
  ac.base.batch_size = config.value("batch_size", 64);
  ac.base.lr = config.value("lr", 0.001);
  ac.base.val_fraction = config.value("val_fraction", 0.1);
  ac.base.patience = config.value("patience", 1000);  // fixed budget
  ac.base.seed = config.value("seed", std::uint64_t{5});
  ac.attr_variants = config.value("attr_variants", true);
  ac.partial_layers =
      config.value("partial_layers", std::vector<int>{5, 10, 15, 20});

  const auto rows = evalbench::run_ablation(train_eps, eval_eps, data.trees, ac);
  evalbench::write_ablation_csv(rows, out / "ablation.csv", hash);
  write_run_stamp(out, config, hash);

  double full = 0.0, none = -1.0;
  for (const auto& r : rows) {
    std::printf("ablate: %-14s layers=%d %-7s attrs=%-8s e_N=%.6f\n",
                r.label.c_str(), r.layers,
                r.fully_connected ? "full" : "partial", r.attrs.c_str(), r.e_n);
    if (r.label == "full") full = r.e_n;
    if (r.label == "attrs:none") none = r.e_n;
  }
  if (assert_enabled && config.contains("assert")) {
    const json& a = config["assert"];
    if (a.contains("min_none_over_full") && none >= 0.0) {
      if (!(none >= a["min_none_over_full"].get<double>() * full)) {
        throw AssertionFailure("edge-attribute ablation gap below threshold");
      }
    }
  }
  return 0;
}

int cmd_plan(const json& config) {
  const fs::path out = config.value("out", std::string("out/plans"));
  const Dataset data = load_dataset_dir(config.value("dataset", std::string("out/dataset")));
  const auto params =
      load_model(config, config.value("checkpoint", std::string("out/policy/checkpoint.json")));
  if (params.config.task != models::Task::kPolicy) {
    throw std::runtime_error("plan: checkpoint is not a contact policy");
  }
  const std::string hash = jsonio::config_hash(config);
  const std::uint64_t seed = config.value("seed", std::uint64_t{6});

  armplan::ArmModel arm;
  if (config.contains("arm") && !config["arm"].get<std::string>().empty()) {
    arm = armplan::ArmModel::from_json(
        jsonio::parse_file(config["arm"].get<std::string>()));
  } else {
    arm = armplan::ArmModel::default_arm();
  }

  armplan::PlanOptions po;
  const json r = config.value("rrt", json::object());
  po.rrt.iterations = r.value("iterations", po.rrt.iterations);
  po.rrt.step = r.value("step", po.rrt.step);
  po.rrt.goal_bias = r.value("goal_bias", po.rrt.goal_bias);
  po.rrt.collision_resolution =
      r.value("collision_resolution", po.rrt.collision_resolution);
  po.ik_seeds = config.value("ik_seeds", po.ik_seeds);
  po.clearance = config.value("clearance", po.clearance);
  po.max_push = config.value("max_push", po.max_push);

  const int max_episodes = std::min<int>(
      config.value("max_episodes", 20), static_cast<int>(data.episodes.size()));
  std::vector<pushsim::PushEpisode> eps(data.episodes.begin(),
                                        data.episodes.begin() + max_episodes);
  std::vector<models::Sample> samples;
  for (const auto& ep : eps) {
    samples.push_back(
        models::encode_sample(ep, data.trees.at(ep.tree_id), params.config));
  }
  const auto preds = models::predict_policy_batch(params, samples);

  int feasible = 0;
  std::map<int, int> rank_histogram;
  for (int i = 0; i < max_episodes; ++i) {
    const auto& s = samples[i];
    nlohmann::ordered_json record;
    try {
      const auto plan = armplan::plan_contact(
          preds[i].per_node_trajectory, preds[i].affordance,
          data.trees.at(s.tree_id), s.initial, arm,
          mix_seed(seed, static_cast<std::uint64_t>(i)), po);
      record = armplan::plan_to_json(plan);
      record["feasible"] = true;
      ++feasible;
      ++rank_histogram[plan.rank];
    } catch (const armplan::NoFeasiblePlan&) {
      record["feasible"] = false;
    }
    record["episode"] = i;
    record["config_hash"] = hash;
    char name[48];
    std::snprintf(name, sizeof(name), "plan_%04d.json", i);
    jsonio::write_file(out / name, jsonio::canonical_dump(record) + "\n");
  }

  nlohmann::ordered_json summary;
  summary["version"] = 1;
  summary["config_hash"] = hash;
  summary["episodes"] = max_episodes;
  summary["feasible"] = feasible;
  summary["feasibility_fraction"] =
      max_episodes ? static_cast<double>(feasible) / max_episodes : 0.0;
  nlohmann::ordered_json hist;
  for (const auto& [rank, count] : rank_histogram) {
    hist[std::to_string(rank)] = count;
  }
  summary["rank_histogram"] = std::move(hist);
  jsonio::write_file(out / "summary.json",
                     jsonio::canonical_dump(summary) + "\n");
  write_run_stamp(out, config, hash);
  std::printf("plan: %d/%d feasible (%.1f%%) -> %s\n", feasible, max_episodes,
              max_episodes ? 100.0 * feasible / max_episodes : 0.0,
              out.string().c_str());
  return 0;
}

// ---- render ---------------------------------------------------------------

struct Skeleton {
  forest::Points points;
  std::vector<int> parent;
};

void draw_skeleton(svg::Document& doc, const Skeleton& sk,
                   const std::function<double(double)>& sx,
                   const std::function<double(double)>& sz,
                   const std::string& color) {
  for (int j = 1; j < sk.points.rows(); ++j) {
    doc.line(sx(sk.points(j, 0)), sz(sk.points(j, 2)),
             sx(sk.points(sk.parent[j], 0)), sz(sk.points(sk.parent[j], 2)),
             color, 2.0);
  }
  for (int j = 0; j < sk.points.rows(); ++j) {
    doc.circle(sx(sk.points(j, 0)), sz(sk.points(j, 2)), 2.2, color);
  }
}

int render_svg(const std::vector<std::pair<Skeleton, std::string>>& layers,
               const std::optional<std::pair<Eigen::Vector3d, Eigen::Vector3d>>&
                   action_arrow,
               const fs::path& out_file) {
  double lo_x = 1e30, hi_x = -1e30, lo_z = 1e30, hi_z = -1e30;
  for (const auto& [sk, color] : layers) {
    lo_x = std::min(lo_x, sk.points.col(0).minCoeff());
    hi_x = std::max(hi_x, sk.points.col(0).maxCoeff());
    lo_z = std::min(lo_z, sk.points.col(2).minCoeff());
    hi_z = std::max(hi_z, sk.points.col(2).maxCoeff());
  }
  const double margin = 30.0, side = 480.0;
  const double span = std::max({hi_x - lo_x, hi_z - lo_z, 0.2});
  const double scale = (side - 2 * margin) / span;
  const auto sx = [&](double x) { return margin + (x - lo_x) * scale; };
  const auto sz = [&](double z) { return side - margin - (z - lo_z) * scale; };

  svg::Document doc(side, side);
  for (const auto& [sk, color] : layers) draw_skeleton(doc, sk, sx, sz, color);
  if (action_arrow) {
    const auto& [from, delta] = *action_arrow;
    doc.arrow(sx(from.x()), sz(from.z()), sx(from.x() + delta.x()),
              sz(from.z() + delta.z()), "#ff00ff", 2.0);
  }
  jsonio::write_file(out_file, doc.str());
  std::printf("render: -> %s\n", out_file.string().c_str());
  return 0;
}

int cmd_render(const json& config) {
  const fs::path input = config.value("input", std::string(""));
  if (input.empty()) throw std::runtime_error("render: 'input' is required");
  const fs::path out = config.value("out", std::string("out/render"));
  const std::string brown = "#8b5a2b", green = "#2e8b57", red = "#d62728";

  if (input.extension() == ".jsonl") {
    // dataset episode: topology comes from the sibling manifest
    const Dataset data = load_dataset_dir(input.parent_path());
    const int line = config.value("line", 0);
    if (line < 0 || line >= static_cast<int>(data.episodes.size())) {
      throw std::runtime_error("render: line out of range");
    }
    const auto& ep = data.episodes[line];
    const auto& tree = data.trees.at(ep.tree_id);
    Skeleton init{ep.initial_positions, tree.parent};
    Skeleton fin{ep.final_positions, tree.parent};
    const Eigen::Vector3d from =
        ep.initial_positions.row(ep.action.contact_node).transpose();
    return render_svg({{init, brown}, {fin, green}},
                      std::make_pair(from, ep.action.trajectory),
                      out / (input.stem().string() + "_line" +
                             std::to_string(line) + ".svg"));
  }

  const json j = jsonio::parse_file(input);
  if (j.contains("nodes")) {  // tree file
    const auto tree = forest::load_tree(input);
    Skeleton sk{tree.rest_positions, tree.parent};
    return render_svg({{sk, brown}}, std::nullopt,
                      out / (input.stem().string() + ".svg"));
  }
  if (j.contains("predicted")) {  // prediction document
    const auto parse_points = [](const json& arr) {
      forest::Points p(static_cast<int>(arr.size()), 3);
      for (int i = 0; i < p.rows(); ++i) {
        for (int k = 0; k < 3; ++k) p(i, k) = arr[i][k].get<double>();
      }
      return p;
    };
    std::vector<int> parent;
    for (const auto& v : j.at("parents")) parent.push_back(v.get<int>());
    std::vector<std::pair<Skeleton, std::string>> layers;
    layers.push_back({{parse_points(j.at("initial")), parent}, brown});
    if (j.contains("target")) {
      layers.push_back({{parse_points(j.at("target")), parent}, green});
    }
    layers.push_back({{parse_points(j.at("predicted")), parent}, red});
    std::optional<std::pair<Eigen::Vector3d, Eigen::Vector3d>> arrow;
    if (j.contains("action")) {
      const int c = j["action"].at("contact_node").get<int>();
      Eigen::Vector3d t;
      for (int k = 0; k < 3; ++k) t[k] = j["action"].at("trajectory")[k].get<double>();
      arrow = std::make_pair(
          Eigen::Vector3d(parse_points(j.at("initial")).row(c).transpose()), t);
    }
    return render_svg(layers, arrow, out / (input.stem().string() + ".svg"));
  }
  throw std::runtime_error("render: unrecognized input format");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"arbor: tree manipulation learning pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::optional<std::uint64_t> seed_override;
  bool assert_enabled = false;
  app.add_option("--config", config_path, "JSON config file")
      ->envname("ARBOR_CONFIG");
  app.add_option("--seed", seed_override, "Override the config seed");
  app.add_option("--out", out_override, "Override the output directory");
  app.add_flag("--assert", assert_enabled,
               "Exit 3 when configured thresholds are violated");

  auto* generate = app.add_subcommand("generate", "Generate tree files");
  auto* collect = app.add_subcommand("collect", "Collect push episodes");
  auto* train = app.add_subcommand("train", "Train a model");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* ablate = app.add_subcommand("ablate", "Run the ablation grid");
  auto* plan = app.add_subcommand("plan", "Plan arm trajectories");
  auto* render = app.add_subcommand("render", "Render trees/episodes to SVG");

  std::string render_input;
  int render_line = 0;
  render->add_option("input", render_input, "tree .json / dataset .jsonl / prediction .json");
  render->add_option("--line", render_line, "episode line for .jsonl input");

  CLI11_PARSE(app, argc, argv);

  try {
    const json file_config = load_config(config_path);
    json config = effective_config(json::object(), file_config, seed_override,
                                   out_override);
    if (*render) {
      if (!render_input.empty()) config["input"] = render_input;
      if (render->count("--line")) config["line"] = render_line;
    }

    if (*generate) return cmd_generate(config);
    if (*collect) return cmd_collect(config);
    if (*train) return cmd_train(config);
    if (*eval) return cmd_eval(config, assert_enabled);
    if (*ablate) return cmd_ablate(config, assert_enabled);
    if (*plan) return cmd_plan(config);
    if (*render) return cmd_render(config);
  } catch (const AssertionFailure& e) {
    std::fprintf(stderr, "assertion failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
