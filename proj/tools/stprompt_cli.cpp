#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "stprompt/analysis.hpp"
#include "stprompt/train.hpp"

using namespace stprompt;
using F = float;

namespace {

// Exit codes: 0 success, 1 usage, 2 data/config, 3 numeric failure.
constexpr int kUsageError = 1;
constexpr int kDataError = 2;
constexpr int kNumericError = 3;

/// Worker-thread cap for data loading; honors STPROMPT_THREADS. Loading is
/// currently sequential, so the cap only validates and bounds the setting.
std::size_t thread_cap() {
  const char* env = std::getenv("STPROMPT_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1)
    throw ConfigError("STPROMPT_THREADS must be a positive integer");
  return std::size_t(v);
}

struct CommonOpts {
  std::string config_path;
  std::string log_file;
  RunConfig cfg;
  // Override tracking: only flags the user passed replace config values.
  CLI::App* app = nullptr;
};

void add_config_flags(CLI::App* sub, CommonOpts& c) {
  c.app = sub;
  sub->add_option("--config", c.config_path,
                  "JSON config file (flat RunConfig keys); flags override");
  sub->add_option("--seed", c.cfg.seed, "RNG seed; all randomness derives from it (default 0)");
  sub->add_option("--history", c.cfg.history, "input window length H (default 12)");
  sub->add_option("--horizon", c.cfg.horizon, "prediction length P (default 12)");
  sub->add_option("--d", c.cfg.d, "data projection width (default 32)");
  sub->add_option("--d-t", c.cfg.d_t, "temporal context width (default 32)");
  sub->add_option("--d-r", c.cfg.d_r, "spatial context width (default 32)");
  sub->add_option("--layers", c.cfg.layers, "encoder layers L (default 2)");
  sub->add_option("--tau", c.cfg.tau, "uniformity temperature (default 0.3)");
  sub->add_option("--lambda", c.cfg.lambda, "uniformity weight (default 1.0)");
  sub->add_option("--batch", c.cfg.batch, "batch size (default 64)");
  sub->add_option("--lr", c.cfg.lr, "Adam learning rate (default 1e-3)");
  sub->add_option("--pretrain-epochs", c.cfg.pretrain_epochs,
                  "pre-training epochs (default 300)");
  sub->add_option("--epochs", c.cfg.tune_epochs,
                  "prompt-tuning epochs (default 20)");
  sub->add_option("--compare-epochs", c.cfg.compare_epochs,
                  "comparison-mode epochs (default 100)");
  sub->add_option("--patience", c.cfg.patience,
                  "early-stopping patience in comparison modes (default 25)");
  sub->add_flag("--ablate-tc", c.cfg.ablate_tc, "-TC: zero the temporal context");
  sub->add_flag("--ablate-sc", c.cfg.ablate_sc, "-SC: zero the spatial context");
  sub->add_flag("--ablate-te", c.cfg.ablate_te, "-TE: skip the temporal encoder");
  sub->add_flag("--ablate-se", c.cfg.ablate_se, "-SE: skip the spatial encoder");
  sub->add_flag("--ablate-uni", c.cfg.ablate_uni, "-Uni: drop the uniformity loss");
  sub->add_flag("--replace-bn", c.cfg.replace_bn,
                "r/BN: batch-standardize embeddings instead of the uniformity loss");
  sub->add_option("--log-file", c.log_file,
                  "write per-epoch JSON logs here instead of stdout");
  std::map<std::string, Propagation> prop{{"sym_norm", Propagation::SymNorm},
                                          {"raw", Propagation::Raw}};
  sub->add_option("--propagation", c.cfg.propagation,
                  "propagation matrix: sym_norm (default) or raw")
      ->transform(CLI::CheckedTransformer(prop, CLI::ignore_case));
  std::map<std::string, UniformitySign> us{
      {"separation", UniformitySign::Separation},
      {"literal", UniformitySign::Literal}};
  sub->add_option("--uniformity-sign", c.cfg.uni_sign,
                  "uniformity sign: separation (default) or literal")
      ->transform(CLI::CheckedTransformer(us, CLI::ignore_case));
}

/// File config first, then every flag the user actually passed on top.
RunConfig resolve_config(const CommonOpts& c) {
  if (c.config_path.empty()) {
    c.cfg.validate();
    return c.cfg;
  }
  RunConfig merged = RunConfig::from_file(c.config_path);
  const std::pair<const char*, std::function<void()>> overrides[] = {
      {"--seed", [&] { merged.seed = c.cfg.seed; }},
      {"--history", [&] { merged.history = c.cfg.history; }},
      {"--horizon", [&] { merged.horizon = c.cfg.horizon; }},
      {"--d", [&] { merged.d = c.cfg.d; }},
      {"--d-t", [&] { merged.d_t = c.cfg.d_t; }},
      {"--d-r", [&] { merged.d_r = c.cfg.d_r; }},
      {"--layers", [&] { merged.layers = c.cfg.layers; }},
      {"--tau", [&] { merged.tau = c.cfg.tau; }},
      {"--lambda", [&] { merged.lambda = c.cfg.lambda; }},
      {"--batch", [&] { merged.batch = c.cfg.batch; }},
      {"--lr", [&] { merged.lr = c.cfg.lr; }},
      {"--pretrain-epochs",
       [&] { merged.pretrain_epochs = c.cfg.pretrain_epochs; }},
      {"--epochs", [&] { merged.tune_epochs = c.cfg.tune_epochs; }},
      {"--compare-epochs",
       [&] { merged.compare_epochs = c.cfg.compare_epochs; }},
      {"--patience", [&] { merged.patience = c.cfg.patience; }},
      {"--ablate-tc", [&] { merged.ablate_tc = c.cfg.ablate_tc; }},
      {"--ablate-sc", [&] { merged.ablate_sc = c.cfg.ablate_sc; }},
      {"--ablate-te", [&] { merged.ablate_te = c.cfg.ablate_te; }},
      {"--ablate-se", [&] { merged.ablate_se = c.cfg.ablate_se; }},
      {"--ablate-uni", [&] { merged.ablate_uni = c.cfg.ablate_uni; }},
      {"--replace-bn", [&] { merged.replace_bn = c.cfg.replace_bn; }},
      {"--propagation", [&] { merged.propagation = c.cfg.propagation; }},
      {"--uniformity-sign", [&] { merged.uni_sign = c.cfg.uni_sign; }},
  };
  for (const auto& [flag, apply] : overrides)
    if (c.app->count(flag) > 0) apply();
  merged.validate();
  return merged;
}

struct LogSink {
  std::ofstream file;
  std::ostream* out = nullptr;

  explicit LogSink(const std::string& path) {
    if (path.empty()) {
      out = &std::cout;
    } else {
      file.open(path);
      if (!file) throw IoError("cannot open log file '" + path + "'");
      out = &file;
    }
  }
};

std::vector<PreparedDataset<F>> load_prepared(const std::vector<std::string>& paths,
                                              const RunConfig& cfg) {
  thread_cap();  // validate the env var before doing any work
  std::vector<PreparedDataset<F>> out;
  for (const auto& p : paths)
    out.push_back(PreparedDataset<F>::prepare(load_dataset<F>(p), cfg));
  return out;
}

// ---- subcommand bodies ----

int cmd_gen_synth(std::uint64_t seed, std::size_t regions, std::size_t steps,
                  std::size_t features, std::size_t steps_per_day,
                  const ShiftSpec& spec, const std::string& name,
                  const std::string& out) {
  auto ds = gen_synthetic<F>(seed, regions, steps, features, spec,
                             steps_per_day);
  if (!name.empty()) ds.name = name;
  save_dataset(ds, out);
  nlohmann::json j = {{"file", out},
                      {"name", ds.name},
                      {"regions", regions},
                      {"steps", steps},
                      {"features", features},
                      {"edges", ds.graph->edge_count}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_pretrain(const CommonOpts& common, const std::vector<std::string>& data,
                 const std::string& out) {
  RunConfig cfg = resolve_config(common);
  auto datasets = load_prepared(data, cfg);
  Trainer<F> tr(cfg);
  ParameterStore<F> store;
  std::mt19937_64 rng(cfg.seed);
  tr.init_all(store, rng);
  LogSink log(common.log_file);
  auto res = tr.pretrain(datasets, store, rng, log.out);
  save_checkpoint(store, cfg, out);
  nlohmann::json j = {{"checkpoint", out},
                      {"epochs", res.epochs_run},
                      {"optimizer_steps", res.optimizer_steps},
                      {"test", res.test.to_json()}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_prompt_tune(const CommonOpts& common, const std::string& ckpath,
                    const std::string& data, const std::string& out) {
  auto ck = load_checkpoint<F>(ckpath);
  // Checkpoint config is the baseline; an explicit --config replaces it,
  // and a few tuning flags apply on top either way.
  RunConfig cfg =
      common.config_path.empty() ? ck.config : resolve_config(common);
  if (common.app->count("--epochs") > 0)
    cfg.tune_epochs = common.cfg.tune_epochs;
  if (common.app->count("--seed") > 0) cfg.seed = common.cfg.seed;
  if (common.app->count("--lr") > 0) cfg.lr = common.cfg.lr;
  cfg.validate();

  auto target = load_prepared({data}, cfg)[0];
  Trainer<F> tr(cfg);
  std::mt19937_64 rng(cfg.seed);
  LogSink log(common.log_file);
  auto res = tr.prompt_tune(target, ck.store, rng, log.out);
  if (!out.empty()) save_checkpoint(ck.store, cfg, out);
  nlohmann::json j = res.test.to_json();
  j["optimizer_steps"] = res.optimizer_steps;
  j["epochs"] = res.epochs_run;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_compare(const CommonOpts& common, const std::string& mode,
                const std::string& ckpath, const std::string& data) {
  Phase phase;
  if (mode == "zero_shot") phase = Phase::ZeroShot;
  else if (mode == "prompt_tune") phase = Phase::PromptTune;
  else if (mode == "end_to_end") phase = Phase::EndToEnd;
  else if (mode == "finetune_all") phase = Phase::FinetuneAll;
  else throw ConfigError("unknown compare mode '" + mode + "'");

  ParameterStore<F> store;
  RunConfig cfg;
  if (!ckpath.empty()) {
    auto ck = load_checkpoint<F>(ckpath);
    store = std::move(ck.store);
    cfg = ck.config;
  } else if (phase == Phase::EndToEnd) {
    cfg = resolve_config(common);
  } else {
    throw ConfigError("compare mode '" + mode + "' needs --checkpoint");
  }
  if (common.app->count("--compare-epochs") > 0)
    cfg.compare_epochs = common.cfg.compare_epochs;
  if (common.app->count("--seed") > 0) cfg.seed = common.cfg.seed;
  cfg.validate();

  auto target = load_prepared({data}, cfg)[0];
  Trainer<F> tr(cfg);
  std::mt19937_64 rng(cfg.seed);
  LogSink log(common.log_file);

  TrainResult<F> res;
  if (phase == Phase::PromptTune)
    res = tr.prompt_tune(target, store, rng, log.out);
  else
    res = tr.train_comparison(phase, target, store, rng, log.out);

  nlohmann::json j = {{"mode", mode},
                      {"optimizer_steps", res.optimizer_steps},
                      {"epochs", res.epochs_run},
                      {"test", res.test.to_json()}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpath, const std::string& data,
                 const std::string& split) {
  auto ck = load_checkpoint<F>(ckpath);
  auto target = load_prepared({data}, ck.config)[0];
  Trainer<F> tr(ck.config);
  const std::vector<WindowIndex>* windows = &target.split.test;
  if (split == "val") windows = &target.split.val;
  else if (split == "train") windows = &target.split.train;
  else if (split != "test")
    throw ConfigError("split must be train, val, or test");
  auto report = tr.evaluate(ck.store, target, *windows);
  std::cout << report.to_json().dump() << "\n";
  return 0;
}

int cmd_analyze(const std::string& ckpath, const std::string& data,
                const std::string& out_dir, std::size_t max_samples) {
  auto ck = load_checkpoint<F>(ckpath);
  const RunConfig& cfg = ck.config;
  auto target = load_prepared({data}, cfg)[0];
  Trainer<F> tr(cfg);

  // Prompt embeddings of one evaluation batch, one row per (sample,
  // region, feature).
  const auto& windows = target.split.test;
  const std::size_t count = std::min(cfg.batch, windows.size());
  auto batch = gather_batch(target.ds, windows, 0, count, cfg.history,
                            cfg.horizon);
  Var<F> e_pro =
      tr.prompt_net().forward(ck.store, batch, *target.ds.graph);
  const Shape& s = e_pro.shape();
  const std::size_t rows = std::min<std::size_t>(s[0] * s[1] * s[2],
                                                 max_samples);
  const std::size_t dp = s[3];
  DTensor emb(Shape{rows, dp});
  for (std::size_t i = 0; i < rows * dp; ++i) emb[i] = double(e_pro.value()[i]);

  double vr[2];
  DTensor scores = pca2(emb, vr);
  ProjectionResult proj = unit_circle(scores);
  UniformityStats stats = uniformity_stats(emb);

  {
    std::ofstream os(out_dir + "/projection.csv");
    if (!os) throw IoError("cannot write " + out_dir + "/projection.csv");
    os << "x,y\n";
    for (std::size_t i = 0; i < proj.points.shape()[0]; ++i)
      os << proj.points.at(i, 0) << "," << proj.points.at(i, 1) << "\n";
  }
  {
    nlohmann::json j = {{"mean_pairwise_cosine", stats.mean_pairwise_cosine},
                        {"circular_variance", stats.circular_variance},
                        {"uniformity_metric", stats.uniformity_metric},
                        {"samples", rows},
                        {"dropped", proj.dropped},
                        {"var_ratio", {vr[0], vr[1]}}};
    std::ofstream os(out_dir + "/stats.json");
    if (!os) throw IoError("cannot write " + out_dir + "/stats.json");
    os << j.dump(2) << "\n";
    std::cout << j.dump() << "\n";
  }
  {
    std::ofstream os(out_dir + "/scaling.csv");
    if (!os) throw IoError("cannot write " + out_dir + "/scaling.csv");
    os << "component,variable,value,median_ms\n";
    const std::vector<std::size_t> sweep = {32, 64, 128, 256, 512};
    const std::pair<BenchComponent, const char*> comps[] = {
        {BenchComponent::Temporal, "temporal"},
        {BenchComponent::Spatial, "spatial"},
        {BenchComponent::Uniformity, "uniformity"}};
    for (const auto& [comp, name] : comps) {
      auto rep = bench_scaling(comp, "R", sweep, 64, 64);
      for (const auto& pt : rep.points)
        os << name << ",R," << pt.value << "," << pt.median_ms << "\n";
      os << name << ",R,slope," << rep.slope << "\n";
    }
  }
  return 0;
}

int cmd_bench(const std::string& component, const std::string& variable,
              std::vector<std::size_t> sweep, std::size_t reps,
              const std::string& out) {
  BenchComponent comp;
  if (component == "temporal") comp = BenchComponent::Temporal;
  else if (component == "spatial") comp = BenchComponent::Spatial;
  else if (component == "uniformity") comp = BenchComponent::Uniformity;
  else throw ConfigError("component must be temporal, spatial, or uniformity");
  if (variable != "R" && variable != "dprime")
    throw ConfigError("variable must be R or dprime");

  auto rep = bench_scaling(comp, variable, sweep, 64, 64, reps);
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& pt : rep.points)
    pts.push_back({{"value", pt.value}, {"median_ms", pt.median_ms}});
  nlohmann::json j = {{"component", component},
                      {"variable", rep.variable},
                      {"points", pts},
                      {"slope", rep.slope},
                      {"slope_halfwidth", rep.slope_halfwidth}};
  std::cout << j.dump() << "\n";
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw IoError("cannot write '" + out + "'");
    os << "variable,value,median_ms\n";
    for (const auto& pt : rep.points)
      os << rep.variable << "," << pt.value << "," << pt.median_ms << "\n";
    os << rep.variable << ",slope," << rep.slope << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatio-temporal prompt-tuning toolkit"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  std::uint64_t g_seed = 0;
  std::size_t g_regions = 20, g_steps = 2016, g_features = 1, g_spd = 288;
  ShiftSpec g_spec;
  std::string g_name, g_out;
  gen->add_option("--seed", g_seed, "RNG seed (default 0)");
  gen->add_option("--regions", g_regions, "region count (default 20)");
  gen->add_option("--steps", g_steps, "time steps (default 2016)");
  gen->add_option("--features", g_features, "features per region (default 1)");
  gen->add_option("--steps-per-day", g_spd, "steps per day (default 288)");
  gen->add_option("--amplitude-scale", g_spec.amplitude_scale,
                  "mean daily amplitude (default 10)");
  gen->add_option("--amplitude-jitter", g_spec.amplitude_jitter,
                  "per-region amplitude jitter (default 0.5)");
  gen->add_option("--phase", g_spec.phase, "daily phase offset in days (default 0)");
  gen->add_option("--weekly-amp", g_spec.weekly_amp,
                  "weekly modulation strength (default 0.2)");
  gen->add_option("--noise", g_spec.noise, "noise level (default 0.1)");
  gen->add_option("--diffusion", g_spec.diffusion,
                  "neighbor diffusion strength (default 0.3)");
  gen->add_option("--graph-theta", g_spec.graph_theta,
                  "Gaussian kernel width (default 0.5)");
  gen->add_option("--graph-kappa", g_spec.graph_kappa,
                  "distance threshold (default 0.45)");
  gen->add_option("--name", g_name, "dataset name (default synth-<seed>)");
  gen->add_option("--out", g_out, "output .stds file")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain",
                                 "alternating pre-training over datasets");
  CommonOpts pre_c;
  std::vector<std::string> pre_data;
  std::string pre_out;
  add_config_flags(pre, pre_c);
  pre->add_option("--data", pre_data, "dataset files (.stds)")
      ->required()
      ->delimiter(',');
  pre->add_option("--out", pre_out, "output checkpoint (.stck)")->required();

  // prompt-tune
  auto* tune = app.add_subcommand(
      "prompt-tune", "tune the prompt network against a frozen backbone");
  CommonOpts tune_c;
  std::string tune_ck, tune_data, tune_out;
  add_config_flags(tune, tune_c);
  tune->add_option("--checkpoint", tune_ck, "pre-trained checkpoint")->required();
  tune->add_option("--data", tune_data, "target dataset (.stds)")->required();
  tune->add_option("--out", tune_out, "optional tuned checkpoint output");

  // compare
  auto* cmp = app.add_subcommand("compare", "baseline comparison modes");
  CommonOpts cmp_c;
  std::string cmp_mode, cmp_ck, cmp_data;
  add_config_flags(cmp, cmp_c);
  cmp->add_option("--mode", cmp_mode,
                  "zero_shot | prompt_tune | end_to_end | finetune_all")
      ->required();
  cmp->add_option("--checkpoint", cmp_ck, "checkpoint (unused by end_to_end)");
  cmp->add_option("--data", cmp_data, "target dataset (.stds)")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  std::string ev_ck, ev_data, ev_split = "test";
  ev->add_option("--checkpoint", ev_ck, "checkpoint (.stck)")->required();
  ev->add_option("--data", ev_data, "dataset (.stds)")->required();
  ev->add_option("--split", ev_split, "train | val | test (default test)");

  // analyze
  auto* an = app.add_subcommand(
      "analyze", "embedding projection, uniformity stats, scaling curves");
  std::string an_ck, an_data, an_dir = ".";
  std::size_t an_max = 4096;
  an->add_option("--checkpoint", an_ck, "checkpoint (.stck)")->required();
  an->add_option("--data", an_data, "dataset (.stds)")->required();
  an->add_option("--out-dir", an_dir, "output directory (default .)");
  an->add_option("--max-samples", an_max,
                 "max projected embeddings (default 4096)");

  // bench
  auto* be = app.add_subcommand("bench", "empirical complexity scaling");
  std::string be_comp, be_var = "R", be_out;
  std::vector<std::size_t> be_sweep = {64, 128, 256, 512, 1024};
  std::size_t be_reps = 11;
  be->add_option("--component", be_comp, "temporal | spatial | uniformity")
      ->required();
  be->add_option("--variable", be_var, "swept variable: R or dprime (default R)");
  be->add_option("--sweep", be_sweep, "sweep points (default 64..1024)")
      ->delimiter(',');
  be->add_option("--reps", be_reps, "repetitions per point (default 11)");
  be->add_option("--out", be_out, "optional CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsageError;
  }

  try {
    if (gen->parsed()) {
      if (g_name.empty()) g_name = "synth-" + std::to_string(g_seed);
      return cmd_gen_synth(g_seed, g_regions, g_steps, g_features, g_spd,
                           g_spec, g_name, g_out);
    }
    if (pre->parsed()) return cmd_pretrain(pre_c, pre_data, pre_out);
    if (tune->parsed())
      return cmd_prompt_tune(tune_c, tune_ck, tune_data, tune_out);
    if (cmp->parsed()) return cmd_compare(cmp_c, cmp_mode, cmp_ck, cmp_data);
    if (ev->parsed()) return cmd_evaluate(ev_ck, ev_data, ev_split);
    if (an->parsed()) return cmd_analyze(an_ck, an_data, an_dir, an_max);
    if (be->parsed()) return cmd_bench(be_comp, be_var, be_sweep, be_reps, be_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsageError;
}
