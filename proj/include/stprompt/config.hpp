#pragma once

#include <fstream>
#include <string>

#include "json.hpp"
#include "stprompt/tensor.hpp"

namespace stprompt {

enum class Propagation { SymNorm, Raw };
enum class UniformitySign { Separation, Literal };

/// Flat run configuration. Defaults follow the reference protocol: 12-step
/// windows, 32 hidden units everywhere, 2 encoder layers, tau=0.3,
/// lambda=1.0, batch 64, Adam lr 1e-3.
struct RunConfig {
  std::size_t history = 12;   // H: input window length
  std::size_t horizon = 12;   // P: prediction length
  std::size_t d = 32;         // data-projection width
  std::size_t d_t = 32;       // temporal context width (per calendar signal)
  std::size_t d_r = 32;       // spatial context width
  std::size_t layers = 2;     // L: stacked encoder layers
  double tau = 0.3;
  double lambda = 1.0;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t pretrain_epochs = 300;
  std::size_t tune_epochs = 20;
  std::size_t compare_epochs = 100;
  std::size_t patience = 25;
  std::uint64_t seed = 0;

  // Ablation switches.
  bool ablate_tc = false;   // -TC: zero the temporal context
  bool ablate_sc = false;   // -SC: zero the spatial context
  bool ablate_te = false;   // -TE: temporal encoder becomes identity
  bool ablate_se = false;   // -SE: spatial encoder becomes identity
  bool ablate_uni = false;  // -Uni: drop the uniformity loss (lambda = 0)
  bool replace_bn = false;  // r/BN: batch-standardize E_pro instead

  Propagation propagation = Propagation::SymNorm;
  UniformitySign uni_sign = UniformitySign::Separation;

  // Batch interleaving granularity for multi-dataset pre-training.
  bool interleave_batches = false;  // default: one dataset per epoch

  std::size_t d_prime() const { return d + 2 * d_t + d_r; }

  void validate() const {
    if (history < 1 || horizon < 1 || d < 1 || d_t < 1 || d_r < 1 ||
        layers < 1 || batch < 1)
      throw ConfigError("all dimensions must be >= 1");
    if (tau <= 0) throw ConfigError("tau must be positive");
    if (lambda < 0) throw ConfigError("lambda must be nonnegative");
    if (ablate_uni && replace_bn)
      throw ConfigError("-Uni and r/BN are mutually exclusive");
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.history = j.value("H", c.history);
    c.horizon = j.value("P", c.horizon);
    c.d = j.value("d", c.d);
    c.d_t = j.value("d_t", c.d_t);
    c.d_r = j.value("d_r", c.d_r);
    c.layers = j.value("L", c.layers);
    c.tau = j.value("tau", c.tau);
    c.lambda = j.value("lambda", c.lambda);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.tune_epochs = j.value("tune_epochs", c.tune_epochs);
    c.compare_epochs = j.value("compare_epochs", c.compare_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.ablate_tc = j.value("ablate_tc", c.ablate_tc);
    c.ablate_sc = j.value("ablate_sc", c.ablate_sc);
    c.ablate_te = j.value("ablate_te", c.ablate_te);
    c.ablate_se = j.value("ablate_se", c.ablate_se);
    c.ablate_uni = j.value("ablate_uni", c.ablate_uni);
    c.replace_bn = j.value("replace_bn", c.replace_bn);
    const std::string prop = j.value("propagation", std::string("sym_norm"));
    if (prop == "sym_norm")
      c.propagation = Propagation::SymNorm;
    else if (prop == "raw")
      c.propagation = Propagation::Raw;
    else
      throw ConfigError("propagation must be 'sym_norm' or 'raw'");
    const std::string us = j.value("uniformity_sign", std::string("separation"));
    if (us == "separation")
      c.uni_sign = UniformitySign::Separation;
    else if (us == "literal")
      c.uni_sign = UniformitySign::Literal;
    else
      throw ConfigError("uniformity_sign must be 'separation' or 'literal'");
    return c;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"H", history},
        {"P", horizon},
        {"d", d},
        {"d_t", d_t},
        {"d_r", d_r},
        {"L", layers},
        {"tau", tau},
        {"lambda", lambda},
        {"batch", batch},
        {"lr", lr},
        {"pretrain_epochs", pretrain_epochs},
        {"tune_epochs", tune_epochs},
        {"compare_epochs", compare_epochs},
        {"patience", patience},
        {"seed", seed},
        {"ablate_tc", ablate_tc},
        {"ablate_sc", ablate_sc},
        {"ablate_te", ablate_te},
        {"ablate_se", ablate_se},
        {"ablate_uni", ablate_uni},
        {"replace_bn", replace_bn},
        {"propagation",
         propagation == Propagation::SymNorm ? "sym_norm" : "raw"},
        {"uniformity_sign",
         uni_sign == UniformitySign::Separation ? "separation" : "literal"},
    };
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("bad config json '" + path + "': " + e.what());
    }
    return from_json(j);
  }
};

}  // namespace stprompt
