#pragma once

#include <chrono>
#include <iostream>

#include "stprompt/downstream.hpp"
#include "stprompt/losses.hpp"
#include "stprompt/sha256.hpp"

namespace stprompt {

// ---- checkpoint format ----
// Magic "STCK", version byte, u32 LE metadata length, JSON metadata
// (config snapshot, seed, per-tensor owner/frozen flags), then per-tensor
// records: u32 name length + bytes, u8 rank, u64 LE extents, little-endian
// float payload.

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const RunConfig& cfg,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, e] : store.entries())
    tensors.push_back({{"name", name},
                       {"owner", owner_name(e.owner)},
                       {"frozen", e.frozen}});
  nlohmann::json meta = {{"config", cfg.to_json()},
                         {"seed", cfg.seed},
                         {"dtype", detail::dtype_name<T>()},
                         {"tensors", tensors}};
  const std::string ms = meta.dump();
  os.write("STCK", 4);
  os.put(char(1));
  detail::write_u32(os, std::uint32_t(ms.size()));
  os.write(ms.data(), std::streamsize(ms.size()));
  for (const auto& [name, e] : store.entries()) {
    detail::write_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    const Shape& s = e.var.value().shape();
    os.put(char(s.size()));
    for (std::size_t ext : s) {
      std::uint64_t v = ext;
      unsigned char b[8];
      for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
      os.write(reinterpret_cast<const char*>(b), 8);
    }
    os.write(reinterpret_cast<const char*>(e.var.value().data().data()),
             std::streamsize(e.var.value().numel() * sizeof(T)));
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

template <typename T>
struct Checkpoint {
  ParameterStore<T> store;
  RunConfig config;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "STCK")
    throw DataError("bad magic in '" + path + "': expected STCK");
  const int version = is.get();
  if (version != 1)
    throw DataError("unsupported STCK version " + std::to_string(version));
  const std::uint32_t mlen = detail::read_u32(is, "STCK metadata length");
  std::string ms(mlen, '\0');
  if (!is.read(ms.data(), mlen)) throw IoError("truncated STCK metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ms);
  } catch (const std::exception& e) {
    throw DataError(std::string("bad STCK metadata json: ") + e.what());
  }
  if (meta.at("dtype").get<std::string>() != detail::dtype_name<T>())
    throw DataError("checkpoint dtype mismatch: file holds " +
                    meta.at("dtype").get<std::string>());

  Checkpoint<T> ck;
  ck.config = RunConfig::from_json(meta.at("config"));

  std::map<std::string, std::pair<Owner, bool>> flags;
  for (const auto& t : meta.at("tensors"))
    flags[t.at("name")] = {owner_from_name(t.at("owner")),
                           t.at("frozen").get<bool>()};

  for (std::size_t i = 0; i < flags.size(); ++i) {
    const std::uint32_t nlen = detail::read_u32(is, "tensor name length");
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw IoError("truncated tensor name");
    auto it = flags.find(name);
    if (it == flags.end())
      throw DataError("tensor '" + name + "' missing from STCK metadata");
    const int rank = is.get();
    if (rank < 0) throw IoError("truncated tensor rank");
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& ext : shape) {
      unsigned char b[8];
      if (!is.read(reinterpret_cast<char*>(b), 8))
        throw IoError("truncated tensor extents");
      std::uint64_t v = 0;
      for (int k = 0; k < 8; ++k) v |= std::uint64_t(b[k]) << (8 * k);
      ext = std::size_t(v);
    }
    Tensor<T> t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data().data()),
                 std::streamsize(t.numel() * sizeof(T))))
      throw IoError("truncated payload for tensor '" + name + "'");
    if (ck.store.contains(name))
      throw DataError("duplicate tensor name '" + name + "' in checkpoint");
    ck.store.create(name, std::move(t), it->second.first);
    ck.store.set_frozen(name, it->second.second);
  }
  return ck;
}

// ---- training ----

struct EpochLog {
  std::size_t epoch = 0;
  std::string dataset;
  double train_loss = 0;
  MetricReport val;
  double wall_ms = 0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"epoch", epoch},
                        {"dataset", dataset},
                        {"train_loss", train_loss},
                        {"val_mae", val.mae},
                        {"val_rmse", val.rmse},
                        {"wall_ms", wall_ms}};
    j["val_mape"] = val.mape ? nlohmann::json(*val.mape) : nlohmann::json();
    return j;
  }
};

enum class Phase { Pretrain, PromptTune, EndToEnd, FinetuneAll, ZeroShot };

template <typename T>
struct TrainResult {
  MetricReport test;
  std::size_t optimizer_steps = 0;
  std::size_t epochs_run = 0;
  std::vector<EpochLog> logs;
};

/// Dataset plus precomputed windows/split, ready for batching.
template <typename T>
struct PreparedDataset {
  STDataset<T> ds;
  Split split;

  static PreparedDataset prepare(STDataset<T> ds, const RunConfig& cfg,
                                 const SplitSpec& spec = {}) {
    ds.validate();
    if (!ds.graph)
      throw ConfigError("dataset '" + ds.name + "' has no graph attached");
    PreparedDataset p;
    auto windows = make_windows(ds, cfg.history, cfg.horizon);
    p.split = chrono_split(windows, spec);
    // Normalization statistics come from the training partition only: the
    // steps covered by training windows (inputs and targets).
    const std::size_t cut =
        p.split.train.back().start + cfg.history + cfg.horizon;
    const std::size_t R = ds.regions(), F = ds.features();
    Tensor<T> train_slice(Shape{R, cut, F});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t t = 0; t < cut; ++t)
        for (std::size_t f = 0; f < F; ++f)
          train_slice.at(r, t, f) = ds.x.at(r, t, f);
    double mu, sigma;
    compute_norm_stats(train_slice, mu, sigma);
    ds.mu = mu;
    ds.sigma = sigma;
    p.ds = std::move(ds);
    return p;
  }
};

template <typename T>
class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_(std::move(cfg)), prompt_(cfg_), down_(cfg_) {
    cfg_.validate();
  }

  const RunConfig& config() const { return cfg_; }
  const PromptNet<T>& prompt_net() const { return prompt_; }
  const DownstreamNet<T>& downstream_net() const { return down_; }

  void init_all(ParameterStore<T>& store, std::mt19937_64& rng) const {
    prompt_.init_params(store, rng);
    down_.init_params(store, rng);
  }

  /// One forward pass through prompt network + downstream model; returns
  /// the combined training loss. Predictions are denormalized before the
  /// regression term so the loss lives in raw units.
  Var<T> batch_loss(const ParameterStore<T>& store, const WindowBatch<T>& batch,
                    const STDataset<T>& ds) const {
    Var<T> e_pro = prompt_.forward(store, batch, *ds.graph);
    if (cfg_.replace_bn && batch.inputs.shape()[0] >= 2)
      e_pro = batch_standardize(e_pro);
    Var<T> prop = prompt_.propagation_matrix(*ds.graph);
    Var<T> pred_norm = down_.forward(store, e_pro, prop);
    Var<T> pred = add_scalar(scale(pred_norm, T(*ds.sigma)), T(*ds.mu));
    Var<T> l_r = regression_loss(pred, batch.targets);
    const bool use_uni =
        cfg_.lambda > 0 && !cfg_.ablate_uni && !cfg_.replace_bn;
    if (!use_uni) return l_r;
    Var<T> l_uni = uniformity_loss(e_pro, cfg_.tau, cfg_.uni_sign);
    return combined_loss(l_r, l_uni, cfg_.lambda);
  }

  MetricReport evaluate(const ParameterStore<T>& store,
                        const PreparedDataset<T>& pd,
                        const std::vector<WindowIndex>& windows) const {
    if (windows.empty()) throw DataError("evaluation partition is empty");
    const STDataset<T>& ds = pd.ds;
    Var<T> prop = prompt_.propagation_matrix(*ds.graph);
    double abs_sum = 0, sq_sum = 0, mape_sum = 0;
    std::size_t n = 0, mape_n = 0;
    const double eps = 1e-3 * *ds.sigma;  // MAPE mask, raw units
    for (std::size_t first = 0; first < windows.size();
         first += cfg_.batch) {
      const std::size_t count =
          std::min(cfg_.batch, windows.size() - first);
      WindowBatch<T> batch =
          gather_batch(ds, windows, first, count, cfg_.history, cfg_.horizon);
      Var<T> e_pro = prompt_.forward(store, batch, *ds.graph);
      if (cfg_.replace_bn && count >= 2) e_pro = batch_standardize(e_pro);
      Var<T> pred_norm = down_.forward(store, e_pro, prop);
      Var<T> pred = add_scalar(scale(pred_norm, T(*ds.sigma)), T(*ds.mu));
      const Tensor<T>& p = pred.value();
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double y = double(batch.targets[i]);
        const double e = y - double(p[i]);
        abs_sum += std::abs(e);
        sq_sum += e * e;
        if (std::abs(y) > eps) {
          mape_sum += std::abs(e / y);
          ++mape_n;
        }
      }
      n += p.numel();
    }
    MetricReport r;
    r.mae = abs_sum / double(n);
    r.rmse = std::sqrt(sq_sum / double(n));
    if (mape_n > 0) r.mape = mape_sum / double(mape_n);
    return r;
  }

  /// Alternating pre-training over multiple datasets: epoch e draws its
  /// batches from dataset e mod n (or interleaves per batch when
  /// configured). Returns the best-validation parameter snapshot applied
  /// to `store`.
  TrainResult<T> pretrain(std::vector<PreparedDataset<T>>& datasets,
                          ParameterStore<T>& store, std::mt19937_64& rng,
                          std::ostream* log = nullptr) {
    if (datasets.empty()) throw ConfigError("pretrain needs >= 1 dataset");
    Adam<T> opt(AdamConfig<T>{T(cfg_.lr)});
    TrainResult<T> res;
    double best_val = std::numeric_limits<double>::infinity();
    std::map<std::string, Tensor<T>> best_snap;

    for (std::size_t epoch = 0; epoch < cfg_.pretrain_epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      double train_loss = 0;
      std::string ds_name;
      if (!cfg_.interleave_batches) {
        PreparedDataset<T>& pd = datasets[epoch % datasets.size()];
        ds_name = pd.ds.name;
        train_loss = run_epoch(pd, store, opt, rng);
      } else {
        ds_name = "interleaved";
        train_loss = run_epoch_interleaved(datasets, store, opt, rng);
      }

      // Mean validation MAE across all pre-training datasets selects the
      // best checkpoint.
      double val_mae_sum = 0;
      MetricReport last_val;
      for (auto& pd : datasets) {
        last_val = evaluate(store, pd, pd.split.val);
        val_mae_sum += last_val.mae;
      }
      const double val_mae = val_mae_sum / double(datasets.size());

      EpochLog el;
      el.epoch = epoch;
      el.dataset = ds_name;
      el.train_loss = train_loss;
      el.val = last_val;
      el.val.mae = val_mae;
      el.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
      if (log) *log << el.to_json().dump() << "\n";
      res.logs.push_back(el);

      if (val_mae < best_val) {
        best_val = val_mae;
        best_snap.clear();
        for (const auto& [name, e] : store.entries())
          best_snap[name] = e.var.value();
      }
      ++res.epochs_run;
    }
    for (auto& [name, t] : best_snap) store.entry(name).var.value() = t;
    res.optimizer_steps = opt.step_count();
    if (!datasets.empty())
      res.test = evaluate(store, datasets[0], datasets[0].split.test);
    return res;
  }

  /// Prompt-tuning: downstream backbone frozen, prompt parameters and
  /// freshly initialized dataset-specific parameters trainable.
  TrainResult<T> prompt_tune(PreparedDataset<T>& target,
                             ParameterStore<T>& store, std::mt19937_64& rng,
                             std::ostream* log = nullptr) {
    store.set_frozen_by_owner(Owner::Downstream, true);
    store.set_frozen_by_owner(Owner::Prompt, false);
    store.remove_by_owner(Owner::DatasetSpecific);
    down_.init_head(store, rng);
    return fit(target, store, rng, cfg_.tune_epochs, /*patience=*/0, log);
  }

  TrainResult<T> train_comparison(Phase mode, PreparedDataset<T>& target,
                                  ParameterStore<T>& store,
                                  std::mt19937_64& rng,
                                  std::ostream* log = nullptr) {
    switch (mode) {
      case Phase::ZeroShot: {
        TrainResult<T> res;
        res.test = evaluate(store, target, target.split.test);
        return res;
      }
      case Phase::EndToEnd: {
        // Ignores any provided checkpoint: fresh random initialization.
        store = ParameterStore<T>();
        init_all(store, rng);
        return fit(target, store, rng, cfg_.compare_epochs, cfg_.patience,
                   log);
      }
      case Phase::FinetuneAll: {
        store.set_frozen_by_owner(Owner::Downstream, false);
        store.set_frozen_by_owner(Owner::Prompt, false);
        store.set_frozen_by_owner(Owner::DatasetSpecific, false);
        return fit(target, store, rng, cfg_.compare_epochs, cfg_.patience,
                   log);
      }
      default:
        throw ConfigError("unsupported comparison mode");
    }
  }

  /// Hashes of all frozen tensors, for freeze-soundness audits.
  static std::map<std::string, std::string> frozen_hashes(
      const ParameterStore<T>& store) {
    std::map<std::string, std::string> out;
    for (const auto& [name, e] : store.entries())
      if (e.frozen)
        out[name] = Sha256::of(e.var.value().data().data(),
                               e.var.value().numel() * sizeof(T));
    return out;
  }

 private:
  double run_epoch(PreparedDataset<T>& pd, ParameterStore<T>& store,
                   Adam<T>& opt, std::mt19937_64& rng) {
    std::vector<WindowIndex> order = pd.split.train;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg_.batch) {
      const std::size_t count = std::min(cfg_.batch, order.size() - first);
      WindowBatch<T> batch =
          gather_batch(pd.ds, order, first, count, cfg_.history, cfg_.horizon);
      store.zero_grads();
      Var<T> loss = batch_loss(store, batch, pd.ds);
      backward(loss);
      opt.step(store);
      loss_sum += double(loss.value()[0]);
      ++batches;
    }
    return batches ? loss_sum / double(batches) : 0.0;
  }

  // One batch from each dataset in turn until every dataset is exhausted.
  double run_epoch_interleaved(std::vector<PreparedDataset<T>>& datasets,
                               ParameterStore<T>& store, Adam<T>& opt,
                               std::mt19937_64& rng) {
    std::vector<std::vector<WindowIndex>> orders;
    std::vector<std::size_t> cursors(datasets.size(), 0);
    for (auto& pd : datasets) {
      orders.push_back(pd.split.train);
      std::shuffle(orders.back().begin(), orders.back().end(), rng);
    }
    double loss_sum = 0;
    std::size_t batches = 0;
    bool any = true;
    while (any) {
      any = false;
      for (std::size_t i = 0; i < datasets.size(); ++i) {
        if (cursors[i] >= orders[i].size()) continue;
        any = true;
        const std::size_t count =
            std::min(cfg_.batch, orders[i].size() - cursors[i]);
        WindowBatch<T> batch = gather_batch(datasets[i].ds, orders[i],
                                            cursors[i], count, cfg_.history,
                                            cfg_.horizon);
        cursors[i] += count;
        store.zero_grads();
        Var<T> loss = batch_loss(store, batch, datasets[i].ds);
        backward(loss);
        opt.step(store);
        loss_sum += double(loss.value()[0]);
        ++batches;
      }
    }
    return batches ? loss_sum / double(batches) : 0.0;
  }

  TrainResult<T> fit(PreparedDataset<T>& target, ParameterStore<T>& store,
                     std::mt19937_64& rng, std::size_t max_epochs,
                     std::size_t patience, std::ostream* log) {
    Adam<T> opt(AdamConfig<T>{T(cfg_.lr)});
    TrainResult<T> res;
    double best_val = std::numeric_limits<double>::infinity();
    std::map<std::string, Tensor<T>> best_snap;
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      const double train_loss = run_epoch(target, store, opt, rng);
      MetricReport val = evaluate(store, target, target.split.val);

      EpochLog el;
      el.epoch = epoch;
      el.dataset = target.ds.name;
      el.train_loss = train_loss;
      el.val = val;
      el.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
      if (log) *log << el.to_json().dump() << "\n";
      res.logs.push_back(el);
      ++res.epochs_run;

      if (val.mae < best_val) {
        best_val = val.mae;
        since_best = 0;
        best_snap.clear();
        for (const auto& [name, e] : store.entries())
          if (!e.frozen) best_snap[name] = e.var.value();
      } else if (patience > 0 && ++since_best >= patience) {
        break;
      }
    }
    for (auto& [name, t] : best_snap) store.entry(name).var.value() = t;
    res.optimizer_steps = opt.step_count();
    res.test = evaluate(store, target, target.split.test);
    return res;
  }

  RunConfig cfg_;
  PromptNet<T> prompt_;
  DownstreamNet<T> down_;
};

}  // namespace stprompt
