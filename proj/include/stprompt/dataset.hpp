#pragma once

#include <fstream>
#include <optional>

#include "stprompt/graph.hpp"
#include "stprompt/tensor.hpp"
#include "json.hpp"

namespace stprompt {

/// Raw spatio-temporal series: X in R^{R x T x F} plus calendar metadata.
/// mu/sigma are filled from the training partition at split time.
template <typename T>
struct STDataset {
  std::string name;
  Tensor<T> x;  // (R, T, F), raw scale
  std::size_t steps_per_day = 288;
  int start_weekday = 0;    // 0..6
  std::size_t start_step = 0;  // global step index of x[:,0,:]
  std::optional<double> mu, sigma;
  std::shared_ptr<RoadGraph> graph;

  std::size_t regions() const { return x.shape()[0]; }
  std::size_t steps() const { return x.shape()[1]; }
  std::size_t features() const { return x.shape()[2]; }

  void validate() const {
    if (x.rank() != 3) throw DataError("dataset tensor must be (R,T,F)");
    if (steps_per_day < 1) throw DataError("steps_per_day must be >= 1");
    if (graph && graph->regions != regions())
      throw ConfigError("graph has " + std::to_string(graph->regions) +
                        " regions but dataset has " +
                        std::to_string(regions()));
  }

  double tod_fraction(std::size_t t) const {
    return double((start_step + t) % steps_per_day) / double(steps_per_day);
  }
  double dow_fraction(std::size_t t) const {
    const std::size_t day = (start_step + t) / steps_per_day;
    return double((std::size_t(start_weekday) + day) % 7) / 7.0;
  }
};

template <typename T>
void compute_norm_stats(const Tensor<T>& x, double& mu, double& sigma) {
  if (x.numel() == 0) throw DataError("cannot normalize an empty tensor");
  double sum = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) sum += double(x[i]);
  mu = sum / double(x.numel());
  double ss = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = double(x[i]) - mu;
    ss += d * d;
  }
  sigma = std::sqrt(ss / double(x.numel()));  // population std
  if (sigma <= 0)
    throw DataError("degenerate data: standard deviation is zero");
}

template <typename T>
Tensor<T> zscore_normalize(const Tensor<T>& x, double mu, double sigma) {
  if (sigma <= 0) throw DataError("degenerate data: sigma must be positive");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    out[i] = T((double(x[i]) - mu) / sigma);
  return out;
}

template <typename T>
Tensor<T> denormalize(const Tensor<T>& x, double mu, double sigma) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    out[i] = T(double(x[i]) * sigma + mu);
  return out;
}

/// One forecasting sample: normalized input window, raw-scale target window,
/// and the calendar fractions of the last input step.
struct WindowIndex {
  std::size_t start;  // input covers [start, start+H), target [start+H, start+H+P)
  double tod;         // time-of-day fraction at the last input step
  double dow;         // day-of-week fraction at the last input step
};

template <typename T>
std::vector<WindowIndex> make_windows(const STDataset<T>& ds, std::size_t h,
                                      std::size_t p, std::size_t stride = 1) {
  if (ds.steps() < h + p)
    throw DataError("insufficient data: T=" + std::to_string(ds.steps()) +
                    " < H+P=" + std::to_string(h + p));
  std::vector<WindowIndex> out;
  for (std::size_t s = 0; s + h + p <= ds.steps(); s += stride) {
    WindowIndex w;
    w.start = s;
    w.tod = ds.tod_fraction(s + h - 1);
    w.dow = ds.dow_fraction(s + h - 1);
    out.push_back(w);
  }
  return out;
}

struct SplitSpec {
  double train = 0.6, val = 0.2, test = 0.2;
  bool chronological = true;

  void validate() const {
    if (train <= 0 || val <= 0 || test <= 0)
      throw ConfigError("split ratios must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9)
      throw ConfigError("split ratios must sum to 1");
  }
};

struct Split {
  std::vector<WindowIndex> train, val, test;
};

inline Split chrono_split(const std::vector<WindowIndex>& windows,
                          const SplitSpec& spec = {}) {
  spec.validate();
  if (windows.empty()) throw DataError("no windows to split");
  const std::size_t n = windows.size();
  const std::size_t ntr = std::size_t(spec.train * double(n));
  const std::size_t nva = std::size_t(spec.val * double(n));
  if (ntr == 0 || nva == 0 || ntr + nva >= n)
    throw DataError("split produces an empty partition (" +
                    std::to_string(n) + " windows)");
  Split s;
  s.train.assign(windows.begin(), windows.begin() + ntr);
  s.val.assign(windows.begin() + ntr, windows.begin() + ntr + nva);
  s.test.assign(windows.begin() + ntr + nva, windows.end());
  return s;
}

/// Materialized minibatch. Inputs are z-score normalized; targets stay in
/// raw scale (predictions are denormalized before the loss).
template <typename T>
struct WindowBatch {
  Tensor<T> inputs;   // (B, R, H, F), normalized
  Tensor<T> targets;  // (B, R, P, F), raw
  std::vector<double> tod, dow;  // per sample, last input step
};

template <typename T>
WindowBatch<T> gather_batch(const STDataset<T>& ds,
                            const std::vector<WindowIndex>& windows,
                            std::size_t first, std::size_t count,
                            std::size_t h, std::size_t p) {
  if (!ds.mu || !ds.sigma)
    throw ConfigError("dataset '" + ds.name +
                      "' has no normalization statistics; split first");
  const std::size_t R = ds.regions(), F = ds.features();
  WindowBatch<T> b;
  b.inputs = Tensor<T>(Shape{count, R, h, F});
  b.targets = Tensor<T>(Shape{count, R, p, F});
  const double mu = *ds.mu, sigma = *ds.sigma;
  for (std::size_t i = 0; i < count; ++i) {
    const WindowIndex& w = windows[first + i];
    b.tod.push_back(w.tod);
    b.dow.push_back(w.dow);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t t = 0; t < h; ++t)
        for (std::size_t f = 0; f < F; ++f)
          b.inputs.at(i, r, t, f) =
              T((double(ds.x.at(r, w.start + t, f)) - mu) / sigma);
      for (std::size_t t = 0; t < p; ++t)
        for (std::size_t f = 0; f < F; ++f)
          b.targets.at(i, r, t, f) = ds.x.at(r, w.start + h + t, f);
    }
  }
  return b;
}

// ---- CSV ingestion ----
// One row per time step; columns region-major (r0f0, r0f1, ..., r1f0, ...).
// The layout descriptor is a JSON file: {"R":..,"F":..,"steps_per_day":..,
// "start_weekday":..,"start_step":..}.

struct CsvLayout {
  std::size_t regions = 0, features = 1, steps_per_day = 288;
  int start_weekday = 0;
  std::size_t start_step = 0;

  static CsvLayout from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open layout descriptor '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw DataError("bad layout descriptor '" + path + "': " + e.what());
    }
    CsvLayout l;
    l.regions = j.at("R").get<std::size_t>();
    l.features = j.value("F", std::size_t(1));
    l.steps_per_day = j.value("steps_per_day", std::size_t(288));
    l.start_weekday = j.value("start_weekday", 0);
    l.start_step = j.value("start_step", std::size_t(0));
    return l;
  }
};

template <typename T>
STDataset<T> load_csv(const std::string& path, const CsvLayout& layout) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset csv '" + path + "'");
  const std::size_t cols = layout.regions * layout.features;
  std::vector<std::vector<T>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<T> row;
    std::istringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      ++col;
      try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        row.push_back(T(v));
      } catch (const std::exception&) {
        throw DataError("non-numeric cell at row " + std::to_string(lineno) +
                        ", column " + std::to_string(col) + " of '" + path +
                        "'");
      }
    }
    if (row.size() != cols)
      throw DataError("ragged row " + std::to_string(lineno) + ": got " +
                      std::to_string(row.size()) + " cells, expected " +
                      std::to_string(cols));
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw DataError("insufficient data: '" + path + "' has no data rows");

  STDataset<T> ds;
  ds.name = path;
  ds.steps_per_day = layout.steps_per_day;
  ds.start_weekday = layout.start_weekday;
  ds.start_step = layout.start_step;
  const std::size_t steps = rows.size();
  ds.x = Tensor<T>(Shape{layout.regions, steps, layout.features});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t r = 0; r < layout.regions; ++r)
      for (std::size_t f = 0; f < layout.features; ++f)
        ds.x.at(r, t, f) = rows[t][r * layout.features + f];
  return ds;
}

// ---- synthetic generation ----

/// Controls for emulating distribution shift across synthetic datasets.
/// The generated signal for region r at step t is
///   base_r(t) = a_r * (1 + 0.6 sin(2*pi*(tod + phase + phi_r)))
///                   * (1 + weekly_amp * sin(2*pi*dow))
///   X_r(t)    = (1-diffusion) * base_r(t) + diffusion * (P_sym base(t))_r
///                   + noise * a_r * N(0,1)
/// with a_r = amplitude_scale * (1 + amplitude_jitter * u_r), u_r ~ U[0,1),
/// phi_r a per-region phase jitter, and P_sym the symmetric-normalized
/// adjacency of a random geometric graph (ring edges added so the graph is
/// always connected).
struct ShiftSpec {
  double amplitude_scale = 10.0;
  double amplitude_jitter = 0.5;
  double phase = 0.0;
  double weekly_amp = 0.2;
  double noise = 0.1;
  double diffusion = 0.3;
  double graph_theta = 0.5;
  double graph_kappa = 0.45;
};

template <typename T>
STDataset<T> gen_synthetic(std::uint64_t seed, std::size_t regions,
                           std::size_t steps, std::size_t features,
                           const ShiftSpec& spec = {},
                           std::size_t steps_per_day = 288) {
  if (regions < 1 || steps < 1 || features < 1)
    throw ConfigError("synthetic dimensions must be >= 1");
  std::mt19937_64 rng(seed);

  // Random geometric graph plus a ring to guarantee connectivity.
  DTensor coords = DTensor::randu(Shape{regions, 2}, rng, 0.0, 1.0);
  DTensor dist(Shape{regions, regions});
  for (std::size_t i = 0; i < regions; ++i)
    for (std::size_t j = 0; j < regions; ++j) {
      const double dx = coords.at(i, 0) - coords.at(j, 0);
      const double dy = coords.at(i, 1) - coords.at(j, 1);
      dist.at(i, j) = std::sqrt(dx * dx + dy * dy);
    }
  DTensor adj = build_adjacency(dist, spec.graph_theta, spec.graph_kappa);
  if (regions > 1) {
    for (std::size_t r = 0; r < regions; ++r) {
      const std::size_t nxt = (r + 1) % regions;
      if (adj.at(r, nxt) == 0) {
        adj.at(r, nxt) = 0.5;
        adj.at(nxt, r) = 0.5;
      }
    }
  }
  auto graph = std::make_shared<RoadGraph>(RoadGraph::from_adjacency(adj));
  DTensor prop = graph->sym_norm_adjacency();

  std::vector<double> amp(regions), phi(regions);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t r = 0; r < regions; ++r) {
    amp[r] = spec.amplitude_scale * (1.0 + spec.amplitude_jitter * unif(rng));
    phi[r] = 0.1 * unif(rng);
  }

  STDataset<T> ds;
  ds.name = "synthetic-" + std::to_string(seed);
  ds.steps_per_day = steps_per_day;
  ds.graph = graph;
  ds.x = Tensor<T>(Shape{regions, steps, features});

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> base(regions), mixed(regions);
  for (std::size_t t = 0; t < steps; ++t) {
    const double tod = ds.tod_fraction(t);
    const double dow = ds.dow_fraction(t);
    const double weekly =
        1.0 + spec.weekly_amp * std::sin(2.0 * M_PI * dow);
    for (std::size_t r = 0; r < regions; ++r)
      base[r] = amp[r] *
                (1.0 + 0.6 * std::sin(2.0 * M_PI * (tod + spec.phase + phi[r]))) *
                weekly;
    for (std::size_t r = 0; r < regions; ++r) {
      double acc = 0;
      for (std::size_t r2 = 0; r2 < regions; ++r2)
        acc += prop.at(r, r2) * base[r2];
      mixed[r] = (1.0 - spec.diffusion) * base[r] + spec.diffusion * acc;
    }
    for (std::size_t r = 0; r < regions; ++r)
      for (std::size_t f = 0; f < features; ++f)
        ds.x.at(r, t, f) =
            T(mixed[r] + spec.noise * amp[r] * gauss(rng));
  }
  return ds;
}

// ---- binary dataset format ----
// Magic "STDS", version byte, u32 LE header length, JSON header, raw
// little-endian float payload in (R,T,F) row-major order, then (when the
// dataset carries a graph) R*R float64 adjacency entries.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError("truncated file while reading " + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

}  // namespace detail

template <typename T>
void save_dataset(const STDataset<T>& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  nlohmann::json header = {
      {"name", ds.name},
      {"R", ds.regions()},
      {"T", ds.steps()},
      {"F", ds.features()},
      {"steps_per_day", ds.steps_per_day},
      {"start_weekday", ds.start_weekday},
      {"start_step", ds.start_step},
      {"dtype", detail::dtype_name<T>()},
      {"has_graph", ds.graph != nullptr},
  };
  const std::string hs = header.dump();
  os.write("STDS", 4);
  os.put(char(1));  // version
  detail::write_u32(os, std::uint32_t(hs.size()));
  os.write(hs.data(), std::streamsize(hs.size()));
  os.write(reinterpret_cast<const char*>(ds.x.data().data()),
           std::streamsize(ds.x.numel() * sizeof(T)));
  if (ds.graph)
    os.write(reinterpret_cast<const char*>(ds.graph->adjacency.data().data()),
             std::streamsize(ds.graph->adjacency.numel() * sizeof(double)));
  if (!os) throw IoError("write failed for '" + path + "'");
}

template <typename T>
STDataset<T> load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset file '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "STDS")
    throw DataError("bad magic in '" + path + "': expected STDS");
  const int version = is.get();
  if (version != 1)
    throw DataError("unsupported STDS version " + std::to_string(version));
  const std::uint32_t hlen = detail::read_u32(is, "STDS header length");
  std::string hs(hlen, '\0');
  if (!is.read(hs.data(), hlen)) throw IoError("truncated STDS header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    throw DataError(std::string("bad STDS header json: ") + e.what());
  }
  if (header.at("dtype").get<std::string>() !=
      detail::dtype_name<T>())
    throw DataError("dtype mismatch in '" + path + "': file holds " +
                    header.at("dtype").get<std::string>());

  STDataset<T> ds;
  ds.name = header.value("name", path);
  const std::size_t R = header.at("R"), Tn = header.at("T"),
                    F = header.at("F");
  ds.steps_per_day = header.at("steps_per_day");
  ds.start_weekday = header.at("start_weekday");
  ds.start_step = header.at("start_step");
  ds.x = Tensor<T>(Shape{R, Tn, F});
  if (!is.read(reinterpret_cast<char*>(ds.x.data().data()),
               std::streamsize(ds.x.numel() * sizeof(T))))
    throw IoError("truncated STDS payload in '" + path + "'");
  if (header.value("has_graph", false)) {
    DTensor adj(Shape{R, R});
    if (!is.read(reinterpret_cast<char*>(adj.data().data()),
                 std::streamsize(adj.numel() * sizeof(double))))
      throw IoError("truncated STDS adjacency in '" + path + "'");
    ds.graph = std::make_shared<RoadGraph>(RoadGraph::from_adjacency(adj));
  }
  return ds;
}

}  // namespace stprompt
