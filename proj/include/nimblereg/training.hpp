#pragma once

#include <spdlog/spdlog.h>

#include <chrono>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nimblereg/losses.hpp"
#include "nimblereg/model.hpp"
#include "nimblereg/svf.hpp"

namespace nimblereg {

struct TrainConfig {
  double lr = 1e-4;
  double lambda_reg = 1e-5;
  int batch_size = 50;
  int epochs = 1000;
  int steps = 12;
  double sigma = 1e-2;
  double epsilon = 1e-8;
  int points = 1100;
  int simplices = 2000;
  std::uint64_t seed = 0;       // shuffling and pair sampling
  std::uint64_t init_seed = 0;  // weight initialization
  int train_pairs = 200;        // subject pairs drawn for training by the CLI
  int val_pairs = 20;
  double val_fraction = 0.2;    // share of subjects held out for validation
  std::string data_dir;
  std::string out_dir;
  Architecture arch;

  void validate() const {
    require(lr > 0 && lambda_reg >= 0 && batch_size >= 1 && epochs >= 1 && steps >= 1 && sigma > 0 &&
                epsilon > 0 && points >= 4 && simplices >= 1 && train_pairs >= 1 && val_pairs >= 1 &&
                val_fraction > 0 && val_fraction < 1,
            ErrorCode::InvalidArgument, "training configuration has a non-positive or out-of-range value");
    arch.validate();
  }

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "lr",          "lambda_reg", "batch_size",  "epochs",   "steps",        "sigma",        "epsilon",
        "points",      "simplices",  "seed",        "init_seed", "train_pairs", "val_pairs",    "val_fraction",
        "data_dir",    "out_dir",    "local_widths", "global_widths", "head_widths"};
    return k;
  }

  /// Sets a field from its textual key; unknown keys are an error.
  void set(const std::string& key, const std::string& value) {
    auto widths = [&](std::vector<int>& dst) {
      dst.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) dst.push_back(std::stoi(item));
    };
    try {
      if (key == "lr") lr = std::stod(value);
      else if (key == "lambda_reg") lambda_reg = std::stod(value);
      else if (key == "batch_size") batch_size = std::stoi(value);
      else if (key == "epochs") epochs = std::stoi(value);
      else if (key == "steps") steps = std::stoi(value);
      else if (key == "sigma") sigma = std::stod(value);
      else if (key == "epsilon") epsilon = std::stod(value);
      else if (key == "points") points = std::stoi(value);
      else if (key == "simplices") simplices = std::stoi(value);
      else if (key == "seed") seed = std::stoull(value);
      else if (key == "init_seed") init_seed = std::stoull(value);
      else if (key == "train_pairs") train_pairs = std::stoi(value);
      else if (key == "val_pairs") val_pairs = std::stoi(value);
      else if (key == "val_fraction") val_fraction = std::stod(value);
      else if (key == "data_dir") data_dir = value;
      else if (key == "out_dir") out_dir = value;
      else if (key == "local_widths") widths(arch.local);
      else if (key == "global_widths") widths(arch.global);
      else if (key == "head_widths") widths(arch.head);
      else throw Error(ErrorCode::InvalidArgument, "unknown configuration key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "bad value '" + value + "' for configuration key '" + key + "'");
    }
  }

  /// Flat "key = value" lines; '#' starts a comment.
  void load(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      require(eq != std::string::npos, ErrorCode::Format, "config line without '=': " + line);
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  std::string dump() const {
    auto join = [](const std::vector<int>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    std::ostringstream out;
    out << "lr = " << io::format_double(lr) << "\nlambda_reg = " << io::format_double(lambda_reg)
        << "\nbatch_size = " << batch_size << "\nepochs = " << epochs << "\nsteps = " << steps
        << "\nsigma = " << io::format_double(sigma) << "\nepsilon = " << io::format_double(epsilon)
        << "\npoints = " << points << "\nsimplices = " << simplices << "\nseed = " << seed
        << "\ninit_seed = " << init_seed << "\ntrain_pairs = " << train_pairs << "\nval_pairs = " << val_pairs
        << "\nval_fraction = " << io::format_double(val_fraction) << "\ndata_dir = " << data_dir
        << "\nout_dir = " << out_dir << "\nlocal_widths = " << join(arch.local)
        << "\nglobal_widths = " << join(arch.global) << "\nhead_widths = " << join(arch.head) << "\n";
    return out.str();
  }
};

/// Moving and reference surfaces of the same region from two subjects.
struct RegionPair {
  const RegionSurface* moving = nullptr;
  const RegionSurface* reference = nullptr;
  std::string moving_subject, reference_subject;
};

struct PairLoss {
  double total = 0.0;
  double fit = 0.0;
  double reg = 0.0;
};

namespace detail {

/// Lexicographically sorted copy of a surface with its simplices remapped.
/// Training runs on this canonical order so results do not depend on how
/// either cloud was listed.
struct CanonicalPair {
  PointCloud moving, reference;
  std::vector<Triangle> simplices;
  std::vector<std::size_t> moving_order;  // canonical slot -> original index
};

inline CanonicalPair canonicalize(const RegionPair& pair) {
  require(pair.moving && pair.reference, ErrorCode::InvalidArgument, "region pair is missing a surface");
  require(pair.moving->region == pair.reference->region, ErrorCode::InvalidArgument,
          "region pair surfaces belong to different regions");
  CanonicalPair c;
  c.moving_order = lex_order(pair.moving->points);
  std::vector<int> slot(pair.moving->points.size());
  for (std::size_t k = 0; k < c.moving_order.size(); ++k) {
    slot[c.moving_order[k]] = static_cast<int>(k);
    c.moving.push_back(pair.moving->points[c.moving_order[k]]);
  }
  // coincident points share one slot so duplicates cannot reroute gradients
  std::vector<int> first(c.moving.size());
  for (std::size_t k = 0; k < first.size(); ++k)
    first[k] = k > 0 && c.moving[k] == c.moving[k - 1] ? first[k - 1] : static_cast<int>(k);
  for (const Triangle& t : pair.moving->simplices) {
    Triangle u = {first[slot[t[0]]], first[slot[t[1]]], first[slot[t[2]]]};
    std::rotate(u.begin(), std::min_element(u.begin(), u.end()), u.end());
    c.simplices.push_back(u);
  }
  std::sort(c.simplices.begin(), c.simplices.end());
  for (std::size_t k : lex_order(pair.reference->points)) c.reference.push_back(pair.reference->points[k]);
  return c;
}

}  // namespace detail

/// Loss of one pair; when `grads` is given, accumulates weight * dL/dtheta.
inline PairLoss pair_loss(const ModelParams& params, const RegionPair& pair, const TrainConfig& cfg,
                          ModelParams* grads = nullptr, double weight = 1.0) {
  const detail::CanonicalPair c = detail::canonicalize(pair);
  ForwardResult fwd = forward(params, c.moving, c.reference);
  SvfSample svf{c.moving, fwd.velocities, cfg.sigma, cfg.epsilon};
  const PointCloud moved = exp_svf(svf, c.moving, cfg.steps);
  const ChamferResult ch = chamfer_detailed(moved, c.reference);
  PointCloud reg_grad;
  PairLoss loss;
  loss.fit = ch.value;
  loss.reg = simplex_regularizer(c.moving, c.simplices, fwd.velocities, grads ? &reg_grad : nullptr);
  loss.total = loss.fit + cfg.lambda_reg * loss.reg;
  if (!std::isfinite(loss.total))
    throw Error(ErrorCode::NonFinite, "non-finite loss for region " + std::to_string(pair.moving->region) +
                                          " (" + pair.moving_subject + " -> " + pair.reference_subject +
                                          "): fit=" + std::to_string(loss.fit) + " reg=" + std::to_string(loss.reg));
  if (grads) {
    const PointCloud d_moved = chamfer_backward(moved, c.reference, ch, weight);
    PointCloud d_v = exp_svf_backward(svf, c.moving, cfg.steps, d_moved);
    for (std::size_t i = 0; i < d_v.size(); ++i) d_v[i] += (weight * cfg.lambda_reg) * reg_grad[i];
    const ModelParams g = backward(params, fwd.cache, d_v);
    std::vector<Matrix*> dst;
    grads->for_each_tensor([&](const std::string&, Matrix& m) { dst.push_back(&m); });
    std::size_t i = 0;
    g.for_each_tensor([&](const std::string&, const Matrix& m) { *dst[i++] += m; });
  }
  return loss;
}

/// Batch-mean loss; `grads` receives its gradient.
inline PairLoss batch_loss(const ModelParams& params, std::span<const RegionPair> batch, const TrainConfig& cfg,
                           ModelParams& grads) {
  require(!batch.empty(), ErrorCode::InvalidArgument, "empty training batch");
  grads = params.zeros_like();
  PairLoss mean;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const RegionPair& pair : batch) {
    const PairLoss l = pair_loss(params, pair, cfg, &grads, w);
    mean.total += w * l.total;
    mean.fit += w * l.fit;
    mean.reg += w * l.reg;
  }
  return mean;
}

/// One optimizer step on the batch-mean loss.
inline PairLoss train_step(ModelParams& params, AdamState& state, std::span<const RegionPair> batch,
                           const TrainConfig& cfg) {
  ModelParams grads;
  const PairLoss mean = batch_loss(params, batch, cfg, grads);
  adam_step(params, grads, state, cfg.lr);
  return mean;
}

struct SubjectSurfaces {
  std::string id;
  std::map<Label, RegionSurface> regions;
};

/// Subjects plus the subject-index pairs used for training and validation.
struct Dataset {
  std::vector<SubjectSurfaces> subjects;
  std::vector<std::pair<std::size_t, std::size_t>> train_pairs, val_pairs;

  std::vector<RegionPair> region_pairs(std::span<const std::pair<std::size_t, std::size_t>> pairs) const {
    std::vector<RegionPair> out;
    for (const auto& [a, b] : pairs) {
      const SubjectSurfaces& m = subjects.at(a);
      const SubjectSurfaces& r = subjects.at(b);
      for (const auto& [label, surface] : m.regions) {
        auto it = r.regions.find(label);
        if (it == r.regions.end()) continue;
        out.push_back({&surface, &it->second, m.id, r.id});
      }
    }
    return out;
  }
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelParams best;
  int best_epoch = 0;
  std::vector<HistoryRow> history;
};

inline double validation_loss(const ModelParams& params, std::span<const RegionPair> pairs, const TrainConfig& cfg) {
  double sum = 0.0;
  for (const RegionPair& p : pairs) sum += pair_loss(params, p, cfg).total;
  return sum / static_cast<double>(pairs.size());
}

/// Loss history; wall-clock times go to timing_csv() so this file is
/// reproducible.
inline std::string history_csv(std::span<const HistoryRow> rows) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  for (const HistoryRow& r : rows)
    out << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.val_loss) << '\n';
  return out.str();
}

inline std::string timing_csv(std::span<const HistoryRow> rows) {
  std::ostringstream out;
  out << "epoch,wall_seconds\n";
  for (const HistoryRow& r : rows) out << r.epoch << ',' << io::format_double(r.wall_seconds) << '\n';
  return out.str();
}

/// Epochs of shuffled region-pair batches; keeps the parameters with the
/// lowest validation loss (earliest epoch on ties).
inline TrainResult train(const TrainConfig& cfg, const Dataset& data,
                         std::function<void(const HistoryRow&)> on_epoch = {},
                         std::optional<ModelParams> initial = std::nullopt) {
  cfg.validate();
  std::set<std::size_t> train_subjects, val_subjects;
  for (const auto& [a, b] : data.train_pairs) train_subjects.insert({a, b});
  for (const auto& [a, b] : data.val_pairs) val_subjects.insert({a, b});
  for (std::size_t s : val_subjects)
    require(!train_subjects.count(s), ErrorCode::InvalidArgument,
            "validation subject " + data.subjects.at(s).id + " also appears in training pairs");

  std::vector<RegionPair> train_pairs = data.region_pairs(data.train_pairs);
  const std::vector<RegionPair> val_pairs = data.region_pairs(data.val_pairs);
  require(!train_pairs.empty(), ErrorCode::InvalidArgument, "training dataset has no region pairs");
  require(!val_pairs.empty(), ErrorCode::InvalidArgument, "validation dataset has no region pairs");

  ModelParams params = initial ? *initial : init_params(cfg.arch, cfg.init_seed);
  require(params.arch == cfg.arch, ErrorCode::ShapeMismatch, "initial parameters do not match the architecture");
  AdamState state = AdamState::for_params(params);
  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(train_pairs);
    double train_sum = 0.0;
    for (std::size_t b = 0; b < train_pairs.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(train_pairs.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const PairLoss l = train_step(params, state, std::span(train_pairs).subspan(b, e - b), cfg);
      train_sum += l.total * static_cast<double>(e - b);
    }
    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = train_sum / static_cast<double>(train_pairs.size());
    row.val_loss = validation_loss(params, val_pairs, cfg);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(row);
    if (row.val_loss < best_val) {
      best_val = row.val_loss;
      result.best = params;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(row);
  }
  return result;
}

}  // namespace nimblereg
