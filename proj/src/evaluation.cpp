#include "sghp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "sghp/error.hpp"
#include "sghp/random.hpp"

namespace sghp::eval {

namespace {

std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw Error("length_mismatch", "prediction and truth lengths differ");
  if (a == 0) throw Error("empty_input", "no predictions to score");
}

}  // namespace

std::vector<LastEventPrediction> predict_last_events(const data::Dataset& ds, const model::ModelParams& params,
                                                     const model::ModelConfig& cfg, std::uint64_t noise_seed) {
  if (ds.num_types != cfg.num_types || ds.covariate_dim != cfg.covariate_dim)
    throw Error("dataset_mismatch", "dataset type count or covariate length differs from the model");
  std::vector<LastEventPrediction> out;
  out.reserve(ds.size());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto& seq = ds.sequences[n];
    const std::size_t L = seq.size();
    if (L < 2) throw Error("sequence_too_short", "sequence too short: need at least two events");
    const auto h = model::encode_history(seq, L - 1, params, cfg);
    Rng rng(derive_seed(noise_seed, {n}));
    LastEventPrediction p;
    p.predicted_gap = model::predict_arrival(h, model::draw_noise(rng, cfg.noise_samples, cfg.history_dim()), params).mean;
    p.true_gap = seq.events[L - 1].time - seq.events[L - 2].time;
    p.type_probs = model::predict_type(h, params);
    p.predicted_type = argmax_first(p.type_probs);
    p.true_type = seq.events[L - 1].type;
    out.push_back(std::move(p));
  }
  return out;
}

double rmse(const std::vector<double>& predicted, const std::vector<double>& truth) {
  check_lengths(predicted.size(), truth.size());
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(predicted.size()));
}

double f1_micro(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                std::size_t num_types) {
  check_lengths(predicted.size(), truth.size());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < num_types; ++k)
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const bool p = predicted[i] == k, t = truth[i] == k;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
  if (tp == 0) return 0.0;
  const double precision = double(tp) / double(tp + fp), recall = double(tp) / double(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth) {
  check_lengths(predicted.size(), truth.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == truth[i];
  return double(hit) / double(predicted.size());
}

double rmse_last_event(const data::Dataset& ds, const model::ModelParams& params, const model::ModelConfig& cfg,
                       std::uint64_t noise_seed) {
  std::vector<double> p, t;
  for (const auto& x : predict_last_events(ds, params, cfg, noise_seed)) {
    p.push_back(x.predicted_gap);
    t.push_back(x.true_gap);
  }
  return rmse(p, t);
}

double f1_micro_last_event(const data::Dataset& ds, const model::ModelParams& params,
                           const model::ModelConfig& cfg, std::uint64_t noise_seed) {
  std::vector<std::size_t> p, t;
  for (const auto& x : predict_last_events(ds, params, cfg, noise_seed)) {
    p.push_back(x.predicted_type);
    t.push_back(x.true_type);
  }
  return f1_micro(p, t, cfg.num_types);
}

std::vector<double> per_type_mean_gaps(const data::Dataset& train) {
  std::vector<double> sum(train.num_types, 0.0);
  std::vector<std::size_t> count(train.num_types, 0);
  double total = 0.0;
  std::size_t total_count = 0;
  for (const auto& seq : train.sequences)
    for (std::size_t j = 1; j < seq.size(); ++j) {
      const double g = seq.events[j].time - seq.events[j - 1].time;
      sum.at(seq.events[j - 1].type) += g;
      ++count[seq.events[j - 1].type];
      total += g;
      ++total_count;
    }
  if (total_count == 0) throw Error("sequence_too_short", "sequence too short: no gaps in the training set");
  std::vector<double> mean(train.num_types);
  for (std::size_t k = 0; k < mean.size(); ++k)
    mean[k] = count[k] > 0 ? sum[k] / double(count[k]) : total / double(total_count);
  return mean;
}

double constant_baseline_rmse(const data::Dataset& ds, const std::vector<double>& mean_gaps) {
  std::vector<double> p, t;
  for (const auto& seq : ds.sequences) {
    const std::size_t L = seq.size();
    if (L < 2) throw Error("sequence_too_short", "sequence too short: need at least two events");
    p.push_back(mean_gaps.at(seq.events[L - 2].type));
    t.push_back(seq.events[L - 1].time - seq.events[L - 2].time);
  }
  return rmse(p, t);
}

double average_precision(const std::vector<std::pair<double, bool>>& scored) {
  std::size_t positives = 0;
  for (const auto& s : scored) positives += s.second;
  if (positives == 0) throw Error("no_positive_labels", "average precision needs at least one positive label");
  auto sorted = scored;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    for (; j < sorted.size() && sorted[j].first == sorted[i].first; ++j) tp += sorted[j].second;
    seen = j;
    const double recall = double(tp) / double(positives);
    ap += (recall - prev_recall) * double(tp) / double(seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::vector<double> make_grid(double start, double stop, double step) {
  if (!(step > 0.0) || !(stop >= start)) throw Error("invalid_grid", "grid needs step > 0 and stop >= start");
  std::vector<double> g;
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) g.push_back(start + double(i) * step);
  return g;
}

std::vector<double> default_grid() { return make_grid(0.0, 8.0, 0.05); }

std::vector<double> learned_kernel(const model::ModelParams& params, const model::ModelConfig& cfg,
                                   std::size_t source, std::size_t target, const std::vector<double>& grid) {
  const auto theta = model::kernel_params(source, target, params);
  std::vector<double> out;
  out.reserve(grid.size());
  for (double t : grid) out.push_back(model::gated_kernel(t, theta, cfg));
  return out;
}

namespace {

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw Error("invalid_grid", "empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i]) || grid[i] < 0.0) throw Error("invalid_grid", "grid points must be finite and >= 0");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw Error("invalid_grid", "grid must be strictly ascending");
  }
}

std::vector<double> truth_kernel(const sim::HawkesSpec& truth, std::size_t u, std::size_t v,
                                 const std::vector<double>& grid) {
  std::vector<double> out;
  for (double t : grid) out.push_back(sim::kernel_value(truth.kernels[u][v], t));
  return out;
}

}  // namespace

PairRecovery compare_curves(const std::vector<double>& learned, const std::vector<double>& truth,
                            const std::vector<double>& grid) {
  if (learned.size() != grid.size() || truth.size() != grid.size())
    throw Error("length_mismatch", "curve and grid lengths differ");
  check_grid(grid);
  const std::size_t ti = argmax_first(truth), li = argmax_first(learned);
  if (!(truth[ti] > 0.0)) throw Error("degenerate_truth", "true kernel is zero on the whole grid");
  PairRecovery r;
  r.truth_peak = grid[ti];
  r.learned_peak = grid[li];
  r.learned_is_zero = !(learned[li] > 0.0);
  if (r.learned_is_zero) {
    r.linf = std::numeric_limits<double>::quiet_NaN();
  } else {
    for (std::size_t i = 0; i < grid.size(); ++i)
      r.linf = std::max(r.linf, std::abs(learned[i] / learned[li] - truth[i] / truth[ti]));
  }
  return r;
}

std::vector<PairRecovery> kernel_recovery(const model::ModelParams& params, const model::ModelConfig& cfg,
                                          const sim::HawkesSpec& truth, const std::vector<double>& grid) {
  if (truth.background.size() != cfg.num_types)
    throw Error("type_count_mismatch", "truth spec and model differ in type count");
  check_grid(grid);
  std::vector<PairRecovery> out;
  for (std::size_t u = 0; u < cfg.num_types; ++u)
    for (std::size_t v = 0; v < cfg.num_types; ++v) {
      const auto tr = truth_kernel(truth, u, v, grid);
      const auto le = learned_kernel(params, cfg, u, v, grid);
      PairRecovery r = compare_curves(le, tr, grid);
      r.source = u;
      r.target = v;
      out.push_back(r);
    }
  return out;
}

std::vector<KernelGrid> export_kernel_grids(const model::ModelParams& params, const model::ModelConfig& cfg,
                                            std::vector<std::pair<std::size_t, std::size_t>> pairs,
                                            const std::vector<double>& grid, const sim::HawkesSpec* truth) {
  check_grid(grid);
  if (truth && truth->background.size() != cfg.num_types)
    throw Error("type_count_mismatch", "truth spec and model differ in type count");
  if (pairs.empty())
    for (std::size_t u = 0; u < cfg.num_types; ++u)
      for (std::size_t v = 0; v < cfg.num_types; ++v) pairs.emplace_back(u, v);
  std::vector<KernelGrid> out;
  for (const auto& [u, v] : pairs) {
    if (u >= cfg.num_types || v >= cfg.num_types) throw Error("type_out_of_range", "type index out of range");
    KernelGrid g{u, v, grid, learned_kernel(params, cfg, u, v, grid), std::nullopt};
    if (truth) g.truth = truth_kernel(*truth, u, v, grid);
    out.push_back(std::move(g));
  }
  return out;
}

std::string kernel_grid_csv(const KernelGrid& grid) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << (grid.truth ? "time,learned,truth\n" : "time,learned\n");
  for (std::size_t i = 0; i < grid.time.size(); ++i) {
    out << grid.time[i] << ',' << grid.learned[i];
    if (grid.truth) out << ',' << (*grid.truth)[i];
    out << '\n';
  }
  return out.str();
}

KernelGrid parse_kernel_grid_csv(const std::string& text, std::size_t source, std::size_t target) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("invalid_csv", "missing header");
  KernelGrid g;
  g.source = source;
  g.target = target;
  bool with_truth;
  if (line == "time,learned")
    with_truth = false;
  else if (line == "time,learned,truth")
    with_truth = true;
  else
    throw Error("invalid_csv", "unexpected header: " + line);
  if (with_truth) g.truth.emplace();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        cells.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error("invalid_csv", "bad number on line " + std::to_string(lineno));
      }
    }
    if (cells.size() != (with_truth ? 3u : 2u))
      throw Error("invalid_csv", "wrong column count on line " + std::to_string(lineno));
    g.time.push_back(cells[0]);
    g.learned.push_back(cells[1]);
    if (with_truth) g.truth->push_back(cells[2]);
  }
  return g;
}

std::string metrics_to_json(const MetricsReport& report) {
  using Json = nlohmann::ordered_json;
  auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
  Json doc{{"num_sequences", report.num_sequences},
           {"rmse", num(report.rmse)},
           {"f1_micro", num(report.f1_micro)},
           {"baseline_rmse", num(report.baseline_rmse)}};
  if (report.aps) doc["aps"] = num(*report.aps);
  Json rec = Json::array();
  for (const auto& r : report.recovery)
    rec.push_back({{"source", r.source},
                   {"target", r.target},
                   {"linf", num(r.linf)},
                   {"learned_peak", r.learned_peak},
                   {"truth_peak", r.truth_peak},
                   {"learned_is_zero", r.learned_is_zero}});
  doc["kernel_recovery"] = rec;
  return doc.dump(2) + "\n";
}

}  // namespace sghp::eval
