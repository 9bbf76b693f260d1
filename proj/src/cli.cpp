#include "sghp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sghp/data_model.hpp"
#include "sghp/error.hpp"
#include "sghp/evaluation.hpp"
#include "sghp/hawkes_sim.hpp"
#include "sghp/random.hpp"
#include "sghp/sgk_model.hpp"
#include "sghp/training.hpp"

namespace sghp::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

// Seed paths under the master seed.
constexpr std::uint64_t kSplitStream = 0x5917;
constexpr std::uint64_t kEvalStream = 0xe7a1;

Json default_config() {
  return Json{
      {"seed", 0},
      {"simulation",
       {{"spec", "appendix-a"},
        {"power_law_support", sim::kDefaultPowerLawSupport},
        {"num_sequences", 1000},
        {"horizon", 44.0},
        {"time_unit", "unit"}}},
      {"model",
       {{"embed_dim", 16},
        {"noise_samples", 10},
        {"use_squared_distance", true},
        {"include_self_term", true},
        {"per_sample_l1", false}}},
      {"training",
       {{"batch_size", 32},
        {"max_epochs", 200},
        {"learning_rate", 1e-3},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"epsilon", 1e-8},
        {"patience", 10},
        {"clip_norm", 5.0},
        {"split", {{"train", 0.8}, {"val", 0.1}, {"test", 0.1}}}}},
      {"evaluation",
       {{"grid", {{"start", 0.0}, {"stop", 8.0}, {"step", 0.05}}}, {"pairs", Json::array()}, {"truth", nullptr}}},
      {"io",
       {{"dataset", nullptr}, {"train_dataset", nullptr}, {"checkpoint", nullptr}, {"out", "."}}},
  };
}

// Overlay `src` on `dst`; keys must already exist in `dst` (catches typos),
// except that null defaults accept any value.
void merge(Json& dst, const Json& src, const std::string& where) {
  if (!src.is_object()) throw Error("invalid_config", where + " must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!dst.contains(key)) throw Error("invalid_config", "unknown config key " + path);
    Json& slot = dst[key];
    if (slot.is_object() && value.is_object())
      merge(slot, value, path);
    else if (!slot.is_null() && !value.is_null() && slot.type() != value.type() &&
             !(slot.is_number() && value.is_number()))
      throw Error("invalid_config", "wrong value type for " + path);
    else
      slot = value;
  }
}

template <class T>
T get(const Json& cfg, const std::string& section, const std::string& key) {
  try {
    return cfg.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("invalid_config", "bad value for " + section + "." + key);
  }
}

std::string need_path(const Json& cfg, const std::string& key, const std::string& flag) {
  const Json& v = cfg.at("io").at(key);
  if (!v.is_string() || v.get<std::string>().empty())
    throw Error("missing_input", "no " + key + " given (use " + flag + " or io." + key + ")");
  return v.get<std::string>();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

sim::HawkesSpec load_truth(const std::string& alias_or_path, double support) {
  if (alias_or_path == "appendix-a") return sim::appendix_a_spec(support);
  return sim::load_spec(alias_or_path);
}

// Files written by the current run, removed again if it fails.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  void prepare() {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) {
    prepare();
    const auto p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write " + p.string());
    written_.push_back(p);
    out << text;
    if (!out) throw Error("io_error", "write failed for " + p.string());
  }

  void rollback() noexcept {
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool created_dir_ = false;
};

struct Context {
  Json cfg;
  Outputs& outputs;
  std::ostream& out;
  std::ostream& err;
};

void echo_config(Context& ctx, const std::string& command) {
  Json doc = ctx.cfg;
  doc["command"] = command;
  ctx.outputs.write("effective_config_" + command + ".json", doc.dump(2) + "\n");
}

train::TrainConfig train_config(const Json& cfg) {
  train::TrainConfig t;
  t.batch_size = get<std::size_t>(cfg, "training", "batch_size");
  t.max_epochs = get<std::size_t>(cfg, "training", "max_epochs");
  t.adam.learning_rate = get<double>(cfg, "training", "learning_rate");
  t.adam.beta1 = get<double>(cfg, "training", "beta1");
  t.adam.beta2 = get<double>(cfg, "training", "beta2");
  t.adam.epsilon = get<double>(cfg, "training", "epsilon");
  t.patience = get<std::size_t>(cfg, "training", "patience");
  t.clip_norm = get<double>(cfg, "training", "clip_norm");
  t.seed = cfg.at("seed").get<std::uint64_t>();
  t.embed_dim = get<std::size_t>(cfg, "model", "embed_dim");
  t.noise_samples = get<std::size_t>(cfg, "model", "noise_samples");
  t.use_squared_distance = get<bool>(cfg, "model", "use_squared_distance");
  t.include_self_term = get<bool>(cfg, "model", "include_self_term");
  t.per_sample_l1 = get<bool>(cfg, "model", "per_sample_l1");
  return t;
}

std::vector<double> eval_grid(const Json& cfg) {
  const Json& g = cfg.at("evaluation").at("grid");
  try {
    return eval::make_grid(g.at("start").get<double>(), g.at("stop").get<double>(), g.at("step").get<double>());
  } catch (const nlohmann::json::exception&) {
    throw Error("invalid_config", "bad value for evaluation.grid");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> eval_pairs(const Json& cfg) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  try {
    for (const auto& p : cfg.at("evaluation").at("pairs")) pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  } catch (const nlohmann::json::exception&) {
    throw Error("invalid_config", "evaluation.pairs must be a list of [source, target] pairs");
  }
  return pairs;
}

std::optional<sim::HawkesSpec> eval_truth(const Json& cfg) {
  const Json& t = cfg.at("evaluation").at("truth");
  if (t.is_null()) return std::nullopt;
  if (!t.is_string()) throw Error("invalid_config", "evaluation.truth must be a string");
  return load_truth(t.get<std::string>(), get<double>(cfg, "simulation", "power_law_support"));
}

// ------------------------------------------------------------------ commands

void cmd_simulate(Context& ctx) {
  const auto spec = load_truth(get<std::string>(ctx.cfg, "simulation", "spec"),
                               get<double>(ctx.cfg, "simulation", "power_law_support"));
  sim::SimulationOptions opt;
  opt.num_sequences = get<std::size_t>(ctx.cfg, "simulation", "num_sequences");
  opt.horizon = get<double>(ctx.cfg, "simulation", "horizon");
  opt.time_unit = get<std::string>(ctx.cfg, "simulation", "time_unit");
  opt.seed = ctx.cfg.at("seed").get<std::uint64_t>();
  const auto ds = sim::simulate_dataset(spec, opt);
  echo_config(ctx, "simulate");
  ctx.outputs.write("dataset.jsonl", data::write_dataset_string(ds));
  ctx.outputs.write("spec.json", sim::spec_to_json(spec));
  std::size_t events = 0;
  for (const auto& s : ds.sequences) events += s.size();
  ctx.out << "simulated " << ds.size() << " sequences, " << events << " events -> "
          << ctx.outputs.path("dataset.jsonl") << "\n";
}

void cmd_train(Context& ctx) {
  const auto ds = data::read_dataset_file(need_path(ctx.cfg, "dataset", "--data"));
  const auto tcfg = train_config(ctx.cfg);
  tcfg.check();
  const auto& sp = ctx.cfg.at("training").at("split");
  data::SplitRatios ratios{sp.at("train").get<double>(), sp.at("val").get<double>(), sp.at("test").get<double>()};
  auto [tr, va, te] = data::split_dataset(ds, ratios, derive_seed(tcfg.seed, {kSplitStream}));

  auto result = train::train(tr, va, tcfg, [&](const train::EpochRecord& e) {
    ctx.err << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << "\n";
  });
  echo_config(ctx, "train");
  ctx.outputs.write("checkpoint.json", model::save_checkpoint(result.config, result.params));
  ctx.outputs.write("train_report.json", train::report_to_json(result.report));
  ctx.outputs.write("train_losses.csv", train::loss_csv(result.report));
  ctx.outputs.write("train_split.jsonl", data::write_dataset_string(tr));
  ctx.outputs.write("val_split.jsonl", data::write_dataset_string(va));
  ctx.outputs.write("test_split.jsonl", data::write_dataset_string(te));
  ctx.out << "trained " << result.report.epochs.size() << " epochs, best epoch " << result.report.best_epoch
          << ", " << result.report.parameter_count << " parameters -> " << ctx.outputs.path("checkpoint.json")
          << "\n";
}

void cmd_evaluate(Context& ctx) {
  const auto ck = model::read_checkpoint_file(need_path(ctx.cfg, "checkpoint", "--checkpoint"));
  const auto ds = data::read_dataset_file(need_path(ctx.cfg, "dataset", "--data"));
  const std::uint64_t noise_seed = derive_seed(ctx.cfg.at("seed").get<std::uint64_t>(), {kEvalStream});

  eval::MetricsReport rep;
  const auto preds = eval::predict_last_events(ds, ck.params, ck.config, noise_seed);
  std::vector<double> pg, tg;
  std::vector<std::size_t> pt, tt;
  for (const auto& p : preds) {
    pg.push_back(p.predicted_gap);
    tg.push_back(p.true_gap);
    pt.push_back(p.predicted_type);
    tt.push_back(p.true_type);
  }
  rep.num_sequences = preds.size();
  rep.rmse = eval::rmse(pg, tg);
  rep.f1_micro = eval::f1_micro(pt, tt, ck.config.num_types);
  rep.baseline_rmse = std::numeric_limits<double>::quiet_NaN();
  const Json& train_path = ctx.cfg.at("io").at("train_dataset");
  if (train_path.is_string()) {
    const auto tr = data::read_dataset_file(train_path.get<std::string>());
    rep.baseline_rmse = eval::constant_baseline_rmse(ds, eval::per_type_mean_gaps(tr));
  }
  if (ck.config.num_types == 2) {
    // one-vs-rest score for type 1
    std::vector<std::pair<double, bool>> scored;
    for (const auto& p : preds) scored.emplace_back(p.type_probs[1], p.true_type == 1);
    bool any = false;
    for (const auto& s : scored) any = any || s.second;
    if (any) rep.aps = eval::average_precision(scored);
  }
  if (const auto truth = eval_truth(ctx.cfg)) rep.recovery = eval::kernel_recovery(ck.params, ck.config, *truth, eval_grid(ctx.cfg));

  echo_config(ctx, "evaluate");
  ctx.outputs.write("metrics.json", eval::metrics_to_json(rep));
  ctx.out << "rmse " << rep.rmse << " f1_micro " << rep.f1_micro;
  if (std::isfinite(rep.baseline_rmse)) ctx.out << " baseline_rmse " << rep.baseline_rmse;
  ctx.out << "\n";
  for (const auto& r : rep.recovery)
    ctx.out << "kernel " << r.source << "->" << r.target << " linf " << r.linf << " learned_peak " << r.learned_peak
            << " truth_peak " << r.truth_peak << "\n";
}

void cmd_export(Context& ctx) {
  const auto ck = model::read_checkpoint_file(need_path(ctx.cfg, "checkpoint", "--checkpoint"));
  const auto truth = eval_truth(ctx.cfg);
  const auto grids = eval::export_kernel_grids(ck.params, ck.config, eval_pairs(ctx.cfg), eval_grid(ctx.cfg),
                                               truth ? &*truth : nullptr);
  echo_config(ctx, "export-kernels");
  for (const auto& g : grids) {
    const std::string name = "kernel_" + std::to_string(g.source) + "_" + std::to_string(g.target) + ".csv";
    ctx.outputs.write(name, eval::kernel_grid_csv(g));
    ctx.out << ctx.outputs.path(name) << "\n";
  }
}

int cmd_validate(Context& ctx) {
  const std::string path = need_path(ctx.cfg, "dataset", "--data");
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open " + path);
  const auto ds = data::parse_dataset_unchecked(in);
  const auto rep = data::validate(ds);
  if (rep.header_problem) ctx.out << "header: " << *rep.header_problem << "\n";
  for (const auto& s : rep.sequences)
    if (!s.ok) ctx.out << "sequence " << s.index << " event " << s.event << ": " << s.code << " (" << s.reason << ")\n";
  ctx.out << ds.size() << " sequences, " << rep.failures() << " invalid\n";
  if (!rep.ok())
    throw Error("invalid_dataset", std::to_string(rep.failures()) + " of " + std::to_string(ds.size()) +
                                       " sequences failed validation");
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gated-kernel Hawkes model: simulate, train, evaluate"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config document")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out_dir, "output directory");
  };

  // Flag overrides, applied only when given: (json section, key) -> value.
  Json overrides = Json::object();
  auto over = [&](CLI::App* sub, const std::string& flag, const std::string& section, const std::string& key,
                  const std::string& help) {
    sub->add_option_function<std::string>(
        flag,
        [&overrides, section, key](const std::string& v) {
          Json value;
          try {
            value = Json::parse(v);
            if (value.is_object() || value.is_array()) value = v;
          } catch (const nlohmann::json::exception&) {
            value = v;
          }
          overrides[section][key] = value;
        },
        help);
  };

  auto* simulate = app.add_subcommand("simulate", "simulate a dataset from a Hawkes spec");
  add_common(simulate);
  over(simulate, "--spec", "simulation", "spec", "spec file or the alias appendix-a");
  over(simulate, "--n", "simulation", "num_sequences", "number of sequences");
  over(simulate, "--horizon", "simulation", "horizon", "observation window length");

  auto* trn = app.add_subcommand("train", "split a dataset and train a model");
  add_common(trn);
  over(trn, "--data", "io", "dataset", "dataset file");
  over(trn, "--epochs", "training", "max_epochs", "maximum epochs");
  over(trn, "--batch-size", "training", "batch_size", "sequences per batch");
  over(trn, "--lr", "training", "learning_rate", "Adam learning rate");
  over(trn, "--patience", "training", "patience", "early-stopping patience");
  over(trn, "--embed-dim", "model", "embed_dim", "embedding dimension D");
  over(trn, "--samples", "model", "noise_samples", "noise samples M");

  auto* evl = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  add_common(evl);
  over(evl, "--checkpoint", "io", "checkpoint", "checkpoint file");
  over(evl, "--data", "io", "dataset", "dataset to score");
  over(evl, "--train-data", "io", "train_dataset", "training split for the constant baseline");
  over(evl, "--truth", "evaluation", "truth", "true spec (file or appendix-a) for kernel recovery");

  auto* exp = app.add_subcommand("export-kernels", "write learned kernels on a grid as CSV");
  add_common(exp);
  over(exp, "--checkpoint", "io", "checkpoint", "checkpoint file");
  over(exp, "--truth", "evaluation", "truth", "true spec (file or appendix-a)");

  auto* val = app.add_subcommand("validate", "check a dataset file");
  add_common(val);
  over(val, "--data", "io", "dataset", "dataset file");

  std::vector<const char*> argv{"sghp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage_error: " << e.what() << "\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  Json cfg = default_config();
  std::unique_ptr<Outputs> outputs;
  try {
    if (!config_path.empty()) {
      Json doc;
      try {
        doc = Json::parse(read_text(config_path));
      } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_config", std::string("malformed config: ") + e.what());
      }
      merge(cfg, doc, "");
    }
    merge(cfg, overrides, "");
    if (sub->count("--seed") > 0) cfg["seed"] = seed;
    if (sub->count("--out") > 0) cfg["io"]["out"] = out_dir;
    if (!cfg.at("seed").is_number_unsigned() && !(cfg.at("seed").is_number_integer() && cfg.at("seed").get<long long>() >= 0))
      throw Error("invalid_config", "seed must be a non-negative integer");

    outputs = std::make_unique<Outputs>(get<std::string>(cfg, "io", "out"));
    Context ctx{cfg, *outputs, out, err};
    if (command == "simulate")
      cmd_simulate(ctx);
    else if (command == "train")
      cmd_train(ctx);
    else if (command == "evaluate")
      cmd_evaluate(ctx);
    else if (command == "export-kernels")
      cmd_export(ctx);
    else
      cmd_validate(ctx);
    return 0;
  } catch (const Error& e) {
    if (outputs) outputs->rollback();
    err << e.code() << ": " << e.what() << "\n";
  } catch (const diff::DomainError& e) {
    if (outputs) outputs->rollback();
    err << "domain_error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    if (outputs) outputs->rollback();
    err << "internal_error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace sghp::cli
