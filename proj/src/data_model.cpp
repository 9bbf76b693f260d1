#include "sghp/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sghp/error.hpp"
#include "sghp/random.hpp"

namespace sghp::data {

namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

SequenceCheck failure(std::size_t event, std::string code, std::string reason) {
  SequenceCheck c;
  c.ok = false;
  c.event = event;
  c.code = std::move(code);
  c.reason = std::move(reason);
  return c;
}

double read_time(const Json& ev, std::size_t line) {
  const auto it = ev.find("t");
  if (it == ev.end()) throw Error("parse_error", "line " + std::to_string(line) + ": event missing \"t\"");
  // null is how non-finite values come back from JSON; validation flags it.
  if (it->is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!it->is_number()) throw Error("parse_error", "line " + std::to_string(line) + ": \"t\" is not a number");
  return it->get<double>();
}

Event read_event(const Json& ev, std::size_t line) {
  if (!ev.is_object()) throw Error("parse_error", "line " + std::to_string(line) + ": event is not an object");
  Event e;
  const auto k = ev.find("k");
  if (k == ev.end() || !k->is_number_integer())
    throw Error("parse_error", "line " + std::to_string(line) + ": event missing integer \"k\"");
  const auto kv = k->get<std::int64_t>();
  if (kv < 0) throw Error("type_out_of_range", "line " + std::to_string(line) + ": type index out of range");
  e.type = static_cast<std::size_t>(kv);
  e.time = read_time(ev, line);
  if (const auto z = ev.find("z"); z != ev.end()) {
    if (!z->is_array()) throw Error("parse_error", "line " + std::to_string(line) + ": \"z\" is not an array");
    for (const auto& v : *z) {
      if (v.is_null()) {
        e.covariates.push_back(std::numeric_limits<double>::quiet_NaN());
      } else if (v.is_number()) {
        e.covariates.push_back(v.get<double>());
      } else {
        throw Error("parse_error", "line " + std::to_string(line) + ": covariate is not a number");
      }
    }
  }
  return e;
}

Dataset parse_impl(std::istream& in, std::vector<std::size_t>* record_lines);

}  // namespace

bool ValidationReport::ok() const { return !header_problem && failures() == 0; }

std::size_t ValidationReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(sequences.begin(), sequences.end(), [](const auto& c) { return !c.ok; }));
}

std::optional<SequenceCheck> check_sequence(const EventSequence& seq, std::size_t num_types,
                                            std::size_t covariate_dim) {
  if (seq.events.empty()) return failure(0, "empty_sequence", "empty sequence");
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    const Event& e = seq.events[i];
    if (e.type >= num_types) return failure(i, "type_out_of_range", "type index out of range");
    if (!std::isfinite(e.time)) return failure(i, "non_finite_timestamp", "non-finite timestamp");
    if (e.time < 0.0) return failure(i, "negative_timestamp", "negative timestamp");
    if (e.covariates.size() != covariate_dim)
      return failure(i, "covariate_mismatch", "inconsistent covariate length");
    for (double z : e.covariates)
      if (!std::isfinite(z)) return failure(i, "non_finite_covariate", "non-finite covariate");
    if (i > 0) {
      const double prev = seq.events[i - 1].time;
      if (e.time < prev) return failure(i, "non_monotone_timestamps", "non-monotone timestamps");
      if (e.time == prev) return failure(i, "tied_timestamps", "tied timestamps");
    }
  }
  return std::nullopt;
}

ValidationReport validate(const Dataset& ds) {
  ValidationReport report;
  if (ds.num_types == 0) report.header_problem = "num_types must be positive";
  report.sequences.reserve(ds.sequences.size());
  for (std::size_t n = 0; n < ds.sequences.size(); ++n) {
    SequenceCheck c = check_sequence(ds.sequences[n], ds.num_types, ds.covariate_dim)
                          .value_or(SequenceCheck{});
    c.index = n;
    report.sequences.push_back(std::move(c));
  }
  return report;
}

Dataset parse_dataset_unchecked(std::istream& in) { return parse_impl(in, nullptr); }

namespace {

Dataset parse_impl(std::istream& in, std::vector<std::size_t>* record_lines) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json doc;
    try {
      doc = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error("parse_error", "line " + std::to_string(line_no) + ": malformed record");
    }
    if (!doc.is_object()) throw Error("parse_error", "line " + std::to_string(line_no) + ": record is not an object");
    if (!have_header) {
      try {
        const auto k = doc.at("num_types").get<std::int64_t>();
        const auto c = doc.value("covariate_dim", std::int64_t{0});
        if (k <= 0 || c < 0) throw Error("parse_error", "line 1: invalid header dimensions");
        ds.num_types = static_cast<std::size_t>(k);
        ds.covariate_dim = static_cast<std::size_t>(c);
        ds.time_unit = doc.value("time_unit", std::string("unit"));
      } catch (const Json::exception&) {
        throw Error("parse_error", "line " + std::to_string(line_no) + ": malformed header");
      }
      have_header = true;
      continue;
    }
    const auto events = doc.find("events");
    if (events == doc.end() || !events->is_array())
      throw Error("parse_error", "line " + std::to_string(line_no) + ": record missing \"events\" array");
    EventSequence seq;
    seq.events.reserve(events->size());
    for (const auto& ev : *events) seq.events.push_back(read_event(ev, line_no));
    ds.sequences.push_back(std::move(seq));
    if (record_lines) record_lines->push_back(line_no);
  }
  if (!have_header) throw Error("parse_error", "missing header line");
  return ds;
}

}  // namespace

Dataset parse_dataset(std::istream& in) {
  std::vector<std::size_t> lines;
  Dataset ds = parse_impl(in, &lines);
  for (std::size_t n = 0; n < ds.sequences.size(); ++n) {
    if (auto bad = check_sequence(ds.sequences[n], ds.num_types, ds.covariate_dim)) {
      throw Error(bad->code, "line " + std::to_string(lines[n]) + ", event " + std::to_string(bad->event) +
                                 ": " + bad->reason);
    }
  }
  return ds;
}

Dataset parse_dataset_string(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open dataset file " + path);
  return parse_dataset(in);
}

void write_dataset(const Dataset& ds, std::ostream& out) {
  OrderedJson header;
  header["num_types"] = ds.num_types;
  header["covariate_dim"] = ds.covariate_dim;
  header["time_unit"] = ds.time_unit;
  out << header.dump() << '\n';
  for (const auto& seq : ds.sequences) {
    OrderedJson events = OrderedJson::array();
    for (const auto& e : seq.events) {
      OrderedJson ev;
      ev["k"] = e.type;
      ev["t"] = e.time;
      if (ds.covariate_dim > 0) ev["z"] = e.covariates;
      events.push_back(std::move(ev));
    }
    OrderedJson rec;
    rec["events"] = std::move(events);
    out << rec.dump() << '\n';
  }
}

std::string write_dataset_string(const Dataset& ds) {
  std::ostringstream out;
  write_dataset(ds, out);
  return out.str();
}

void write_dataset_file(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write dataset file " + path);
  write_dataset(ds, out);
  if (!out) throw Error("io_error", "write failed for " + path);
}

std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& ds, SplitRatios ratios,
                                                    std::uint64_t seed) {
  if (ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0)
    throw Error("invalid_ratios", "split ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw Error("invalid_ratios", "split ratios must sum to 1");
  if (ds.sequences.empty()) throw Error("empty_dataset", "cannot split an empty dataset");

  const std::size_t n = ds.sequences.size();
  // The small slack keeps exact products such as 100 * 0.1 from flooring down.
  const auto part = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  const std::size_t n_val = part(ratios.val);
  const std::size_t n_test = part(ratios.test);
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x5b1175ULL}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  auto make = [&](std::size_t begin, std::size_t end) {
    Dataset out;
    out.num_types = ds.num_types;
    out.covariate_dim = ds.covariate_dim;
    out.time_unit = ds.time_unit;
    for (std::size_t i = begin; i < end; ++i) out.sequences.push_back(ds.sequences[order[i]]);
    return out;
  };
  return {make(0, n_train), make(n_train, n_train + n_val), make(n_train + n_val, n)};
}

}  // namespace sghp::data
