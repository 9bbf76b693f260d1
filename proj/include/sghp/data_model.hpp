#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

namespace sghp::data {

struct Event {
  std::size_t type = 0;
  double time = 0.0;
  std::vector<double> covariates;  // empty when the dataset has no covariates

  bool operator==(const Event&) const = default;
};

struct EventSequence {
  std::vector<Event> events;

  std::size_t size() const noexcept { return events.size(); }
  bool operator==(const EventSequence&) const = default;
};

/// A collection of sequences sharing a type count and covariate width.
/// Construction does not validate; use parse_dataset or validate.
struct Dataset {
  std::size_t num_types = 0;
  std::size_t covariate_dim = 0;
  std::string time_unit = "unit";
  std::vector<EventSequence> sequences;

  std::size_t size() const noexcept { return sequences.size(); }
  bool operator==(const Dataset&) const = default;
};

struct SequenceCheck {
  std::size_t index = 0;
  bool ok = true;
  std::string code;    // machine-readable, e.g. "tied_timestamps"
  std::string reason;  // human-readable, e.g. "tied timestamps"
  std::size_t event = 0;
};

struct ValidationReport {
  std::vector<SequenceCheck> sequences;
  std::optional<std::string> header_problem;

  bool ok() const;
  std::size_t failures() const;
};

/// First violated invariant of one sequence, or nullopt when it is valid.
std::optional<SequenceCheck> check_sequence(const EventSequence& seq, std::size_t num_types,
                                            std::size_t covariate_dim);

ValidationReport validate(const Dataset& ds);

/// Parses the line-delimited format without checking sequence invariants.
/// Syntax errors still throw with the offending line number.
Dataset parse_dataset_unchecked(std::istream& in);

/// Parses and validates; throws sghp::Error naming the line of the first
/// violation.
Dataset parse_dataset(std::istream& in);
Dataset parse_dataset_string(const std::string& text);
Dataset read_dataset_file(const std::string& path);

void write_dataset(const Dataset& ds, std::ostream& out);
std::string write_dataset_string(const Dataset& ds);
void write_dataset_file(const Dataset& ds, const std::string& path);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Partitions whole sequences. val and test receive floor(n * ratio); the
/// remainder goes to train.
std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& ds, SplitRatios ratios,
                                                    std::uint64_t seed);

/// Inter-arrival gap before event `j` (j >= 1).
inline double gap(const EventSequence& seq, std::size_t j) {
  return seq.events[j].time - seq.events[j - 1].time;
}

}  // namespace sghp::data
