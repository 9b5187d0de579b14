#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stden/baselines.hpp"
#include "stden/synth.hpp"
#include "stden/train.hpp"

namespace stden::app {

/// Comma-separated reals; `what` names the source in errors.
std::vector<double> parse_numbers(const std::string& text, const std::string& what);

/// Flat key=value settings for one command. Keys are fixed; anything else
/// is a ConfigError.
class RunConfig {
 public:
  RunConfig();

  /// Merges a config file; '#' starts a comment, blank lines are skipped.
  void merge_file(const std::filesystem::path& path);
  void merge_text(std::istream& in, const std::string& origin);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  /// Value of a key that must be non-empty.
  const std::string& require(const std::string& key) const;

  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed() const;
  std::vector<double> number_list(const std::string& key) const;
  std::optional<std::size_t> optional_count(const std::string& key) const;

  SynthConfig synth() const;
  ModelConfig model() const;
  TrainConfig training() const;
  SolverConfig solver() const;

  /// Every key, sorted, one "key=value" per line.
  void write(std::ostream& out) const;

  static const std::vector<std::string>& keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace stden::app
