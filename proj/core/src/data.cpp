#include "stden/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

#include "stden/error.hpp"

namespace stden {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = line.find(',', begin);
    cells.push_back(line.substr(begin, comma == std::string_view::npos ? line.npos : comma - begin));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Tensor load_series_csv(std::istream& in, char column_prefix,
                       std::optional<std::size_t> expected_columns) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("csv: missing header");
  const auto header = split_commas(trim(line));
  if (header.size() < 2 || trim(header[0]) != "t") {
    throw ParseError("csv: header must start with 't' followed by data columns");
  }
  const std::size_t columns = header.size() - 1;
  for (std::size_t c = 0; c < columns; ++c) {
    const std::string want = std::string(1, column_prefix) + std::to_string(c);
    if (trim(header[c + 1]) != want) {
      throw ParseError("csv: header column " + std::to_string(c + 1) + " is '" +
                       std::string(header[c + 1]) + "', expected '" + want + "'");
    }
  }
  if (expected_columns && *expected_columns != columns) {
    throw ValidationError("csv: header has " + std::to_string(columns) +
                          " data columns but the network has " +
                          std::to_string(*expected_columns));
  }

  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim(line);
    if (view.empty()) continue;
    const auto cells = split_commas(view);
    if (cells.size() != columns + 1) {
      throw ParseError("csv row " + std::to_string(line_no) + ": expected " +
                       std::to_string(columns + 1) + " cells, found " +
                       std::to_string(cells.size()));
    }
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto cell = trim(cells[c]);
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() ||
          !std::isfinite(value)) {
        throw ParseError("csv row " + std::to_string(line_no) + ", column " +
                         std::to_string(c) + ": missing or invalid value '" +
                         std::string(cell) + "'");
      }
      data.push_back(value);
    }
    ++rows;
  }
  if (rows == 0) throw ParseError("csv: no data rows");
  return Tensor({rows, columns}, std::move(data));
}

void save_series_csv(std::ostream& out, const Tensor& values, char column_prefix) {
  out << 't';
  for (std::size_t c = 0; c < values.cols(); ++c) out << ',' << column_prefix << c;
  out << '\n';
  for (std::size_t r = 0; r < values.rows(); ++r) {
    out << r;
    for (std::size_t c = 0; c < values.cols(); ++c) out << ',' << format_double(values.at(r, c));
    out << '\n';
  }
}

FlowSeries load_flow_csv(std::istream& in, std::size_t edge_count) {
  FlowSeries series;
  series.values = load_series_csv(in, 'e', edge_count);
  return series;
}

void save_flow_csv(std::ostream& out, const FlowSeries& series) {
  save_series_csv(out, series.values, 'e');
}

Normalizer Normalizer::fit(std::span<const double> values) {
  if (values.empty()) throw ValidationError("normalizer: no training values");
  double total = 0.0;
  for (double v : values) total += v;
  const double mean = total / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double std = std::sqrt(sq / static_cast<double>(values.size()));
  if (!(std > 0.0)) throw ValidationError("normalizer: training data has zero variance");
  return {mean, std};
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

std::size_t count_windows(std::size_t steps, std::size_t history_len, std::size_t horizon) {
  if (steps < history_len + horizon) return 0;
  return steps - history_len - horizon + 1;
}

Dataset::Dataset(FlowSeries series, std::size_t history_len, std::size_t horizon, std::size_t gap)
    : series_(std::move(series)), history_len_(history_len), horizon_(horizon), gap_(gap) {
  if (history_len_ == 0 || horizon_ == 0) throw ValidationError("T and H must be >= 1");
  const std::size_t total = count_windows(series_.steps(), history_len_, horizon_);
  if (total == 0) {
    throw ValidationError("series too short: " + std::to_string(series_.steps()) +
                          " steps < T + H = " + std::to_string(history_len_ + horizon_));
  }
  if (total < 2 * gap_ + 3) {
    throw ValidationError("series too short for a 7:1:2 split with boundary gap " +
                          std::to_string(gap_));
  }
  const std::size_t usable = total - 2 * gap_;
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(usable)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(usable)));
  if (n_train == 0 || n_train + n_val >= usable) {
    throw ValidationError("series too short to populate train and test splits");
  }
  std::size_t s = 0;
  for (; s < n_train; ++s) train_.push_back(s);
  s += gap_;
  for (std::size_t k = 0; k < n_val; ++k, ++s) val_.push_back(s);
  s += gap_;
  for (; s < total; ++s) test_.push_back(s);

  train_rows_end_ = train_.back() + history_len_ + horizon_;
  const std::size_t cols = series_.edges();
  normalizer_ = Normalizer::fit(series_.values.data().subspan(0, train_rows_end_ * cols));
}

void Dataset::set_normalizer(const Normalizer& normalizer) {
  if (!(normalizer.std > 0.0) || !std::isfinite(normalizer.mean)) {
    throw ValidationError("normalizer: std must be positive and mean finite");
  }
  normalizer_ = normalizer;
}

std::span<const std::size_t> Dataset::windows(Split split) const {
  switch (split) {
    case Split::train: return train_;
    case Split::val: return val_;
    case Split::test: return test_;
  }
  return {};
}

Dataset::Batch Dataset::make_batch(std::span<const std::size_t> starts) const {
  const std::size_t b = starts.size();
  const std::size_t m = series_.edges();
  if (b == 0) throw ValidationError("make_batch: empty batch");
  Batch batch{Tensor({history_len_ * b, m}), Tensor({b, horizon_ * m}), b};
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t s = starts[k];
    if (s + history_len_ + horizon_ > series_.steps()) {
      throw ValidationError("make_batch: window " + std::to_string(s) + " out of range");
    }
    for (std::size_t t = 0; t < history_len_; ++t) {
      for (std::size_t e = 0; e < m; ++e) {
        batch.history.at(t * b + k, e) = normalizer_.normalize(series_.values.at(s + t, e));
      }
    }
    for (std::size_t h = 0; h < horizon_; ++h) {
      for (std::size_t e = 0; e < m; ++e) {
        batch.target.at(k, h * m + e) =
            normalizer_.normalize(series_.values.at(s + history_len_ + h, e));
      }
    }
  }
  return batch;
}

Tensor Dataset::history(std::size_t start) const {
  const std::size_t m = series_.edges();
  Tensor out({history_len_, m});
  for (std::size_t t = 0; t < history_len_; ++t) {
    for (std::size_t e = 0; e < m; ++e) {
      out.at(t, e) = normalizer_.normalize(series_.values.at(start + t, e));
    }
  }
  return out;
}

Dataset window_and_split(FlowSeries series, std::size_t history_len, std::size_t horizon,
                         std::optional<std::size_t> gap) {
  const std::size_t g = gap.value_or(history_len + horizon - 1);
  return Dataset(std::move(series), history_len, horizon, g);
}

}  // namespace stden
