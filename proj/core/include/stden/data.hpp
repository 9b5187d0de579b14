#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "stden/tensor.hpp"

namespace stden {

/// Flow-sequence: one row per time step, one column per edge id.
struct FlowSeries {
  double interval_minutes = 5.0;
  Tensor values;  // steps x edges

  std::size_t steps() const { return values.rows(); }
  std::size_t edges() const { return values.cols(); }
};

/// Reads "t,<p>0,<p>1,..." CSV (p = column prefix) into a steps x columns
/// tensor. When `expected_columns` is given the header must match it.
Tensor load_series_csv(std::istream& in, char column_prefix,
                       std::optional<std::size_t> expected_columns = std::nullopt);
/// Writes with 17 significant digits so a reload is value-identical.
void save_series_csv(std::ostream& out, const Tensor& values, char column_prefix);

FlowSeries load_flow_csv(std::istream& in, std::size_t edge_count);
void save_flow_csv(std::ostream& out, const FlowSeries& series);

/// Scalar z-score statistics fit on the training rows.
struct Normalizer {
  double mean = 0.0;
  double std = 1.0;

  static Normalizer fit(std::span<const double> values);
  double normalize(double x) const { return (x - mean) / std; }
  double denormalize(double x) const { return x * std + mean; }
};

enum class Split { train, val, test };
std::string_view split_name(Split split);
Split parse_split(std::string_view text);

/// Number of stride-1 (history, horizon) windows a series of `steps` rows holds.
std::size_t count_windows(std::size_t steps, std::size_t history_len, std::size_t horizon);

/// Windowed flow data with a causal 7:1:2 split.
///
/// Windows are identified by the row index of their first history step.
/// Window s covers rows [s, s + T) as history and [s + T, s + T + H) as target.
class Dataset {
 public:
  struct Batch {
    Tensor history;  // (T * B) x |E|, row t * B + b, normalized
    Tensor target;   // B x (H * |E|), column h * |E| + e, normalized
    std::size_t size = 0;
  };

  Dataset(FlowSeries series, std::size_t history_len, std::size_t horizon, std::size_t gap);

  const FlowSeries& series() const noexcept { return series_; }
  std::size_t history_len() const noexcept { return history_len_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t edge_count() const noexcept { return series_.edges(); }
  std::size_t gap() const noexcept { return gap_; }
  const Normalizer& normalizer() const noexcept { return normalizer_; }
  /// Replaces the fitted statistics, e.g. with those stored in a checkpoint.
  void set_normalizer(const Normalizer& normalizer);

  std::span<const std::size_t> windows(Split split) const;
  /// Rows [0, train_rows_end) are the only rows any training window touches.
  std::size_t train_rows_end() const noexcept { return train_rows_end_; }

  Batch make_batch(std::span<const std::size_t> starts) const;
  /// Normalized T x |E| history block of one window, rows in time order.
  Tensor history(std::size_t start) const;

 private:
  FlowSeries series_;
  std::size_t history_len_;
  std::size_t horizon_;
  std::size_t gap_;
  std::vector<std::size_t> train_, val_, test_;
  std::size_t train_rows_end_ = 0;
  Normalizer normalizer_;
};

/// Builds stride-1 windows and splits them 7:1:2 by time. `gap` windows are
/// dropped at each split boundary; the default T + H - 1 guarantees that no
/// validation or test row overlaps a training row.
Dataset window_and_split(FlowSeries series, std::size_t history_len = 12,
                         std::size_t horizon = 12,
                         std::optional<std::size_t> gap = std::nullopt);

}  // namespace stden
