#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stden/data.hpp"
#include "stden/tensor.hpp"

namespace stden {

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape;  // percent; absent when every |y| <= 1e-3
  std::size_t count = 0;
};

/// MAE, RMSE and MAPE over paired entries. MAPE skips entries with |y| <= 1e-3.
ErrorMetrics compute_metrics(std::span<const double> predicted, std::span<const double> actual);

/// Anything that maps windows of a Dataset to denormalized forecasts.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  /// B x (H * |E|) raw-unit forecasts for the windows starting at `starts`.
  virtual Tensor forecast(const Dataset& data, std::span<const std::size_t> starts) = 0;

  /// True when the value predicted for a timestamp does not depend on the
  /// history window (or the lead time). Such forecasters are scored once
  /// per distinct target timestamp.
  virtual bool horizon_invariant() const { return false; }
  /// rows x |E| forecasts for absolute series rows; horizon-invariant only.
  virtual Tensor forecast_rows(const Dataset& data, std::span<const std::size_t> rows);
};

struct MetricsRecord {
  std::string model;
  std::optional<std::uint64_t> seed;  // absent for a mean over seeds
  Split split = Split::test;
  std::size_t horizon = 0;  // lead time in steps
  double minutes = 0.0;
  ErrorMetrics metrics;
};

/// Metrics at each lead time in `horizons` (1-based steps). Horizon k uses
/// prediction step k only.
std::vector<MetricsRecord> evaluate(Forecaster& forecaster, const Dataset& data, Split split,
                                    std::span<const std::size_t> horizons,
                                    std::string_view model_name,
                                    std::optional<std::uint64_t> seed = std::nullopt,
                                    std::size_t batch_size = 64);

/// Mean of MAE, RMSE and MAPE per (model, split, horizon) over the
/// per-seed records given.
std::vector<MetricsRecord> mean_over_seeds(std::span<const MetricsRecord> records);

/// One line of space-separated key=value pairs.
std::string format_record(const MetricsRecord& record);
void write_records(std::ostream& out, std::span<const MetricsRecord> records);

/// Mean absolute error of every prediction step over a split, raw units.
double split_mae(Forecaster& forecaster, const Dataset& data, Split split,
                 std::size_t batch_size = 64);

}  // namespace stden
