#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stden/data.hpp"
#include "stden/graph.hpp"
#include "stden/metrics.hpp"
#include "stden/model.hpp"

namespace stden {

/// Per-edge time-of-day mean of the training rows. Buckets are
/// row % steps_per_day with steps_per_day = 1440 / interval; an empty bucket
/// falls back to the edge's global training mean.
class HistoricalAverage : public Forecaster {
 public:
  /// Fits on rows [0, rows_end) of `series`.
  HistoricalAverage(const FlowSeries& series, std::size_t rows_end);
  /// Fits on the rows touched by the dataset's training windows.
  explicit HistoricalAverage(const Dataset& data);

  std::size_t steps_per_day() const noexcept { return steps_per_day_; }
  double predict(std::size_t row, std::size_t edge) const;

  Tensor forecast(const Dataset& data, std::span<const std::size_t> starts) override;
  bool horizon_invariant() const override { return true; }
  Tensor forecast_rows(const Dataset& data, std::span<const std::size_t> rows) override;

 private:
  std::size_t edges_;
  std::size_t steps_per_day_;
  std::vector<double> bucket_mean_;  // steps_per_day x edges
  std::vector<bool> bucket_seen_;
  std::vector<double> global_mean_;
};

/// Deterministic forecasts of a trained model (stden, incp, unkp or gru),
/// batched and denormalized with the dataset's statistics.
class ModelForecaster : public Forecaster {
 public:
  ModelForecaster(const Model& model, const RoadNetwork& net, SolverConfig solver);

  Tensor forecast(const Dataset& data, std::span<const std::size_t> starts) override;

  /// Mean dynamics evaluations per forecast batch since construction.
  double mean_nfe() const;

 private:
  const Model* model_;
  const RoadNetwork* net_;
  SolverConfig solver_;
  long nfe_total_ = 0;
  long calls_ = 0;
};

/// Ablation configs: same encoder and decoder with the dynamics swapped.
ModelConfig incp_variant(ModelConfig config);
ModelConfig unkp_variant(ModelConfig config);
ModelConfig gru_direct_variant(ModelConfig config);

}  // namespace stden
