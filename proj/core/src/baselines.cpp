#include "stden/baselines.hpp"

#include <cmath>

#include "stden/error.hpp"

namespace stden {

HistoricalAverage::HistoricalAverage(const FlowSeries& series, std::size_t rows_end)
    : edges_(series.edges()) {
  if (rows_end == 0 || rows_end > series.steps()) {
    throw ValidationError("historical average: empty or out-of-range training rows");
  }
  const double per_day = 1440.0 / series.interval_minutes;
  steps_per_day_ = static_cast<std::size_t>(std::llround(per_day));
  if (steps_per_day_ == 0) throw ValidationError("historical average: interval longer than a day");

  bucket_mean_.assign(steps_per_day_ * edges_, 0.0);
  bucket_seen_.assign(steps_per_day_, false);
  global_mean_.assign(edges_, 0.0);
  std::vector<std::size_t> counts(steps_per_day_, 0);
  for (std::size_t r = 0; r < rows_end; ++r) {
    const std::size_t b = r % steps_per_day_;
    ++counts[b];
    for (std::size_t e = 0; e < edges_; ++e) {
      bucket_mean_[b * edges_ + e] += series.values.at(r, e);
      global_mean_[e] += series.values.at(r, e);
    }
  }
  for (std::size_t b = 0; b < steps_per_day_; ++b) {
    if (counts[b] == 0) continue;
    bucket_seen_[b] = true;
    for (std::size_t e = 0; e < edges_; ++e) {
      bucket_mean_[b * edges_ + e] /= static_cast<double>(counts[b]);
    }
  }
  for (double& g : global_mean_) g /= static_cast<double>(rows_end);
}

HistoricalAverage::HistoricalAverage(const Dataset& data)
    : HistoricalAverage(data.series(), data.train_rows_end()) {}

double HistoricalAverage::predict(std::size_t row, std::size_t edge) const {
  const std::size_t b = row % steps_per_day_;
  return bucket_seen_[b] ? bucket_mean_[b * edges_ + edge] : global_mean_[edge];
}

Tensor HistoricalAverage::forecast(const Dataset& data, std::span<const std::size_t> starts) {
  const std::size_t T = data.history_len();
  const std::size_t H = data.horizon();
  Tensor out({starts.size(), H * edges_});
  for (std::size_t b = 0; b < starts.size(); ++b) {
    for (std::size_t k = 0; k < H; ++k) {
      for (std::size_t e = 0; e < edges_; ++e) out.at(b, k * edges_ + e) = predict(starts[b] + T + k, e);
    }
  }
  return out;
}

Tensor HistoricalAverage::forecast_rows(const Dataset&, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), edges_});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t e = 0; e < edges_; ++e) out.at(r, e) = predict(rows[r], e);
  }
  return out;
}

ModelForecaster::ModelForecaster(const Model& model, const RoadNetwork& net, SolverConfig solver)
    : model_(&model), net_(&net), solver_(solver) {}

Tensor ModelForecaster::forecast(const Dataset& data, std::span<const std::size_t> starts) {
  if (data.edge_count() != model_->edge_count()) {
    throw ValidationError("forecast: dataset has " + std::to_string(data.edge_count()) +
                          " edges, model expects " + std::to_string(model_->edge_count()));
  }
  const Dataset::Batch batch = data.make_batch(starts);
  long nfe = 0;
  Tensor out = model_->predict(*net_, batch.history, batch.size, solver_, &nfe);
  nfe_total_ += nfe;
  ++calls_;
  const Normalizer& norm = data.normalizer();
  for (double& v : out.data()) v = norm.denormalize(v);
  return out;
}

double ModelForecaster::mean_nfe() const {
  return calls_ == 0 ? 0.0 : static_cast<double>(nfe_total_) / static_cast<double>(calls_);
}

ModelConfig incp_variant(ModelConfig config) {
  config.kind = ModelKind::incp;
  return config;
}

ModelConfig unkp_variant(ModelConfig config) {
  config.kind = ModelKind::unkp;
  return config;
}

ModelConfig gru_direct_variant(ModelConfig config) {
  config.kind = ModelKind::gru_direct;
  return config;
}

}  // namespace stden
