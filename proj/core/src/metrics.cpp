#include "stden/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "stden/error.hpp"

namespace stden {
namespace {

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Forecasts a split batch by batch and hands each batch to `visit`.
template <class Visit>
void for_each_batch(Forecaster& f, const Dataset& data, std::span<const std::size_t> windows,
                    std::size_t batch_size, Visit visit) {
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const auto starts = windows.subspan(begin, std::min(batch_size, windows.size() - begin));
    visit(starts, f.forecast(data, starts));
  }
}

}  // namespace

ErrorMetrics compute_metrics(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw ShapeError("metrics: length mismatch");
  if (predicted.empty()) throw ValidationError("metrics: no entries");
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  std::size_t pct_count = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double err = predicted[i] - actual[i];
    abs_sum += std::abs(err);
    sq_sum += err * err;
    if (std::abs(actual[i]) > 1e-3) {
      pct_sum += std::abs(err) / std::abs(actual[i]);
      ++pct_count;
    }
  }
  const auto n = static_cast<double>(predicted.size());
  ErrorMetrics m;
  m.count = predicted.size();
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (pct_count > 0) m.mape = 100.0 * pct_sum / static_cast<double>(pct_count);
  return m;
}

Tensor Forecaster::forecast_rows(const Dataset&, std::span<const std::size_t>) {
  throw Error("forecast_rows: forecaster is not horizon-invariant");
}

std::vector<MetricsRecord> evaluate(Forecaster& forecaster, const Dataset& data, Split split,
                                    std::span<const std::size_t> horizons,
                                    std::string_view model_name,
                                    std::optional<std::uint64_t> seed, std::size_t batch_size) {
  const auto windows = data.windows(split);
  if (windows.empty()) throw ValidationError("evaluate: split is empty");
  const std::size_t m = data.edge_count();
  const std::size_t T = data.history_len();
  const std::size_t H = data.horizon();
  for (std::size_t h : horizons) {
    if (h < 1 || h > H) throw ConfigError("evaluate: horizon " + std::to_string(h) + " outside 1.." + std::to_string(H));
  }
  const Tensor& raw = data.series().values;
  std::vector<MetricsRecord> records;
  const auto make_record = [&](std::size_t h, const ErrorMetrics& metrics) {
    MetricsRecord r;
    r.model = std::string(model_name);
    r.seed = seed;
    r.split = split;
    r.horizon = h;
    r.minutes = static_cast<double>(h) * data.series().interval_minutes;
    r.metrics = metrics;
    records.push_back(std::move(r));
  };

  if (forecaster.horizon_invariant()) {
    std::set<std::size_t> unique;
    for (std::size_t s : windows) {
      for (std::size_t k = 0; k < H; ++k) unique.insert(s + T + k);
    }
    const std::vector<std::size_t> rows(unique.begin(), unique.end());
    const Tensor pred = forecaster.forecast_rows(data, rows);
    std::vector<double> actual;
    actual.reserve(rows.size() * m);
    for (std::size_t r : rows) {
      for (std::size_t e = 0; e < m; ++e) actual.push_back(raw.at(r, e));
    }
    const ErrorMetrics metrics = compute_metrics(pred.data(), actual);
    for (std::size_t h : horizons) make_record(h, metrics);
    return records;
  }

  std::vector<std::vector<double>> pred(horizons.size());
  std::vector<std::vector<double>> actual(horizons.size());
  for_each_batch(forecaster, data, windows, batch_size,
                 [&](std::span<const std::size_t> starts, const Tensor& out) {
                   for (std::size_t b = 0; b < starts.size(); ++b) {
                     for (std::size_t k = 0; k < horizons.size(); ++k) {
                       const std::size_t step = horizons[k] - 1;
                       for (std::size_t e = 0; e < m; ++e) {
                         pred[k].push_back(out.at(b, step * m + e));
                         actual[k].push_back(raw.at(starts[b] + T + step, e));
                       }
                     }
                   }
                 });
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    make_record(horizons[k], compute_metrics(pred[k], actual[k]));
  }
  return records;
}

double split_mae(Forecaster& forecaster, const Dataset& data, Split split, std::size_t batch_size) {
  const auto windows = data.windows(split);
  if (windows.empty()) throw ValidationError("split_mae: split is empty");
  const std::size_t m = data.edge_count();
  const std::size_t T = data.history_len();
  const std::size_t H = data.horizon();
  const Tensor& raw = data.series().values;
  double total = 0.0;
  std::size_t count = 0;
  for_each_batch(forecaster, data, windows, batch_size,
                 [&](std::span<const std::size_t> starts, const Tensor& out) {
                   for (std::size_t b = 0; b < starts.size(); ++b) {
                     for (std::size_t k = 0; k < H; ++k) {
                       for (std::size_t e = 0; e < m; ++e) {
                         total += std::abs(out.at(b, k * m + e) - raw.at(starts[b] + T + k, e));
                       }
                     }
                   }
                   count += starts.size() * H * m;
                 });
  return total / static_cast<double>(count);
}

std::vector<MetricsRecord> mean_over_seeds(std::span<const MetricsRecord> records) {
  using Key = std::tuple<std::string, Split, std::size_t>;
  struct Acc {
    MetricsRecord first;
    double mae = 0.0, rmse = 0.0, mape = 0.0;
    std::size_t n = 0, mape_n = 0;
  };
  std::map<Key, Acc> groups;
  std::vector<Key> order;
  for (const MetricsRecord& r : records) {
    const Key key{r.model, r.split, r.horizon};
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) {
      it->second.first = r;
      order.push_back(key);
    }
    Acc& acc = it->second;
    acc.mae += r.metrics.mae;
    acc.rmse += r.metrics.rmse;
    if (r.metrics.mape) {
      acc.mape += *r.metrics.mape;
      ++acc.mape_n;
    }
    ++acc.n;
  }
  std::vector<MetricsRecord> out;
  for (const Key& key : order) {
    const Acc& acc = groups.at(key);
    MetricsRecord r = acc.first;
    r.seed.reset();
    const auto n = static_cast<double>(acc.n);
    r.metrics.mae = acc.mae / n;
    r.metrics.rmse = acc.rmse / n;
    r.metrics.mape.reset();
    if (acc.mape_n == acc.n) r.metrics.mape = acc.mape / n;
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_record(const MetricsRecord& r) {
  std::string line = "model=" + r.model;
  line += " seed=" + (r.seed ? std::to_string(*r.seed) : std::string("mean"));
  line += " split=" + std::string(split_name(r.split));
  line += " horizon=" + std::to_string(r.horizon);
  line += " minutes=" + real(r.minutes);
  line += " mae=" + real(r.metrics.mae);
  line += " rmse=" + real(r.metrics.rmse);
  line += " mape=" + (r.metrics.mape ? real(*r.metrics.mape) : std::string("NA"));
  line += " count=" + std::to_string(r.metrics.count);
  return line;
}

void write_records(std::ostream& out, std::span<const MetricsRecord> records) {
  for (const MetricsRecord& r : records) out << format_record(r) << '\n';
}

}  // namespace stden
