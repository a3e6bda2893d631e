#include "breathid/stationarity.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace breathid::stationarity {

int schwert_lag(int n) {
  if (n < 1) throw std::invalid_argument("schwert_lag: n must be positive");
  return static_cast<int>(std::floor(12.0 * std::pow(n / 100.0, 0.25)));
}

namespace {

// MacKinnon (2010) response-surface coefficients, constant, no trend.
double crit(double b0, double b1, double b2, double b3, int t) {
  const double x = 1.0 / t;
  return b0 + b1 * x + b2 * x * x + b3 * x * x * x;
}

}  // namespace

AdfResult adf_test(const std::vector<double>& series, int lag_order) {
  const int n = static_cast<int>(series.size());
  int lag = lag_order;
  if (lag == kAutoLag) {
    if (n < 1) throw std::invalid_argument("adf_test: empty series");
    lag = schwert_lag(n);
  }
  if (lag < 0) throw std::invalid_argument("adf_test: negative lag order");

  const int rows = n - 1 - lag;
  const int cols = 2 + lag;  // intercept, level, lagged differences
  if (rows <= cols)
    throw std::invalid_argument("adf_test: series too short for lag order " + std::to_string(lag));

  std::vector<double> diff(n - 1);
  for (int i = 0; i + 1 < n; ++i) diff[i] = series[i + 1] - series[i];

  Eigen::MatrixXd x(rows, cols);
  Eigen::VectorXd dy(rows);
  for (int r = 0; r < rows; ++r) {
    const int t = lag + 1 + r;  // index of y_t whose difference is the response
    dy(r) = diff[t - 1];
    x(r, 0) = 1.0;
    x(r, 1) = series[t - 1];
    for (int j = 1; j <= lag; ++j) x(r, 1 + j) = diff[t - 1 - j];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < cols)
    throw std::runtime_error("adf_test: regressor matrix is rank deficient");
  const Eigen::VectorXd beta = qr.solve(dy);
  const Eigen::VectorXd resid = dy - x * beta;
  const double rss = resid.squaredNorm();

  AdfResult result;
  result.lag_order = lag;
  result.n_effective = rows;
  result.crit_1pct = crit(-3.43035, -6.5393, -16.786, -79.433, rows);
  result.crit_5pct = crit(-2.86154, -2.8903, -4.234, -40.040, rows);
  result.crit_10pct = crit(-2.56677, -1.5384, -2.809, 0.0, rows);

  // A numerically perfect fit leaves no residual variance to form the
  // t-ratio; report 0 (far from any rejection region).
  if (rss <= 1e-24 * std::max(1.0, dy.squaredNorm())) {
    result.test_statistic = 0.0;
    result.reject_at_p01 = false;
    return result;
  }

  const double s2 = rss / (rows - cols);
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
  const double se = std::sqrt(s2 * xtx_inv(1, 1));
  result.test_statistic = beta(1) / se;
  result.reject_at_p01 = result.test_statistic < result.crit_1pct;
  return result;
}

StationarityReport stationarity_report(const std::vector<BreathInstance>& instances, int channel,
                                       int lag_order) {
  if (channel < 0) throw std::invalid_argument("negative channel index");
  StationarityReport report;
  for (const auto& inst : instances) {
    StationarityRow row;
    row.instance_id = inst.id;
    if (channel >= static_cast<int>(inst.channels.size()))
      throw std::invalid_argument("channel index out of range for " + inst.id);
    try {
      row.result = adf_test(inst.channels[channel], lag_order);
      ++report.total;
      if (row.result.reject_at_p01) ++report.rejected_at_p01;
    } catch (const std::exception&) {
      row.skipped = true;
      ++report.skipped;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace breathid::stationarity
