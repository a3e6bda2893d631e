#pragma once

#include <string>
#include <vector>

#include "breathid/types.hpp"

namespace breathid::stationarity {

struct AdfResult {
  double test_statistic = 0.0;
  int lag_order = 0;
  int n_effective = 0;     // rows in the regression
  bool reject_at_p01 = false;
  double crit_1pct = 0.0;
  double crit_5pct = 0.0;
  double crit_10pct = 0.0;
};

inline constexpr int kAutoLag = -1;  // Schwert rule: floor(12 * (n/100)^(1/4))

int schwert_lag(int n);

// Augmented Dickey-Fuller test, constant-only specification:
// regress dy_t on [1, y_{t-1}, dy_{t-1}, ..., dy_{t-L}] by least squares and
// compare the t-ratio of y_{t-1} with MacKinnon critical values.
AdfResult adf_test(const std::vector<double>& series, int lag_order = kAutoLag);

struct StationarityRow {
  std::string instance_id;
  bool skipped = false;
  AdfResult result;  // valid when !skipped
};

struct StationarityReport {
  int total = 0;             // instances actually tested
  int rejected_at_p01 = 0;
  int skipped = 0;           // too short / degenerate, not counted in total
  std::vector<StationarityRow> rows;
};

StationarityReport stationarity_report(const std::vector<BreathInstance>& instances, int channel,
                                       int lag_order = kAutoLag);

}  // namespace breathid::stationarity
