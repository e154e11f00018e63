// Copyright 2026 The pprt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pprt/catalog.hpp"
#include "pprt/common.hpp"

/// Deterministic scenario runner with a plaintext oracle and privacy
/// hygiene instrumentation.
namespace pprt::simnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Mode { kInProcess, kWire };

struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::uint32_t num_users = 100;
  std::uint32_t num_retargeters = 3;
  std::uint32_t num_advertisers = 10;
  std::uint32_t products_per_advertiser = 100;
  std::uint32_t visits_per_user_day = 20;
  std::uint32_t ad_requests_per_user_day = 20;
  std::uint32_t days = 1;
  std::uint32_t num_publishers = 20;
  Mode mode = Mode::kInProcess;

  // World generation.
  double ctr_min = 0.005;
  double ctr_max = 0.05;
  std::int64_t cpc_min_micros = 100'000;
  std::int64_t cpc_max_micros = 2'000'000;
  double factor_min = 0.5;
  double factor_max = 2.0;
  /// Share of products declaring a (age, gender) coefficient table.
  double coefficient_rate = 0.2;
  /// Share of visits the user marks as sensitive.
  double sensitive_rate = 0.02;
  /// Share of each retargeter's products whose CPC changes at midday.
  double cpc_update_rate = 0.1;
  /// Publisher domains with a non-unit quality multiplier per retargeter.
  std::uint32_t quality_domains = 5;
  /// Click on an impression with probability CTR.
  bool clicks = true;
  /// Extra replayed clicks issued by one bot client on its first ad.
  std::uint32_t fraud_clicks = 0;

  // Module knobs.
  std::size_t store_cap = 1000;
  std::size_t top_m = 3;
  std::uint32_t freq_cap = 10;
  TimeMs jitter_max_ms = 2 * kSecondMs;
  std::size_t batch_min = 5;
  std::int64_t bucket_width = 1;
  std::uint32_t rate_limit_per_day = 100;
  bool randomize_ties = false;
  double alpha = 0.8;
  std::int64_t retargeter_reserve_micros = 0;
  std::int64_t exchange_reserve_micros = 0;
  TimeMs report_ttl_ms = kDayMs;

  /// Throws ConfigError.
  void validate() const;
  static ScenarioConfig from_json(std::string_view text);
  std::string to_json() const;
};

/// 100 users, 3 retargeters, 10 advertisers x 100 products, 20 visits and
/// 20 ad requests per user-day, 1 day, coarsening off.
ScenarioConfig desk_config();

struct SizeStats {
  std::uint64_t count = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t max_bytes = 0;
  void add(std::uint64_t bytes);
  double mean() const { return count == 0 ? 0.0 : static_cast<double>(total_bytes) / count; }
};

struct HygieneReport {
  /// Product ids or titles readable in exchange state or relayed bytes.
  std::uint64_t exchange_taint = 0;
  /// Retargeter events combining a client address with product data.
  std::uint64_t retargeter_coobservation = 0;
  /// Ad requests with extra fields or a repeated rid / sealed key / payload.
  std::uint64_t stable_identifier = 0;
  /// Client fetches addressed to a retargeter instead of the exchange.
  std::uint64_t topology = 0;
  std::uint64_t checks = 0;
  std::vector<std::string> samples;

  std::uint64_t violations() const {
    return exchange_taint + retargeter_coobservation + stable_identifier + topology;
  }
};

struct FraudReport {
  std::uint64_t suspect_reports = 0;
  std::uint64_t traced_reports = 0;
  std::uint64_t distinct_addresses = 0;
  std::string top_address;
  double top_address_share = 0.0;
  bool bot_identified = false;
};

struct RunMetrics {
  std::uint64_t ad_requests = 0;
  std::uint64_t empty_ad_requests = 0;
  std::uint64_t auctions = 0;
  std::uint64_t no_bid_auctions = 0;
  std::map<std::string, std::uint64_t> wins;
  std::map<std::string, double> win_rates;
  double mean_clearing_price_micros = 0.0;

  std::uint64_t oracle_compared = 0;
  std::uint64_t oracle_matches = 0;
  double oracle_agreement = 0.0;
  /// Winner revenue against the floating-point expected-revenue formula.
  double max_revenue_rel_error = 0.0;

  std::uint64_t visits = 0;
  std::uint64_t ranking_requests = 0;
  std::uint64_t ranking_denied = 0;
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;
  /// Largest impression count of one product for one user on one day.
  std::uint32_t max_impressions_per_product_user_day = 0;
  /// Products that reached the cap on some day and were shown again later.
  std::uint64_t capped_then_reshown = 0;

  SizeStats profile_bytes;
  SizeStats ad_request_bytes;
  SizeStats bid_request_bytes;
  SizeStats ranking_request_bytes;
  std::uint64_t proxied_bytes = 0;

  HygieneReport hygiene;
  FraudReport fraud;

  /// Wall time; excluded from equality comparisons.
  double wall_seconds = 0.0;

  /// Deterministic content (no wall time).
  std::string to_json(bool include_timing = true) const;
  std::string to_csv() const;
};

RunMetrics run_scenario(const ScenarioConfig& cfg);

// Plaintext oracle.

/// Fixed-point log term, computed with the C library only.
std::int64_t oracle_log_term(double x);

struct OracleProduct {
  std::string id_p;
  std::string id_r;
  double ctr = 0.0;
  std::int64_t cpc_micros = 0;
  /// Per attribute, per value multiplier.
  std::vector<std::vector<double>> factors;
  struct Coefficient {
    std::uint32_t attr_i = 0;
    std::uint32_t attr_j = 0;
    std::vector<std::vector<double>> table;
  };
  std::vector<Coefficient> coefficients;
};

/// One stored product as the client holds it.
struct OracleStoredProduct {
  const OracleProduct* product = nullptr;
  catalog::UserProfile u;
  /// PIS of the profile version the client last recorded.
  std::int64_t recorded_pis_micros = 0;
  /// Score at the last successful ranking; unset while unranked.
  std::optional<std::int64_t> ranked_score;
};

struct OracleBid {
  std::string id_r;
  std::string id_p;
  std::int64_t revenue_micros = 0;
  std::int64_t price_micros = 0;
  /// Floating-point expected revenue of the chosen product.
  double float_revenue = 0.0;
};

struct OracleAuction {
  /// Products placed in the ad request, per retargeter, in rank order.
  std::map<std::string, std::vector<std::string>> offered;
  std::vector<OracleBid> bids;  // one per bidding retargeter
  std::optional<std::string> winner;
  std::optional<std::string> winning_product;
  std::int64_t clearing_price_micros = 0;
  double winner_float_revenue = 0.0;
  std::int64_t winner_revenue_micros = 0;
};

struct OracleMarket {
  double alpha = 0.8;
  std::int64_t retargeter_reserve_micros = 0;
  std::int64_t exchange_reserve_micros = 0;
  std::int64_t bucket_width = 1;
  std::size_t top_m = 3;
  /// id_R -> (domain -> multiplier)
  std::map<std::string, std::map<std::string, double>> page_quality;
  /// Current PIS per product.
  std::map<std::string, std::int64_t> current_pis_micros;
};

/// Fixed-point log score of a stored product.
std::int64_t oracle_score(const OracleStoredProduct& s);
/// Floating-point expected revenue for a stored product at current PIS.
double oracle_float_revenue(const OracleStoredProduct& s, std::int64_t current_pis_micros,
                            double quality);
/// Nearest multiple of width, half-up.
std::int64_t oracle_coarsen(std::int64_t v, std::int64_t width);
/// Descending coarsened score, ascending id_P.
std::vector<std::string> oracle_rank(const std::vector<OracleStoredProduct>& stored,
                                     std::int64_t width);
/// Eligible stored products (already filtered by the caller) grouped by
/// retargeter; returns the expected auction outcome.
OracleAuction run_oracle(const std::vector<OracleStoredProduct>& eligible,
                         std::string_view page_url, const OracleMarket& market);

// Benchmarks and message sizes.

struct BenchResult {
  std::string name;
  std::uint64_t ops = 0;
  double seconds = 0.0;
  double ops_per_second() const { return seconds > 0 ? ops / seconds : 0.0; }
};

/// Runs each operation for roughly min_seconds.
std::vector<BenchResult> bench(double min_seconds = 0.5);

struct MessageSizes {
  std::uint64_t profile_bytes = 0;
  std::uint64_t profile_with_coefficients_bytes = 0;
  std::uint64_t ad_request_bytes = 0;       // 3 retargeters x 3 products
  std::uint64_t ranking_request_bytes = 0;  // 20 products, sealed
  std::string to_json() const;
};

MessageSizes measure_messages(std::uint64_t seed = 1);

}  // namespace pprt::simnet
