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
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pprt/catalog.hpp"
#include "pprt/common.hpp"
#include "pprt/hcrypt.hpp"
#include "pprt/messages.hpp"

namespace pprt::retargeter {

using catalog::FixedLog;
using catalog::ProductProfileClear;
using catalog::ProductProfileEnc;

class FeedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RetargeterConfig {
  /// Share of expected revenue offered as the bid.
  double alpha = 0.8;
  std::int64_t reserve_micros = 0;
  std::size_t ad_asset_bytes = 10 * 1024;
  std::string ad_host;  // defaults to "<id_R>.ads.example"
  TimeMs creative_ttl_ms = kDayMs;
  /// Clicks on one creative beyond this count are suspicious.
  std::uint32_t max_clicks_per_creative = 1;
};

/// Immutable feed version seen by concurrent bids.
struct FeedSnapshot {
  std::uint64_t version = 0;
  std::map<std::string, ProductProfileClear> products;
  /// publisher domain -> quality multiplier in micros
  std::map<std::string, std::int64_t> page_quality;

  std::int64_t quality_for(std::string_view page_url) const;
};

struct CandidateScore {
  std::string id_p;
  FixedLog conveyed;   // decrypted coarsened score
  FixedLog adjusted;   // after PIS drift and page quality
};

struct BidDecision {
  std::vector<CandidateScore> candidates;
  std::optional<std::size_t> winner;  // index into candidates
  std::int64_t expected_revenue_micros = 0;
  std::int64_t bid_price_micros = 0;
};

struct ProductTally {
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;
  std::int64_t billed_micros = 0;
  double ctr() const { return impressions == 0 ? 0.0 : static_cast<double>(clicks) / impressions; }
};

struct RetargeterStats {
  std::uint64_t bid_requests = 0;
  std::uint64_t bids = 0;
  std::uint64_t no_bids = 0;
  std::uint64_t rejected_requests = 0;
  std::uint64_t wins = 0;
  std::int64_t spend_micros = 0;
  std::uint64_t ads_served = 0;
  std::uint64_t reports = 0;
  std::uint64_t rejected_reports = 0;
};

class Retargeter {
 public:
  Retargeter(std::string id_r, catalog::AttributeSchema schema, hcrypt::MasterSecret master,
             hcrypt::KeyPair keys, RetargeterConfig config = {});

  const std::string& id_r() const { return id_r_; }
  const hcrypt::PublicKey& public_key() const { return keys_.public_key; }
  const hcrypt::MasterSecret& master() const { return master_; }
  const catalog::AttributeSchema& schema() const { return schema_; }
  const RetargeterConfig& config() const { return config_; }

  // Feed maintenance. Each change publishes a new snapshot.
  /// Throws FeedError on an id collision or a product of another retargeter.
  void add_product(ProductProfileClear product);
  void update_cpc(const std::string& id_p, std::int64_t cpc_micros);
  void update_ctr(const std::string& id_p, double ctr);
  void set_page_quality(const std::string& domain, std::int64_t multiplier_micros);
  std::shared_ptr<const FeedSnapshot> snapshot() const;

  /// Encrypted profiles for every product; only changed products are
  /// re-encrypted.
  std::vector<ProductProfileEnc> publish_feed();
  std::optional<ProductProfileEnc> published_profile(const std::string& id_p) const;

  /// Score selection on already-opened payload items; pure given the
  /// snapshot.
  BidDecision decide(const std::vector<msg::PayloadItem>& items, std::string_view page_url,
                     const FeedSnapshot& feed) const;

  /// Opens the session key and payload, selects and prices a product and
  /// returns a creative sealed under the session key. nullopt = no bid.
  std::optional<msg::BidResponse> handle_bid_request(const msg::BidRequest& req, TimeMs now);

  /// Encrypted asset for a creative issued earlier.
  std::optional<hcrypt::Bytes> serve_ad(const std::string& creative_id, TimeMs now);

  /// Second-price win notice.
  void notify_win(const msg::RequestId& rid, std::int64_t clearing_price_micros);

  /// Validates the forwarded report schema (rejects any user field) and
  /// updates tallies. Returns false when rejected or unknown.
  bool receive_report(std::string_view forwarded_json);
  bool receive_report(const msg::ForwardedReport& report);

  /// Click report ids on creatives clicked more than allowed.
  std::vector<std::string> suspected_click_reports() const;

  std::map<std::string, ProductTally> tallies() const;
  RetargeterStats stats() const;

 private:
  struct IssuedCreative {
    std::string id_p;
    msg::RequestId rid{};
    hcrypt::SessionKey session_key;
    TimeMs expires_at = 0;
    std::int64_t bid_price_micros = 0;
    std::vector<std::string> click_reports;
  };

  void mutate_feed(const std::function<void(FeedSnapshot&)>& fn);
  void purge_expired(TimeMs now);

  std::string id_r_;
  catalog::AttributeSchema schema_;
  hcrypt::MasterSecret master_;
  hcrypt::KeyPair keys_;
  RetargeterConfig config_;

  mutable std::mutex mu_;
  std::shared_ptr<const FeedSnapshot> feed_;
  std::map<std::string, ProductProfileEnc> published_;
  std::map<std::string, std::uint64_t> published_version_;
  std::map<std::string, std::uint64_t> product_version_;
  std::map<std::string, IssuedCreative> creatives_;
  std::map<msg::RequestId, std::string> creative_by_rid_;
  std::map<std::string, ProductTally> tallies_;
  RetargeterStats stats_;
};

struct FeedConfig {
  std::string id_r;
  std::string ranking_url;
  RetargeterConfig config;
  std::map<std::string, std::int64_t> page_quality;
  std::vector<catalog::ProductSpec> products;
};

/// Parses the feed config file:
///   {"id_R", "ranking_url", "alpha"?, "reserve_micros"?, "page_quality"?: {domain: x},
///    "products": [{"id_P", "ctr", "cpc_micros", "factors"?: {attr: [x...]},
///                  "coefficients"?: [{"i": attr, "j": attr, "table": [[x...]]}]}]}
/// Factors, coefficients and page quality are decimal multipliers.
FeedConfig parse_feed_config(std::string_view text, const catalog::AttributeSchema& schema);

}  // namespace pprt::retargeter
