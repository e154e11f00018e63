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
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pprt/catalog.hpp"
#include "pprt/common.hpp"
#include "pprt/hcrypt.hpp"
#include "pprt/messages.hpp"
#include "pprt/ranking_service.hpp"

namespace pprt::client {

using catalog::ProductProfileEnc;
using catalog::UserProfile;
using hcrypt::Ciphertext;

class ClientError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ClientConfig {
  std::size_t store_cap = 1000;
  std::size_t top_m = 3;
  std::uint32_t freq_cap = 10;
  TimeMs jitter_max_ms = 2 * kSecondMs;
  /// New products per retargeter that trigger a ranking round.
  std::size_t batch_min = 5;
  /// Pending products are ranked at least this often.
  TimeMs ranking_interval_ms = kHourMs;
  std::uint64_t seed = 0;
};

struct LocalProductRecord {
  ProductProfileEnc profile;
  /// Profile used for score_ct (its last three coordinates are per product).
  UserProfile u;
  Ciphertext score_ct;
  std::optional<Ciphertext> bid_score_ct;
  std::optional<std::uint32_t> rank;
  std::uint32_t impressions_today = 0;
  TimeMs first_seen = 0;
  TimeMs last_seen = 0;
  bool sensitive = false;
};

/// Enc(log PIS) + sum of the selected factor ciphertexts (+ declared coefficients),
/// decryptable under k_PIS + sum_i k_{i,U[i]} (+ coefficient keys).
/// Throws ClientError on a shape mismatch.
Ciphertext compute_encrypted_score(const ProductProfileEnc& profile, const UserProfile& u);

enum class RankingStatus { kRanked, kDenied, kFailed, kNothingToRank };

struct RankingResult {
  RankingStatus status = RankingStatus::kNothingToRank;
  std::size_t ranked = 0;
  std::vector<std::string> dropped;
  TimeMs retry_after_ms = 0;
  /// Jittered time at which the request was sent.
  TimeMs sent_at = 0;
};

/// Delivers a sealed ranking request to the service at ranking_url and
/// returns the sealed response, or nullopt on transport failure.
using RankingSender = std::function<std::optional<std::string>(
    const std::string& ranking_url, const std::string& sealed_body, TimeMs send_at)>;

struct OutboundAdRequest {
  msg::AdRequest request;
  /// Randomly delayed send time.
  TimeMs send_at = 0;
  /// Products offered per retargeter, in payload order.
  std::map<std::string, std::vector<std::string>> offered;
};

struct AdView {
  std::string id_r;
  msg::AdMarkup markup;
  hcrypt::Bytes asset;
};

/// The user-side agent. Single writer: callers serialize mutations.
class ClientAgent {
 public:
  ClientAgent(catalog::AttributeSchema schema, ClientConfig config);

  const ClientConfig& config() const { return config_; }
  const catalog::AttributeSchema& schema() const { return schema_; }

  /// Static directory of retargeter public keys (published out of band).
  void register_retargeter(const std::string& id_r, const hcrypt::PublicKey& key);
  /// Attested public key of the ranking co-processor behind ranking_url.
  void register_ranking_service(const std::string& ranking_url, const hcrypt::PublicKey& key);

  /// Inserts or refreshes a visited product and recomputes its score.
  /// Throws ClientError when u or the profile shape is invalid.
  void record_product(const ProductProfileEnc& profile, const UserProfile& u, TimeMs now,
                      bool sensitive = false);

  /// Throws ClientError for an unknown id.
  void set_sensitive(const std::string& id_p, bool flag);

  bool ranking_due(const std::string& id_r, TimeMs now) const;
  /// Retargeters with records that were visited since their last ranking.
  std::vector<std::string> retargeters_with_pending(TimeMs now) const;
  std::vector<std::string> retargeters() const;

  RankingResult request_ranking(const std::string& id_r, TimeMs now, const RankingSender& send);

  /// Top-m eligible products per registered retargeter, sealed for each
  /// retargeter under a fresh session key.
  OutboundAdRequest build_ad_request(const std::string& page_url, TimeMs now);

  /// Opens a delivered creative: decrypts the markup and, via fetch_asset,
  /// the proxied asset. Returns nullopt if the delivery is empty or does not
  /// authenticate. The session for delivery.rid is consumed.
  std::optional<AdView> open_delivery(
      const msg::AdDelivery& delivery,
      const std::function<std::optional<hcrypt::Bytes>(const std::string& url)>& fetch_asset);
  void forget_request(const msg::RequestId& rid);

  /// Unknown ids are ignored.
  void register_ad_impression(const std::string& id_p);
  void reset_daily_counters();

  const LocalProductRecord* find(const std::string& id_p) const;
  std::size_t size() const { return records_.size(); }
  const std::map<std::string, LocalProductRecord>& records() const { return records_; }
  std::size_t open_sessions() const { return sessions_.size(); }

 private:
  void evict_one();
  TimeMs jitter();

  catalog::AttributeSchema schema_;
  ClientConfig config_;
  std::mt19937_64 rng_;

  std::map<std::string, LocalProductRecord> records_;
  std::map<std::string, hcrypt::PublicKey> retargeter_keys_;
  std::map<std::string, hcrypt::PublicKey> ranking_keys_;

  struct RankingState {
    std::size_t pending = 0;
    TimeMs last_ranked = 0;
    TimeMs not_before = 0;
  };
  std::map<std::string, RankingState> ranking_state_;
  std::map<msg::RequestId, std::map<std::string, hcrypt::SessionKey>> sessions_;
};

}  // namespace pprt::client
