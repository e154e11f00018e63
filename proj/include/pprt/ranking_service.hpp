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
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "pprt/catalog.hpp"
#include "pprt/common.hpp"
#include "pprt/hcrypt.hpp"

/// The ranking service that runs inside the retargeter's secure
/// co-processor. It is the only component besides the retargeter that
/// holds the master secret, and the retargeter host only ever sees sealed
/// request/response bytes and aggregate statistics.
namespace pprt::ranking {

using catalog::FixedLog;
using catalog::UserProfile;
using hcrypt::Ciphertext;

struct RankingEntry {
  std::string id_p;
  Ciphertext score;
  /// Coefficient pairs (i, j) the product declares; their keys are part of
  /// the score key.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  /// Per-product profile when it differs from the request-level one (the
  /// conversion/frequency/recency attributes are per product).
  std::optional<UserProfile> u;
  bool operator==(const RankingEntry&) const = default;
};

struct RankingRequest {
  /// Identity of the secure channel endpoint; set by the transport.
  std::string client_channel_id;
  UserProfile u;
  std::vector<RankingEntry> entries;
  bool operator==(const RankingRequest&) const = default;
};

struct RankedEntry {
  std::string id_p;
  /// Coarsened log score under the product's bid key.
  Ciphertext bid_score;
  bool operator==(const RankedEntry&) const = default;
};

struct RankingResponse {
  std::vector<RankedEntry> ranked;
  std::vector<std::string> dropped;
  bool operator==(const RankingResponse&) const = default;
};

struct RankingDenied {
  TimeMs retry_after_ms = 0;
  bool operator==(const RankingDenied&) const = default;
};

using RankOutcome = std::variant<RankingResponse, RankingDenied>;

struct RankingPolicy {
  /// Width of the score buckets in fixed-log units; 1 disables coarsening.
  std::int64_t bucket_width = 50'000;
  std::uint32_t rate_limit_per_day = 100;
  std::uint32_t k_anon = 20;
  bool randomize = false;

  static RankingPolicy from_json(std::string_view text);
  std::string to_json() const;
};

struct RateDecision {
  bool allowed = true;
  TimeMs retry_after_ms = 0;
};

/// Round to the nearest multiple of width (half-up); |result - v| <= width / 2.
FixedLog coarsen(FixedLog v, std::int64_t bucket_width);

/// Largest magnitude a legitimately decrypted score can have.
inline constexpr std::int64_t kMaxScoreMagnitude = std::int64_t{1} << 36;

struct CtrObservation {
  std::string id_p;
  double ctr = 0.0;
};

struct StatsContribution {
  UserProfile u;
  std::vector<CtrObservation> observations;
};

struct StatsCell {
  std::string id_p;
  std::uint32_t attribute = 0;
  std::uint32_t value = 0;
  std::uint32_t contributors = 0;
  double mean_ctr = 0.0;
  bool operator==(const StatsCell&) const = default;
};

struct StatsReport {
  std::vector<StatsCell> cells;
  std::uint32_t suppressed_cells = 0;

  std::string to_json() const;
  static StatsReport from_json(std::string_view text);
};

/// Mean CTR per (product, attribute, value) cell; cells with fewer than
/// k_anon contributors are suppressed.
StatsReport aggregate_statistics(const std::vector<StatsContribution>& batch,
                                 std::uint32_t k_anon);

// Plain JSON codecs for the messages carried inside the secure channel.
std::string serialize(const RankingRequest& req);
RankingRequest parse_ranking_request(std::string_view text);
std::string serialize(const RankOutcome& outcome);
RankOutcome parse_rank_outcome(std::string_view text);
std::string serialize(const StatsContribution& c);
StatsContribution parse_stats_contribution(std::string_view text);

/// Client side of the attested channel: a fresh session key sealed to the
/// co-processor's public key plus the AEAD-encrypted body.
struct SealedChannelMessage {
  hcrypt::SessionKey key;
  std::string wire;
};

SealedChannelMessage seal_for_service(std::string_view plaintext, const hcrypt::PublicKey& sc_key,
                                      std::string_view context);
/// Opens a response sealed by the service under the same session key.
std::optional<RankOutcome> open_rank_response(std::string_view wire, const hcrypt::SessionKey& key);

class RankingService {
 public:
  RankingService(std::string id_r, catalog::AttributeSchema schema, hcrypt::MasterSecret master,
                 RankingPolicy policy, hcrypt::KeyPair channel_keys, std::uint64_t seed = 0);

  const std::string& id_r() const { return id_r_; }
  const hcrypt::PublicKey& channel_public_key() const { return channel_keys_.public_key; }
  const RankingPolicy& policy() const { return policy_; }

  /// Counts the request against the channel's daily budget when allowed.
  RateDecision check_rate_limit(std::string_view client_channel_id, TimeMs now);

  RankOutcome rank(const RankingRequest& req, TimeMs now);

  /// Entry point reachable from the retargeter host: sealed bytes in,
  /// sealed bytes out. Throws MessageError-like std::invalid_argument on
  /// undecryptable input.
  std::string handle_sealed_rank(std::string_view wire, std::string_view client_channel_id,
                                 TimeMs now);

  /// Accepts a sealed StatsContribution into the current reporting batch.
  void handle_sealed_stats(std::string_view wire);
  /// Aggregates and clears the batch; the only statistics output.
  StatsReport release_statistics();
  std::size_t pending_contributions() const;

 private:
  std::optional<FixedLog> decrypt_score(const RankingEntry& e, const UserProfile& u) const;
  std::string open_channel(std::string_view wire, std::string_view context,
                           hcrypt::SessionKey& key_out) const;

  std::string id_r_;
  catalog::AttributeSchema schema_;
  hcrypt::MasterSecret master_;
  RankingPolicy policy_;
  hcrypt::KeyPair channel_keys_;

  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  // channel id -> (day, requests that day)
  std::map<std::string, std::pair<std::int64_t, std::uint32_t>, std::less<>> rate_table_;
  std::vector<StatsContribution> stats_batch_;
};

}  // namespace pprt::ranking
