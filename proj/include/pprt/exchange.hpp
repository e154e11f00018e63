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
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pprt/common.hpp"
#include "pprt/hcrypt.hpp"
#include "pprt/messages.hpp"
#include "pprt/retargeter.hpp"

namespace pprt::exchange {

class ExchangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Transport from the exchange to one retargeter.
class BidderLink {
 public:
  virtual ~BidderLink() = default;
  virtual std::optional<msg::BidResponse> bid(const msg::BidRequest& req, TimeMs now) = 0;
  virtual std::optional<hcrypt::Bytes> fetch_ad(const std::string& ad_url, TimeMs now) = 0;
  virtual void notify_win(const msg::RequestId& rid, std::int64_t clearing_price_micros) = 0;
  virtual bool deliver_report(const msg::ForwardedReport& report) = 0;
};

/// Direct calls into a Retargeter living in the same process.
class LocalBidderLink : public BidderLink {
 public:
  explicit LocalBidderLink(retargeter::Retargeter& r) : r_(r) {}
  std::optional<msg::BidResponse> bid(const msg::BidRequest& req, TimeMs now) override;
  std::optional<hcrypt::Bytes> fetch_ad(const std::string& ad_url, TimeMs now) override;
  void notify_win(const msg::RequestId& rid, std::int64_t clearing_price_micros) override;
  bool deliver_report(const msg::ForwardedReport& report) override;

 private:
  retargeter::Retargeter& r_;
};

/// Creative id from an ad URL of the form ".../ad/<id>".
std::optional<std::string> creative_id_from_url(std::string_view ad_url);

struct RegistryEntry {
  std::string endpoint;
  hcrypt::PublicKey public_key;
};

/// {"<id_R>": {"endpoint": "...", "pubkey": "<base64>"}, ...}
/// Throws ExchangeError on malformed input.
std::map<std::string, RegistryEntry> load_registry(std::string_view text);
std::string serialize_registry(const std::map<std::string, RegistryEntry>& registry);

struct ExchangeConfig {
  std::int64_t reserve_micros = 0;
  /// Wall-clock deadline for a bid when fan-out is concurrent.
  TimeMs bid_timeout_ms = 100;
  bool concurrent_fanout = false;
  TimeMs report_ttl_ms = kDayMs;
  /// Timestamps forwarded to retargeters are floored to this granularity.
  TimeMs report_granularity_ms = kHourMs;
  std::string proxy_base = "https://adx.example";
};

struct ReceivedBid {
  std::string id_r;
  std::int64_t price_micros = 0;
};

/// Exchange-visible auction state; payloads stay opaque.
struct Auction {
  msg::RequestId rid{};
  std::string page_url;
  std::vector<msg::BidRequest> bid_requests;
  std::vector<ReceivedBid> bids;  // sorted: price desc, id_R asc
  std::optional<std::string> winner;
  std::int64_t clearing_price_micros = 0;
  std::optional<msg::Creative> winning_creative;  // original, before the rewrite
};

struct ReportLogEntry {
  std::string report_id;
  std::string client_addr;
  std::string creative_id;
  TimeMs timestamp = 0;
  TimeMs expires_at = 0;
};

struct ExchangeStats {
  std::uint64_t ad_requests = 0;
  std::uint64_t bid_requests = 0;
  std::uint64_t bids = 0;
  std::uint64_t late_or_invalid_bids = 0;
  std::uint64_t unknown_retargeters = 0;
  std::uint64_t empty_deliveries = 0;
  std::uint64_t proxied_ads = 0;
  std::uint64_t proxied_bytes = 0;
  std::uint64_t reports_forwarded = 0;
  std::uint64_t reports_dropped = 0;
};

/// Orders bids by price desc then id_R asc; returns the winner index (0)
/// and the second-price clearing value, or nullopt when no bid clears the
/// reserve.
std::optional<std::pair<std::string, std::int64_t>> settle_second_price(
    std::vector<ReceivedBid>& bids, std::int64_t reserve_micros);

class Exchange {
 public:
  explicit Exchange(ExchangeConfig config = {});

  const ExchangeConfig& config() const { return config_; }

  void register_bidder(const std::string& id_r, RegistryEntry entry,
                       std::shared_ptr<BidderLink> link);
  std::map<std::string, RegistryEntry> registry() const;

  /// One bid request per entry, then a second-price auction. The winner's
  /// creative comes back with ad_url pointing at the proxy.
  msg::AdDelivery handle_ad_request(const msg::AdRequest& req, const std::string& client_addr,
                                    TimeMs now);

  /// Relays the encrypted asset behind a proxy URL issued by an auction.
  std::optional<hcrypt::Bytes> proxy_fetch_ad(const std::string& proxy_url, TimeMs now);

  /// Strips user fields, logs the address for trace-back and forwards the
  /// report to the creative's retargeter. nullopt for unknown creatives.
  std::optional<msg::ForwardedReport> anonymize_report(const msg::RawReport& raw,
                                                       const std::string& client_addr,
                                                       TimeMs now);

  /// (report_id, client_addr) for every suspect still in the log.
  std::vector<std::pair<std::string, std::string>> trace_click_fraud(
      const std::vector<std::string>& report_ids, TimeMs now);

  void purge(TimeMs now);

  std::optional<Auction> auction(const msg::RequestId& rid) const;
  std::vector<Auction> auctions() const;
  void clear_auction_log();
  std::size_t report_log_size() const;

  /// Everything the exchange holds, rendered as text for content scans.
  std::string state_snapshot() const;
  ExchangeStats stats() const;

 private:
  struct Bidder {
    RegistryEntry entry;
    std::shared_ptr<BidderLink> link;
  };
  struct ProxyTarget {
    std::string id_r;
    std::string ad_url;
    TimeMs expires_at = 0;
  };

  std::vector<std::optional<msg::BidResponse>> collect_bids(
      const std::vector<std::pair<std::shared_ptr<BidderLink>, msg::BidRequest>>& calls,
      TimeMs now);
  std::string proxy_url_for(const std::string& ad_url) const;

  ExchangeConfig config_;
  mutable std::mutex mu_;
  std::map<std::string, Bidder> bidders_;
  std::map<msg::RequestId, Auction> auctions_;
  std::map<std::string, ProxyTarget> proxy_;                // original ad_url -> target
  std::map<std::string, std::pair<std::string, TimeMs>> creative_owner_;  // id -> (id_R, expiry)
  std::map<std::string, ReportLogEntry> report_log_;
  ExchangeStats stats_;
};

}  // namespace pprt::exchange
