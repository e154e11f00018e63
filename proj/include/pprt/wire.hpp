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

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pprt/common.hpp"
#include "pprt/exchange.hpp"
#include "pprt/messages.hpp"
#include "pprt/ranking_service.hpp"
#include "pprt/retargeter.hpp"

/// HTTP transport on localhost. Every party runs its own server thread.
///
/// Simulation headers: X-Sim-Time carries the virtual clock and
/// X-Sim-Addr the simulated peer address (all peers share 127.0.0.1).
namespace pprt::wire {

inline constexpr const char* kTimeHeader = "X-Sim-Time";
inline constexpr const char* kAddrHeader = "X-Sim-Addr";

/// Called for every request a retargeter host receives.
using Observer =
    std::function<void(std::string_view route, std::string_view peer, std::string_view body)>;

class HttpServer {
 public:
  HttpServer();
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds 127.0.0.1 on a free port; returns the port.
  int bind();
  /// Serves on a background thread; routes must be mounted first.
  void start();
  void stop();
  int port() const { return port_; }
  std::string base_url() const;

  struct Impl;
  Impl& impl() { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
  int port_ = -1;
};

/// POST /adreq, GET /proxy?u=, POST /report, POST /trace.
void mount_exchange(HttpServer& server, exchange::Exchange& ex);

/// POST /bid, GET /ad/{id}, POST /report, POST /win, POST /rank,
/// POST /stats, POST /stats/release.
void mount_retargeter(HttpServer& server, retargeter::Retargeter& r,
                      ranking::RankingService& ranking, Observer observer = {});

class HttpBidderLink : public exchange::BidderLink {
 public:
  explicit HttpBidderLink(std::string base_url, std::string self_addr = "adx");
  std::optional<msg::BidResponse> bid(const msg::BidRequest& req, TimeMs now) override;
  std::optional<hcrypt::Bytes> fetch_ad(const std::string& ad_url, TimeMs now) override;
  void notify_win(const msg::RequestId& rid, std::int64_t clearing_price_micros) override;
  bool deliver_report(const msg::ForwardedReport& report) override;

 private:
  std::string base_url_;
  std::string self_addr_;
};

/// Client side of the exchange endpoints.
class ExchangeClient {
 public:
  explicit ExchangeClient(std::string base_url);
  std::optional<msg::AdDelivery> ad_request(const msg::AdRequest& req, const std::string& addr,
                                            TimeMs now);
  /// GET on a proxy URL issued by this exchange.
  std::optional<hcrypt::Bytes> fetch(const std::string& url, const std::string& addr, TimeMs now);
  std::optional<msg::ForwardedReport> report(const msg::RawReport& raw, const std::string& addr,
                                             TimeMs now);
  std::vector<std::pair<std::string, std::string>> trace(const std::vector<std::string>& ids,
                                                         TimeMs now);

 private:
  std::string base_url_;
};

/// POST of a sealed ranking request to ranking_url ("http://host:port/rank").
std::optional<std::string> post_rank(const std::string& ranking_url, const std::string& body,
                                     const std::string& addr, TimeMs now);

/// Splits "http://host:port/path?query" into ("http://host:port", "/path?query").
std::pair<std::string, std::string> split_url(std::string_view url);

}  // namespace pprt::wire
