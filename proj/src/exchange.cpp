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

#include "pprt/exchange.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <set>
#include <thread>

#include "json.hpp"

namespace pprt::exchange {
namespace {

using json = nlohmann::ordered_json;

}  // namespace

std::optional<msg::BidResponse> LocalBidderLink::bid(const msg::BidRequest& req, TimeMs now) {
  return r_.handle_bid_request(req, now);
}

std::optional<hcrypt::Bytes> LocalBidderLink::fetch_ad(const std::string& ad_url, TimeMs now) {
  auto id = creative_id_from_url(ad_url);
  if (!id) return std::nullopt;
  return r_.serve_ad(*id, now);
}

void LocalBidderLink::notify_win(const msg::RequestId& rid, std::int64_t clearing_price_micros) {
  r_.notify_win(rid, clearing_price_micros);
}

bool LocalBidderLink::deliver_report(const msg::ForwardedReport& report) {
  return r_.receive_report(report);
}

std::optional<std::string> creative_id_from_url(std::string_view ad_url) {
  const auto pos = ad_url.rfind("/ad/");
  if (pos == std::string_view::npos) return std::nullopt;
  std::string_view id = ad_url.substr(pos + 4);
  if (id.empty() || id.find('/') != std::string_view::npos) return std::nullopt;
  return std::string(id);
}

std::map<std::string, RegistryEntry> load_registry(std::string_view text) {
  std::map<std::string, RegistryEntry> out;
  try {
    const json doc = json::parse(text);
    if (!doc.is_object()) throw ExchangeError("registry must be an object");
    for (const auto& [id_r, v] : doc.items()) {
      RegistryEntry e;
      e.endpoint = v.at("endpoint").get<std::string>();
      const auto key = hcrypt::base64_decode(v.at("pubkey").get<std::string>());
      if (key.size() != e.public_key.bytes.size())
        throw ExchangeError("registry: public key of '" + id_r + "' must be 32 bytes");
      std::copy(key.begin(), key.end(), e.public_key.bytes.begin());
      out.emplace(id_r, std::move(e));
    }
  } catch (const json::exception& e) {
    throw ExchangeError(std::string("registry: ") + e.what());
  } catch (const hcrypt::HcryptError& e) {
    throw ExchangeError(std::string("registry: ") + e.what());
  }
  return out;
}

std::string serialize_registry(const std::map<std::string, RegistryEntry>& registry) {
  json doc = json::object();
  for (const auto& [id_r, e] : registry) {
    doc[id_r] = {{"endpoint", e.endpoint},
                 {"pubkey", hcrypt::base64_encode(e.public_key.bytes)}};
  }
  return doc.dump(2);
}

std::optional<std::pair<std::string, std::int64_t>> settle_second_price(
    std::vector<ReceivedBid>& bids, std::int64_t reserve_micros) {
  std::erase_if(bids, [&](const ReceivedBid& b) { return b.price_micros < reserve_micros; });
  std::sort(bids.begin(), bids.end(), [](const ReceivedBid& a, const ReceivedBid& b) {
    if (a.price_micros != b.price_micros) return a.price_micros > b.price_micros;
    return a.id_r < b.id_r;
  });
  if (bids.empty()) return std::nullopt;
  const std::int64_t clearing = bids.size() > 1 ? bids[1].price_micros : reserve_micros;
  return std::make_pair(bids.front().id_r, clearing);
}

Exchange::Exchange(ExchangeConfig config) : config_(std::move(config)) {
  if (config_.report_granularity_ms < 1)
    throw ExchangeError("report_granularity_ms must be positive");
}

void Exchange::register_bidder(const std::string& id_r, RegistryEntry entry,
                               std::shared_ptr<BidderLink> link) {
  if (!link) throw ExchangeError("bidder link must not be null");
  std::lock_guard lock(mu_);
  bidders_[id_r] = Bidder{std::move(entry), std::move(link)};
}

std::map<std::string, RegistryEntry> Exchange::registry() const {
  std::lock_guard lock(mu_);
  std::map<std::string, RegistryEntry> out;
  for (const auto& [id, b] : bidders_) out.emplace(id, b.entry);
  return out;
}

std::vector<std::optional<msg::BidResponse>> Exchange::collect_bids(
    const std::vector<std::pair<std::shared_ptr<BidderLink>, msg::BidRequest>>& calls,
    TimeMs now) {
  std::vector<std::optional<msg::BidResponse>> out(calls.size());
  if (!config_.concurrent_fanout) {
    for (std::size_t i = 0; i < calls.size(); ++i) {
      try {
        out[i] = calls[i].first->bid(calls[i].second, now);
      } catch (const std::exception&) {
        out[i].reset();
      }
    }
    return out;
  }

  // Late bidders keep running detached; their answers are discarded.
  std::vector<std::future<std::optional<msg::BidResponse>>> futures;
  for (const auto& [link, req] : calls) {
    auto promise = std::make_shared<std::promise<std::optional<msg::BidResponse>>>();
    futures.push_back(promise->get_future());
    std::thread([promise, link = link, req = req, now] {
      try {
        promise->set_value(link->bid(req, now));
      } catch (...) {
        promise->set_value(std::nullopt);
      }
    }).detach();
  }
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(config_.bid_timeout_ms);
  for (std::size_t i = 0; i < futures.size(); ++i) {
    if (futures[i].wait_until(deadline) == std::future_status::ready) out[i] = futures[i].get();
  }
  return out;
}

std::string Exchange::proxy_url_for(const std::string& ad_url) const {
  return config_.proxy_base + "/proxy?u=" + msg::url_encode(ad_url);
}

msg::AdDelivery Exchange::handle_ad_request(const msg::AdRequest& req,
                                            const std::string& client_addr, TimeMs now) {
  (void)client_addr;  // never stored with auction state
  Auction auction;
  auction.rid = req.rid;
  auction.page_url = req.page_url;

  std::vector<std::pair<std::shared_ptr<BidderLink>, msg::BidRequest>> calls;
  std::vector<std::string> call_ids;
  {
    std::lock_guard lock(mu_);
    ++stats_.ad_requests;
    std::set<std::string> seen;
    for (const auto& e : req.entries) {
      auto it = bidders_.find(e.id_r);
      if (it == bidders_.end() || !seen.insert(e.id_r).second) {
        ++stats_.unknown_retargeters;
        continue;
      }
      msg::BidRequest br{req.rid, req.page_url, e.sealed_key, e.payload};
      auction.bid_requests.push_back(br);
      calls.emplace_back(it->second.link, std::move(br));
      call_ids.push_back(e.id_r);
    }
    stats_.bid_requests += calls.size();
  }

  const auto responses = collect_bids(calls, now);

  std::map<std::string, msg::Creative> creatives;
  std::uint64_t invalid = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& r = responses[i];
    if (!r) continue;
    if (r->rid != req.rid || r->id_r != call_ids[i] || r->bid_price_micros < 0) {
      ++invalid;
      continue;
    }
    auction.bids.push_back({r->id_r, r->bid_price_micros});
    creatives[r->id_r] = r->creative;
  }

  msg::AdDelivery delivery;
  delivery.rid = req.rid;
  std::shared_ptr<BidderLink> winner_link;
  {
    std::lock_guard lock(mu_);
    stats_.late_or_invalid_bids += invalid;
    stats_.bids += auction.bids.size();
    if (auto settled = settle_second_price(auction.bids, config_.reserve_micros)) {
      const auto& [id_r, clearing] = *settled;
      auction.winner = id_r;
      auction.clearing_price_micros = clearing;
      const msg::Creative& original = creatives.at(id_r);
      auction.winning_creative = original;

      proxy_[original.ad_url] = ProxyTarget{id_r, original.ad_url, now + config_.report_ttl_ms};
      creative_owner_[original.creative_id] = {id_r, now + config_.report_ttl_ms};
      delivery.id_r = id_r;
      delivery.creative = original;
      delivery.creative.ad_url = proxy_url_for(original.ad_url);
      winner_link = bidders_.at(id_r).link;
    } else {
      ++stats_.empty_deliveries;
    }
    auctions_[req.rid] = auction;
  }
  if (winner_link) winner_link->notify_win(req.rid, auction.clearing_price_micros);
  return delivery;
}

std::optional<hcrypt::Bytes> Exchange::proxy_fetch_ad(const std::string& proxy_url, TimeMs now) {
  const std::string prefix = config_.proxy_base + "/proxy?u=";
  if (proxy_url.rfind(prefix, 0) != 0) return std::nullopt;
  std::string ad_url;
  try {
    ad_url = msg::url_decode(std::string_view(proxy_url).substr(prefix.size()));
  } catch (const std::exception&) {
    return std::nullopt;
  }

  std::shared_ptr<BidderLink> link;
  {
    std::lock_guard lock(mu_);
    auto it = proxy_.find(ad_url);
    if (it == proxy_.end() || it->second.expires_at <= now) return std::nullopt;
    auto b = bidders_.find(it->second.id_r);
    if (b == bidders_.end()) return std::nullopt;
    link = b->second.link;
  }
  auto bytes = link->fetch_ad(ad_url, now);
  if (bytes) {
    std::lock_guard lock(mu_);
    ++stats_.proxied_ads;
    stats_.proxied_bytes += bytes->size();
  }
  return bytes;
}

std::optional<msg::ForwardedReport> Exchange::anonymize_report(const msg::RawReport& raw,
                                                               const std::string& client_addr,
                                                               TimeMs now) {
  std::shared_ptr<BidderLink> link;
  msg::ForwardedReport fwd;
  {
    std::lock_guard lock(mu_);
    auto owner = creative_owner_.find(raw.creative_id);
    if (owner == creative_owner_.end() || owner->second.second <= now) {
      ++stats_.reports_dropped;
      return std::nullopt;
    }
    link = bidders_.at(owner->second.first).link;

    fwd.report_id = msg::to_hex(msg::random_request_id());
    fwd.creative_id = raw.creative_id;
    fwd.event = raw.event;
    fwd.coarse_timestamp =
        raw.timestamp - (raw.timestamp % config_.report_granularity_ms + config_.report_granularity_ms) %
                            config_.report_granularity_ms;
    report_log_[fwd.report_id] = ReportLogEntry{fwd.report_id, client_addr, raw.creative_id,
                                                raw.timestamp, now + config_.report_ttl_ms};
    ++stats_.reports_forwarded;
  }
  link->deliver_report(fwd);
  return fwd;
}

std::vector<std::pair<std::string, std::string>> Exchange::trace_click_fraud(
    const std::vector<std::string>& report_ids, TimeMs now) {
  purge(now);
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& id : report_ids) {
    if (auto it = report_log_.find(id); it != report_log_.end())
      out.emplace_back(id, it->second.client_addr);
  }
  return out;
}

void Exchange::purge(TimeMs now) {
  std::lock_guard lock(mu_);
  std::erase_if(report_log_, [&](const auto& kv) { return kv.second.expires_at <= now; });
  std::erase_if(proxy_, [&](const auto& kv) { return kv.second.expires_at <= now; });
  std::erase_if(creative_owner_, [&](const auto& kv) { return kv.second.second <= now; });
}

std::optional<Auction> Exchange::auction(const msg::RequestId& rid) const {
  std::lock_guard lock(mu_);
  auto it = auctions_.find(rid);
  if (it == auctions_.end()) return std::nullopt;
  return it->second;
}

std::vector<Auction> Exchange::auctions() const {
  std::lock_guard lock(mu_);
  std::vector<Auction> out;
  out.reserve(auctions_.size());
  for (const auto& [_, a] : auctions_) out.push_back(a);
  return out;
}

void Exchange::clear_auction_log() {
  std::lock_guard lock(mu_);
  auctions_.clear();
}

std::size_t Exchange::report_log_size() const {
  std::lock_guard lock(mu_);
  return report_log_.size();
}

std::string Exchange::state_snapshot() const {
  std::lock_guard lock(mu_);
  json doc;
  json auctions = json::array();
  for (const auto& [rid, a] : auctions_) {
    json j;
    j["rid"] = msg::to_hex(rid);
    j["page"] = a.page_url;
    json reqs = json::array();
    for (const auto& br : a.bid_requests) reqs.push_back(json::parse(msg::serialize(br)));
    j["bid_requests"] = std::move(reqs);
    json bids = json::array();
    for (const auto& b : a.bids) bids.push_back({{"id_R", b.id_r}, {"price", b.price_micros}});
    j["bids"] = std::move(bids);
    if (a.winner) j["winner"] = *a.winner;
    j["clearing"] = a.clearing_price_micros;
    if (a.winning_creative) {
      j["creative"] = {{"id", a.winning_creative->creative_id},
                       {"ad_url", a.winning_creative->ad_url},
                       {"ad_ct", hcrypt::base64_encode(a.winning_creative->ad_ct)}};
    }
    auctions.push_back(std::move(j));
  }
  doc["auctions"] = std::move(auctions);
  json proxy = json::array();
  for (const auto& [url, t] : proxy_) proxy.push_back({{"id_R", t.id_r}, {"ad_url", url}});
  doc["proxy"] = std::move(proxy);
  json log = json::array();
  for (const auto& [id, e] : report_log_) {
    log.push_back({{"report_id", id},
                   {"addr", e.client_addr},
                   {"creative_id", e.creative_id},
                   {"ts", e.timestamp}});
  }
  doc["report_log"] = std::move(log);
  return doc.dump();
}

ExchangeStats Exchange::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

}  // namespace pprt::exchange
