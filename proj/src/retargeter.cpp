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

#include "pprt/retargeter.hpp"

#include <cmath>

#include "json.hpp"
#include "pprt/ranking_service.hpp"

namespace pprt::retargeter {

using catalog::kMicrosPerUnit;

std::int64_t FeedSnapshot::quality_for(std::string_view page_url) const {
  auto it = page_quality.find(msg::host_of(page_url));
  return it == page_quality.end() ? kMicrosPerUnit : it->second;
}

Retargeter::Retargeter(std::string id_r, catalog::AttributeSchema schema,
                       hcrypt::MasterSecret master, hcrypt::KeyPair keys, RetargeterConfig config)
    : id_r_(std::move(id_r)),
      schema_(std::move(schema)),
      master_(master),
      keys_(keys),
      config_(std::move(config)),
      feed_(std::make_shared<FeedSnapshot>()) {
  if (config_.ad_host.empty()) config_.ad_host = id_r_ + ".ads.example";
  if (config_.alpha < 0.0) throw FeedError("alpha must be non-negative");
}

void Retargeter::mutate_feed(const std::function<void(FeedSnapshot&)>& fn) {
  std::lock_guard lock(mu_);
  auto next = std::make_shared<FeedSnapshot>(*feed_);
  fn(*next);
  ++next->version;
  feed_ = std::move(next);
}

void Retargeter::add_product(ProductProfileClear product) {
  if (product.id_r != id_r_) throw FeedError("product '" + product.id_p + "' belongs to " + product.id_r);
  mutate_feed([&](FeedSnapshot& f) {
    if (f.products.contains(product.id_p))
      throw FeedError("duplicate product id '" + product.id_p + "' in feed");
    ++product_version_[product.id_p];
    f.products.emplace(product.id_p, std::move(product));
  });
}

void Retargeter::update_cpc(const std::string& id_p, std::int64_t cpc_micros) {
  mutate_feed([&](FeedSnapshot& f) {
    auto it = f.products.find(id_p);
    if (it == f.products.end()) throw FeedError("unknown product '" + id_p + "'");
    it->second.cpc_micros = cpc_micros;
    catalog::refresh_pis(it->second);
    ++product_version_[id_p];
  });
}

void Retargeter::update_ctr(const std::string& id_p, double ctr) {
  mutate_feed([&](FeedSnapshot& f) {
    auto it = f.products.find(id_p);
    if (it == f.products.end()) throw FeedError("unknown product '" + id_p + "'");
    it->second.ctr_default = ctr;
    catalog::refresh_pis(it->second);
    ++product_version_[id_p];
  });
}

void Retargeter::set_page_quality(const std::string& domain, std::int64_t multiplier_micros) {
  if (multiplier_micros <= 0) throw FeedError("page quality must be positive");
  mutate_feed([&](FeedSnapshot& f) { f.page_quality[domain] = multiplier_micros; });
}

std::shared_ptr<const FeedSnapshot> Retargeter::snapshot() const {
  std::lock_guard lock(mu_);
  return feed_;
}

std::vector<ProductProfileEnc> Retargeter::publish_feed() {
  auto feed = snapshot();
  std::vector<ProductProfileEnc> out;
  out.reserve(feed->products.size());
  for (const auto& [id_p, clear] : feed->products) {
    std::uint64_t version;
    {
      std::lock_guard lock(mu_);
      version = product_version_[id_p];
      auto pv = published_version_.find(id_p);
      if (pv != published_version_.end() && pv->second == version) {
        out.push_back(published_.at(id_p));
        continue;
      }
    }
    auto enc = catalog::encrypt_product_profile(clear, master_);
    std::lock_guard lock(mu_);
    published_[id_p] = enc;
    published_version_[id_p] = version;
    out.push_back(std::move(enc));
  }
  return out;
}

std::optional<ProductProfileEnc> Retargeter::published_profile(const std::string& id_p) const {
  std::lock_guard lock(mu_);
  auto it = published_.find(id_p);
  if (it == published_.end()) return std::nullopt;
  return it->second;
}

BidDecision Retargeter::decide(const std::vector<msg::PayloadItem>& items,
                               std::string_view page_url, const FeedSnapshot& feed) const {
  BidDecision d;
  const FixedLog quality = catalog::encode_ratio_log(feed.quality_for(page_url));
  for (const auto& item : items) {
    auto it = feed.products.find(item.id_p);
    if (it == feed.products.end()) continue;
    const std::int64_t conveyed = hcrypt::dec(item.bid_score, catalog::bid_key(master_, item.id_p));
    const std::int64_t conveyed_pis = hcrypt::dec(item.pis, catalog::pis_key(master_, item.id_p));
    if (std::llabs(conveyed) >= ranking::kMaxScoreMagnitude ||
        std::llabs(conveyed_pis) >= ranking::kMaxScoreMagnitude)
      continue;
    // PIS drift and page quality are additive in the log domain.
    const std::int64_t current_pis = catalog::encode_log(it->second.pis_micros).v;
    const std::int64_t adjusted = conveyed + (current_pis - conveyed_pis) + quality.v;
    d.candidates.push_back({item.id_p, FixedLog{conveyed}, FixedLog{adjusted}});
  }
  for (std::size_t i = 0; i < d.candidates.size(); ++i) {
    if (!d.winner) {
      d.winner = i;
      continue;
    }
    const auto& best = d.candidates[*d.winner];
    const auto& c = d.candidates[i];
    if (c.adjusted > best.adjusted || (c.adjusted == best.adjusted && c.id_p < best.id_p))
      d.winner = i;
  }
  if (!d.winner) return d;
  d.expected_revenue_micros = catalog::decode_log(d.candidates[*d.winner].adjusted);
  if (d.expected_revenue_micros < config_.reserve_micros) {
    d.winner.reset();
    return d;
  }
  d.bid_price_micros =
      std::llround(config_.alpha * static_cast<double>(d.expected_revenue_micros));
  return d;
}

std::optional<msg::BidResponse> Retargeter::handle_bid_request(const msg::BidRequest& req,
                                                               TimeMs now) {
  auto reject = [&] {
    std::lock_guard lock(mu_);
    ++stats_.bid_requests;
    ++stats_.rejected_requests;
    return std::nullopt;
  };

  auto key = hcrypt::open_session_key(req.sealed_key, keys_);
  if (!key) return reject();
  auto payload = hcrypt::aead_open(req.payload, *key, hcrypt::context::kProductPayload);
  if (!payload) return reject();
  std::vector<msg::PayloadItem> items;
  try {
    items = msg::parse_payload(hcrypt::to_string(*payload));
  } catch (const msg::MessageError&) {
    return reject();
  }

  auto feed = snapshot();
  BidDecision d;
  try {
    d = decide(items, req.page_url, *feed);
  } catch (const std::exception&) {
    return reject();
  }

  std::lock_guard lock(mu_);
  ++stats_.bid_requests;
  if (!d.winner) {
    ++stats_.no_bids;
    return std::nullopt;
  }
  ++stats_.bids;
  purge_expired(now);

  const std::string& id_p = d.candidates[*d.winner].id_p;
  msg::RequestId cid_bytes = msg::random_request_id();
  const std::string creative_id = msg::to_hex(cid_bytes);

  msg::AdMarkup markup{id_p, "Still interested? " + id_p,
                       "https://shop.example/p/" + msg::url_encode(id_p)};
  msg::BidResponse resp;
  resp.rid = req.rid;
  resp.id_r = id_r_;
  resp.bid_price_micros = d.bid_price_micros;
  resp.creative.creative_id = creative_id;
  resp.creative.ad_url = "https://" + config_.ad_host + "/ad/" + creative_id;
  resp.creative.ad_ct = hcrypt::aead_seal(hcrypt::as_bytes(msg::serialize(markup)), *key,
                                          hcrypt::context::kAdContent);

  creatives_[creative_id] =
      IssuedCreative{id_p, req.rid, *key, now + config_.creative_ttl_ms, d.bid_price_micros, {}};
  creative_by_rid_[req.rid] = creative_id;
  return resp;
}

void Retargeter::purge_expired(TimeMs now) {
  for (auto it = creatives_.begin(); it != creatives_.end();) {
    if (it->second.expires_at <= now) {
      creative_by_rid_.erase(it->second.rid);
      it = creatives_.erase(it);
    } else {
      ++it;
    }
  }
}

std::optional<hcrypt::Bytes> Retargeter::serve_ad(const std::string& creative_id, TimeMs now) {
  hcrypt::SessionKey key;
  std::string id_p;
  {
    std::lock_guard lock(mu_);
    auto it = creatives_.find(creative_id);
    if (it == creatives_.end() || it->second.expires_at <= now) return std::nullopt;
    key = it->second.session_key;
    id_p = it->second.id_p;
    ++stats_.ads_served;
  }
  std::string asset = "creative-asset:" + id_p + ":";
  if (asset.size() < config_.ad_asset_bytes) asset.resize(config_.ad_asset_bytes, '.');
  return hcrypt::aead_seal(hcrypt::as_bytes(asset), key, hcrypt::context::kAdContent);
}

void Retargeter::notify_win(const msg::RequestId& rid, std::int64_t clearing_price_micros) {
  std::lock_guard lock(mu_);
  if (!creative_by_rid_.contains(rid)) return;
  ++stats_.wins;
  stats_.spend_micros += clearing_price_micros;
}

bool Retargeter::receive_report(std::string_view forwarded_json) {
  msg::ForwardedReport report;
  try {
    report = msg::parse_forwarded_report(forwarded_json);
  } catch (const msg::MessageError&) {
    std::lock_guard lock(mu_);
    ++stats_.rejected_reports;
    return false;
  }
  return receive_report(report);
}

bool Retargeter::receive_report(const msg::ForwardedReport& report) {
  std::lock_guard lock(mu_);
  auto it = creatives_.find(report.creative_id);
  if (it == creatives_.end()) return false;
  ++stats_.reports;
  auto& tally = tallies_[it->second.id_p];
  if (report.event == msg::ReportEvent::kImpression) {
    ++tally.impressions;
  } else {
    ++tally.clicks;
    auto p = feed_->products.find(it->second.id_p);
    if (p != feed_->products.end()) tally.billed_micros += p->second.cpc_micros;
    it->second.click_reports.push_back(report.report_id);
  }
  return true;
}

std::vector<std::string> Retargeter::suspected_click_reports() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [_, c] : creatives_) {
    if (c.click_reports.size() > config_.max_clicks_per_creative)
      out.insert(out.end(), c.click_reports.begin(), c.click_reports.end());
  }
  return out;
}

std::map<std::string, ProductTally> Retargeter::tallies() const {
  std::lock_guard lock(mu_);
  return tallies_;
}

RetargeterStats Retargeter::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

namespace {

using json = nlohmann::json;

std::int64_t to_micros(const json& v) {
  if (!v.is_number()) throw FeedError("multiplier must be a number");
  const double x = v.get<double>();
  if (!(x > 0.0)) throw FeedError("multipliers must be positive");
  return std::llround(x * static_cast<double>(kMicrosPerUnit));
}

std::size_t attribute_index(const json& v, const catalog::AttributeSchema& schema) {
  if (v.is_number_unsigned()) {
    const auto i = v.get<std::size_t>();
    if (i >= schema.size()) throw FeedError("attribute index out of range");
    return i;
  }
  if (v.is_string()) {
    if (auto i = schema.index_of(v.get<std::string>())) return *i;
    throw FeedError("unknown attribute '" + v.get<std::string>() + "'");
  }
  throw FeedError("attribute must be a name or an index");
}

}  // namespace

FeedConfig parse_feed_config(std::string_view text, const catalog::AttributeSchema& schema) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FeedError(std::string("feed config: ") + e.what());
  }
  FeedConfig cfg;
  try {
    cfg.id_r = doc.at("id_R").get<std::string>();
    cfg.ranking_url = doc.value("ranking_url", "https://" + cfg.id_r + ".rank.example/rank");
    cfg.config.alpha = doc.value("alpha", cfg.config.alpha);
    cfg.config.reserve_micros = doc.value("reserve_micros", cfg.config.reserve_micros);
    if (auto it = doc.find("page_quality"); it != doc.end()) {
      for (const auto& [domain, q] : it->items()) cfg.page_quality[domain] = to_micros(q);
    }
    for (const auto& p : doc.at("products")) {
      catalog::ProductSpec spec;
      spec.id_p = p.at("id_P").get<std::string>();
      spec.id_r = cfg.id_r;
      spec.ctr_default = p.at("ctr").get<double>();
      spec.cpc_micros = p.at("cpc_micros").get<std::int64_t>();
      spec.ranking_url = cfg.ranking_url;
      if (auto f = p.find("factors"); f != p.end()) {
        for (const auto& [attr, values] : f->items()) {
          auto idx = schema.index_of(attr);
          if (!idx) throw FeedError("unknown attribute '" + attr + "'");
          auto& slot = spec.factors[*idx];
          for (const auto& v : values) slot.push_back(to_micros(v));
        }
      }
      if (auto c = p.find("coefficients"); c != p.end()) {
        for (const auto& entry : *c) {
          catalog::CoefficientTable t;
          t.attr_i = static_cast<std::uint32_t>(attribute_index(entry.at("i"), schema));
          t.attr_j = static_cast<std::uint32_t>(attribute_index(entry.at("j"), schema));
          const auto& table = entry.at("table");
          t.rows = static_cast<std::uint32_t>(table.size());
          t.cols = table.empty() ? 0 : static_cast<std::uint32_t>(table.front().size());
          for (const auto& row : table) {
            if (row.size() != t.cols) throw FeedError("ragged coefficient table");
            for (const auto& v : row) t.values.push_back(to_micros(v));
          }
          spec.coefficients.push_back(std::move(t));
        }
      }
      cfg.products.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw FeedError(std::string("feed config: ") + e.what());
  }
  return cfg;
}

}  // namespace pprt::retargeter
