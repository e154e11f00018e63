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

#include "pprt/client_agent.hpp"

#include <algorithm>
#include <set>
#include <tuple>

namespace pprt::client {

Ciphertext compute_encrypted_score(const ProductProfileEnc& profile, const UserProfile& u) {
  if (u.values.size() != profile.factors.size())
    throw ClientError("user profile length does not match the product profile");
  Ciphertext score = profile.pis;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    const auto& f = profile.factors[i];
    if (u.values[i] >= f.size()) throw ClientError("user profile coordinate out of range");
    score = score + f[u.values[i]];
  }
  for (const auto& t : profile.coefficients) {
    if (t.attr_j >= u.values.size() || u.values[t.attr_i] >= t.rows ||
        u.values[t.attr_j] >= t.cols)
      throw ClientError("coefficient table does not match the user profile");
    score = score + t.at(u.values[t.attr_i], u.values[t.attr_j]);
  }
  return score;
}

ClientAgent::ClientAgent(catalog::AttributeSchema schema, ClientConfig config)
    : schema_(std::move(schema)), config_(config), rng_(config.seed) {
  if (config_.store_cap == 0) throw ClientError("store_cap must be positive");
}

void ClientAgent::register_retargeter(const std::string& id_r, const hcrypt::PublicKey& key) {
  retargeter_keys_[id_r] = key;
}

void ClientAgent::register_ranking_service(const std::string& ranking_url,
                                           const hcrypt::PublicKey& key) {
  ranking_keys_[ranking_url] = key;
}

void ClientAgent::record_product(const ProductProfileEnc& profile, const UserProfile& u,
                                 TimeMs now, bool sensitive) {
  if (auto v = catalog::validate_user_profile(u, schema_); !v.empty())
    throw ClientError("invalid user profile: " + v.front().message);
  if (auto err = catalog::shape_error(profile, schema_)) throw ClientError(*err);

  const Ciphertext score = compute_encrypted_score(profile, u);
  auto it = records_.find(profile.id_p);
  if (it != records_.end()) {
    auto& rec = it->second;
    if (rec.profile.id_r != profile.id_r) ++ranking_state_[rec.profile.id_r].pending;
    rec.profile = profile;
    rec.u = u;
    rec.score_ct = score;
    rec.last_seen = now;
    rec.sensitive = rec.sensitive || sensitive;
  } else {
    LocalProductRecord rec;
    rec.profile = profile;
    rec.u = u;
    rec.score_ct = score;
    rec.first_seen = now;
    rec.last_seen = now;
    rec.sensitive = sensitive;
    records_.emplace(profile.id_p, std::move(rec));
    if (records_.size() > config_.store_cap) {
      // The product just visited is never the victim.
      auto self = records_.extract(profile.id_p);
      evict_one();
      records_.insert(std::move(self));
    }
  }
  ++ranking_state_[profile.id_r].pending;
}

void ClientAgent::evict_one() {
  if (records_.empty()) return;
  // Unranked first; ties broken by worst rank, then oldest visit.
  auto key = [](const LocalProductRecord& r) {
    const bool ranked = r.rank.has_value();
    const std::int64_t rank = ranked ? static_cast<std::int64_t>(*r.rank) : 0;
    return std::make_tuple(ranked ? 1 : 0, -rank, r.last_seen);
  };
  auto victim = std::min_element(records_.begin(), records_.end(), [&](const auto& a, const auto& b) {
    return key(a.second) < key(b.second);
  });
  records_.erase(victim);
}

void ClientAgent::set_sensitive(const std::string& id_p, bool flag) {
  auto it = records_.find(id_p);
  if (it == records_.end()) throw ClientError("unknown product '" + id_p + "'");
  it->second.sensitive = flag;
  if (flag) {
    it->second.rank.reset();
    it->second.bid_score_ct.reset();
  } else {
    ++ranking_state_[it->second.profile.id_r].pending;
  }
}

bool ClientAgent::ranking_due(const std::string& id_r, TimeMs now) const {
  auto it = ranking_state_.find(id_r);
  if (it == ranking_state_.end() || it->second.pending == 0) return false;
  if (now < it->second.not_before) return false;
  return it->second.pending >= config_.batch_min ||
         now - it->second.last_ranked >= config_.ranking_interval_ms;
}

std::vector<std::string> ClientAgent::retargeters_with_pending(TimeMs now) const {
  std::vector<std::string> out;
  for (const auto& [id_r, st] : ranking_state_) {
    if (st.pending > 0 && now >= st.not_before) out.push_back(id_r);
  }
  return out;
}

std::vector<std::string> ClientAgent::retargeters() const {
  std::set<std::string> ids;
  for (const auto& [_, r] : records_) ids.insert(r.profile.id_r);
  return {ids.begin(), ids.end()};
}

TimeMs ClientAgent::jitter() {
  if (config_.jitter_max_ms <= 0) return 0;
  return std::uniform_int_distribution<TimeMs>(0, config_.jitter_max_ms)(rng_);
}

RankingResult ClientAgent::request_ranking(const std::string& id_r, TimeMs now,
                                           const RankingSender& send) {
  RankingResult result;
  ranking::RankingRequest req;
  std::string ranking_url;
  for (const auto& [id_p, rec] : records_) {
    if (rec.profile.id_r != id_r || rec.sensitive) continue;
    if (req.entries.empty()) {
      req.u = rec.u;
      ranking_url = rec.profile.ranking_url;
    }
    ranking::RankingEntry e{id_p, rec.score_ct, {}, std::nullopt};
    for (const auto& t : rec.profile.coefficients) e.pairs.emplace_back(t.attr_i, t.attr_j);
    if (rec.u != req.u) e.u = rec.u;
    req.entries.push_back(std::move(e));
  }
  if (req.entries.empty()) {
    ranking_state_[id_r].pending = 0;
    return result;
  }

  auto key_it = ranking_keys_.find(ranking_url);
  if (key_it == ranking_keys_.end()) {
    result.status = RankingStatus::kFailed;
    return result;
  }

  auto sealed = ranking::seal_for_service(ranking::serialize(req), key_it->second,
                                          hcrypt::context::kRankingRequest);
  result.sent_at = now + jitter();
  auto wire = send(ranking_url, sealed.wire, result.sent_at);
  std::optional<ranking::RankOutcome> outcome;
  if (wire) outcome = ranking::open_rank_response(*wire, sealed.key);
  if (!outcome) {
    result.status = RankingStatus::kFailed;
    return result;
  }

  auto& state = ranking_state_[id_r];
  if (const auto* denied = std::get_if<ranking::RankingDenied>(&*outcome)) {
    result.status = RankingStatus::kDenied;
    result.retry_after_ms = denied->retry_after_ms;
    state.not_before = result.sent_at + denied->retry_after_ms;
    return result;
  }

  const auto& resp = std::get<ranking::RankingResponse>(*outcome);
  for (auto& [_, rec] : records_) {
    if (rec.profile.id_r != id_r) continue;
    rec.rank.reset();
    rec.bid_score_ct.reset();
  }
  std::uint32_t rank = 0;
  for (const auto& r : resp.ranked) {
    auto it = records_.find(r.id_p);
    if (it == records_.end() || it->second.profile.id_r != id_r) continue;
    it->second.rank = rank++;
    it->second.bid_score_ct = r.bid_score;
  }
  result.status = RankingStatus::kRanked;
  result.ranked = rank;
  result.dropped = resp.dropped;
  state.pending = 0;
  state.last_ranked = now;
  return result;
}

OutboundAdRequest ClientAgent::build_ad_request(const std::string& page_url, TimeMs now) {
  OutboundAdRequest out;
  out.request.rid = msg::random_request_id();
  out.request.page_url = page_url;

  std::map<std::string, std::vector<const LocalProductRecord*>> candidates;
  for (const auto& [_, rec] : records_) {
    if (rec.sensitive || !rec.rank || !rec.bid_score_ct) continue;
    if (rec.impressions_today >= config_.freq_cap) continue;
    if (!retargeter_keys_.contains(rec.profile.id_r)) continue;
    candidates[rec.profile.id_r].push_back(&rec);
  }

  for (auto& [id_r, recs] : candidates) {
    std::sort(recs.begin(), recs.end(), [](const auto* a, const auto* b) {
      return std::tie(*a->rank, a->profile.id_p) < std::tie(*b->rank, b->profile.id_p);
    });
    if (recs.size() > config_.top_m) recs.resize(config_.top_m);

    std::vector<msg::PayloadItem> items;
    auto& offered = out.offered[id_r];
    for (const auto* r : recs) {
      items.push_back({r->profile.id_p, *r->bid_score_ct, r->profile.pis});
      offered.push_back(r->profile.id_p);
    }
    const auto key = hcrypt::SessionKey::random();
    msg::AdRequestEntry entry;
    entry.id_r = id_r;
    entry.sealed_key = hcrypt::seal_session_key(key, retargeter_keys_.at(id_r));
    entry.payload = hcrypt::aead_seal(hcrypt::as_bytes(msg::serialize_payload(items)), key,
                                      hcrypt::context::kProductPayload);
    out.request.entries.push_back(std::move(entry));
    sessions_[out.request.rid][id_r] = key;
  }
  out.send_at = now + jitter();
  return out;
}

std::optional<AdView> ClientAgent::open_delivery(
    const msg::AdDelivery& delivery,
    const std::function<std::optional<hcrypt::Bytes>(const std::string& url)>& fetch_asset) {
  auto sit = sessions_.find(delivery.rid);
  if (sit == sessions_.end()) return std::nullopt;
  auto keys = std::move(sit->second);
  sessions_.erase(sit);
  if (!delivery.id_r) return std::nullopt;
  auto kit = keys.find(*delivery.id_r);
  if (kit == keys.end()) return std::nullopt;

  auto markup_bytes =
      hcrypt::aead_open(delivery.creative.ad_ct, kit->second, hcrypt::context::kAdContent);
  if (!markup_bytes) return std::nullopt;
  AdView view;
  view.id_r = *delivery.id_r;
  try {
    view.markup = msg::parse_ad_markup(hcrypt::to_string(*markup_bytes));
  } catch (const msg::MessageError&) {
    return std::nullopt;
  }
  auto asset_ct = fetch_asset(delivery.creative.ad_url);
  if (!asset_ct) return std::nullopt;
  auto asset = hcrypt::aead_open(*asset_ct, kit->second, hcrypt::context::kAdContent);
  if (!asset) return std::nullopt;
  view.asset = std::move(*asset);
  return view;
}

void ClientAgent::forget_request(const msg::RequestId& rid) { sessions_.erase(rid); }

void ClientAgent::register_ad_impression(const std::string& id_p) {
  if (auto it = records_.find(id_p); it != records_.end()) ++it->second.impressions_today;
}

void ClientAgent::reset_daily_counters() {
  for (auto& [_, rec] : records_) rec.impressions_today = 0;
}

const LocalProductRecord* ClientAgent::find(const std::string& id_p) const {
  auto it = records_.find(id_p);
  return it == records_.end() ? nullptr : &it->second;
}

}  // namespace pprt::client
