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

#include "pprt/ranking_service.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "json.hpp"
#include "pprt/messages.hpp"

namespace pprt::ranking {
namespace {

using json = nlohmann::ordered_json;
using msg::MessageError;

json parse_doc(std::string_view text, const char* what) {
  try {
    json doc = json::parse(text);
    if (!doc.is_object()) throw MessageError(std::string(what) + " must be an object");
    return doc;
  } catch (const json::exception& e) {
    throw MessageError(std::string(what) + ": " + e.what());
  }
}

json profile_json(const UserProfile& u) { return json(u.values); }

UserProfile profile_from(const json& j) {
  if (!j.is_array()) throw MessageError("user profile must be an array");
  UserProfile u;
  for (const auto& v : j) {
    if (!v.is_number_unsigned()) throw MessageError("profile coordinates must be non-negative");
    u.values.push_back(v.get<std::uint32_t>());
  }
  return u;
}

}  // namespace

FixedLog coarsen(FixedLog v, std::int64_t bucket_width) {
  if (bucket_width <= 1) return v;
  const std::int64_t shifted = v.v + bucket_width / 2;
  std::int64_t q = shifted / bucket_width;
  if (shifted % bucket_width != 0 && shifted < 0) --q;
  return FixedLog{q * bucket_width};
}

RankingPolicy RankingPolicy::from_json(std::string_view text) {
  const json doc = parse_doc(text, "ranking policy");
  RankingPolicy p;
  try {
    p.bucket_width = doc.value("bucket_width", p.bucket_width);
    p.rate_limit_per_day = doc.value("rate_limit_per_day", p.rate_limit_per_day);
    p.k_anon = doc.value("k_anon", p.k_anon);
    p.randomize = doc.value("randomize", p.randomize);
  } catch (const json::exception& e) {
    throw MessageError(std::string("ranking policy: ") + e.what());
  }
  if (p.bucket_width < 1) throw MessageError("bucket_width must be >= 1");
  return p;
}

std::string RankingPolicy::to_json() const {
  json doc;
  doc["bucket_width"] = bucket_width;
  doc["rate_limit_per_day"] = rate_limit_per_day;
  doc["k_anon"] = k_anon;
  doc["randomize"] = randomize;
  return doc.dump();
}

StatsReport aggregate_statistics(const std::vector<StatsContribution>& batch,
                                 std::uint32_t k_anon) {
  struct Acc {
    std::uint32_t n = 0;
    double sum = 0.0;
  };
  std::map<std::tuple<std::string, std::uint32_t, std::uint32_t>, Acc> cells;
  for (const auto& c : batch) {
    for (const auto& obs : c.observations) {
      for (std::uint32_t i = 0; i < c.u.values.size(); ++i) {
        auto& acc = cells[{obs.id_p, i, c.u.values[i]}];
        ++acc.n;
        acc.sum += obs.ctr;
      }
    }
  }
  StatsReport report;
  for (const auto& [key, acc] : cells) {
    if (acc.n < k_anon) {
      ++report.suppressed_cells;
      continue;
    }
    const auto& [id_p, attr, value] = key;
    report.cells.push_back({id_p, attr, value, acc.n, acc.sum / acc.n});
  }
  return report;
}

std::string StatsReport::to_json() const {
  json doc;
  json arr = json::array();
  for (const auto& c : cells) {
    arr.push_back({{"id_P", c.id_p},
                   {"attr", c.attribute},
                   {"value", c.value},
                   {"n", c.contributors},
                   {"mean_ctr", c.mean_ctr}});
  }
  doc["cells"] = std::move(arr);
  doc["suppressed"] = suppressed_cells;
  return doc.dump();
}

StatsReport StatsReport::from_json(std::string_view text) {
  const json doc = parse_doc(text, "stats report");
  StatsReport r;
  try {
    for (const auto& c : doc.at("cells")) {
      r.cells.push_back({c.at("id_P").get<std::string>(), c.at("attr").get<std::uint32_t>(),
                         c.at("value").get<std::uint32_t>(), c.at("n").get<std::uint32_t>(),
                         c.at("mean_ctr").get<double>()});
    }
    r.suppressed_cells = doc.at("suppressed").get<std::uint32_t>();
  } catch (const json::exception& e) {
    throw MessageError(std::string("stats report: ") + e.what());
  }
  return r;
}

std::string serialize(const RankingRequest& req) {
  json doc;
  doc["u"] = profile_json(req.u);
  json entries = json::array();
  for (const auto& e : req.entries) {
    json j;
    j["id_P"] = e.id_p;
    j["score"] = hcrypt::ciphertext_to_base64(e.score);
    if (!e.pairs.empty()) {
      json pairs = json::array();
      for (const auto& [i, k] : e.pairs) pairs.push_back({i, k});
      j["pairs"] = std::move(pairs);
    }
    if (e.u) j["u"] = profile_json(*e.u);
    entries.push_back(std::move(j));
  }
  doc["entries"] = std::move(entries);
  return doc.dump();
}

RankingRequest parse_ranking_request(std::string_view text) {
  const json doc = parse_doc(text, "ranking request");
  RankingRequest req;
  try {
    req.u = profile_from(doc.at("u"));
    for (const auto& j : doc.at("entries")) {
      RankingEntry e;
      e.id_p = j.at("id_P").get<std::string>();
      e.score = hcrypt::ciphertext_from_base64(j.at("score").get<std::string>());
      if (auto it = j.find("pairs"); it != j.end()) {
        for (const auto& p : *it) {
          if (!p.is_array() || p.size() != 2) throw MessageError("pair must have two indices");
          e.pairs.emplace_back(p[0].get<std::uint32_t>(), p[1].get<std::uint32_t>());
        }
      }
      if (auto it = j.find("u"); it != j.end()) e.u = profile_from(*it);
      req.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw MessageError(std::string("ranking request: ") + e.what());
  } catch (const hcrypt::HcryptError& e) {
    throw MessageError(std::string("ranking request: ") + e.what());
  }
  return req;
}

std::string serialize(const RankOutcome& outcome) {
  json doc;
  if (const auto* denied = std::get_if<RankingDenied>(&outcome)) {
    doc["denied"] = {{"retry_after_ms", denied->retry_after_ms}};
    return doc.dump();
  }
  const auto& resp = std::get<RankingResponse>(outcome);
  json ranked = json::array();
  for (const auto& r : resp.ranked)
    ranked.push_back({{"id_P", r.id_p}, {"score", hcrypt::ciphertext_to_base64(r.bid_score)}});
  doc["ranked"] = std::move(ranked);
  doc["dropped"] = resp.dropped;
  return doc.dump();
}

RankOutcome parse_rank_outcome(std::string_view text) {
  const json doc = parse_doc(text, "ranking response");
  try {
    if (auto it = doc.find("denied"); it != doc.end())
      return RankingDenied{it->at("retry_after_ms").get<TimeMs>()};
    RankingResponse resp;
    for (const auto& r : doc.at("ranked")) {
      resp.ranked.push_back({r.at("id_P").get<std::string>(),
                             hcrypt::ciphertext_from_base64(r.at("score").get<std::string>())});
    }
    resp.dropped = doc.at("dropped").get<std::vector<std::string>>();
    return resp;
  } catch (const json::exception& e) {
    throw MessageError(std::string("ranking response: ") + e.what());
  } catch (const hcrypt::HcryptError& e) {
    throw MessageError(std::string("ranking response: ") + e.what());
  }
}

std::string serialize(const StatsContribution& c) {
  json doc;
  doc["u"] = profile_json(c.u);
  json obs = json::array();
  for (const auto& o : c.observations) obs.push_back({{"id_P", o.id_p}, {"ctr", o.ctr}});
  doc["obs"] = std::move(obs);
  return doc.dump();
}

StatsContribution parse_stats_contribution(std::string_view text) {
  const json doc = parse_doc(text, "stats contribution");
  StatsContribution c;
  try {
    c.u = profile_from(doc.at("u"));
    for (const auto& o : doc.at("obs"))
      c.observations.push_back({o.at("id_P").get<std::string>(), o.at("ctr").get<double>()});
  } catch (const json::exception& e) {
    throw MessageError(std::string("stats contribution: ") + e.what());
  }
  return c;
}

SealedChannelMessage seal_for_service(std::string_view plaintext, const hcrypt::PublicKey& sc_key,
                                      std::string_view context) {
  SealedChannelMessage out{hcrypt::SessionKey::random(), {}};
  json doc;
  doc["skey"] = hcrypt::base64_encode(hcrypt::seal_session_key(out.key, sc_key));
  doc["body"] = hcrypt::base64_encode(hcrypt::aead_seal(hcrypt::as_bytes(plaintext), out.key, context));
  out.wire = doc.dump();
  return out;
}

std::optional<RankOutcome> open_rank_response(std::string_view wire,
                                              const hcrypt::SessionKey& key) {
  try {
    const json doc = parse_doc(wire, "sealed ranking response");
    const auto body = hcrypt::base64_decode(doc.at("body").get<std::string>());
    auto plain = hcrypt::aead_open(body, key, hcrypt::context::kRankingResponse);
    if (!plain) return std::nullopt;
    return parse_rank_outcome(hcrypt::to_string(*plain));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

RankingService::RankingService(std::string id_r, catalog::AttributeSchema schema,
                               hcrypt::MasterSecret master, RankingPolicy policy,
                               hcrypt::KeyPair channel_keys, std::uint64_t seed)
    : id_r_(std::move(id_r)),
      schema_(std::move(schema)),
      master_(master),
      policy_(policy),
      channel_keys_(channel_keys),
      rng_(seed) {
  if (policy_.bucket_width < 1) throw std::invalid_argument("bucket_width must be >= 1");
}

RateDecision RankingService::check_rate_limit(std::string_view client_channel_id, TimeMs now) {
  std::lock_guard lock(mu_);
  const std::int64_t day = day_of(now);
  auto it = rate_table_.find(client_channel_id);
  if (it == rate_table_.end())
    it = rate_table_.emplace(std::string(client_channel_id), std::make_pair(day, 0u)).first;
  auto& [counter_day, count] = it->second;
  if (counter_day != day) {
    counter_day = day;
    count = 0;
  }
  if (count >= policy_.rate_limit_per_day) return {false, next_midnight(now) - now};
  ++count;
  return {true, 0};
}

std::optional<FixedLog> RankingService::decrypt_score(const RankingEntry& e,
                                                      const UserProfile& u) const {
  if (!catalog::validate_user_profile(u, schema_).empty()) return std::nullopt;
  if (e.id_p.empty()) return std::nullopt;
  try {
    hcrypt::Keystream k = catalog::pis_key(master_, e.id_p);
    for (std::uint32_t i = 0; i < u.values.size(); ++i)
      k = hcrypt::add_keys(k, catalog::factor_key(master_, e.id_p, i, u.values[i]));
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto& [i, j] : e.pairs) {
      if (i >= j || j >= schema_.size() || !seen.emplace(i, j).second) return std::nullopt;
      k = hcrypt::add_keys(k, catalog::coeff_key(master_, e.id_p, i, j, u.values[i], u.values[j]));
    }
    const std::int64_t v = hcrypt::dec(e.score, k);
    if (v >= kMaxScoreMagnitude || v <= -kMaxScoreMagnitude) return std::nullopt;
    return FixedLog{v};
  } catch (const hcrypt::HcryptError&) {
    return std::nullopt;
  }
}

RankOutcome RankingService::rank(const RankingRequest& req, TimeMs now) {
  if (auto d = check_rate_limit(req.client_channel_id, now); !d.allowed)
    return RankingDenied{d.retry_after_ms};

  struct Scored {
    std::string id_p;
    FixedLog coarse;
  };
  std::vector<Scored> scored;
  RankingResponse resp;
  std::set<std::string, std::less<>> ids;
  for (const auto& e : req.entries) {
    if (!ids.insert(e.id_p).second) {
      resp.dropped.push_back(e.id_p);
      continue;
    }
    auto v = decrypt_score(e, e.u ? *e.u : req.u);
    if (!v) {
      resp.dropped.push_back(e.id_p);
      continue;
    }
    scored.push_back({e.id_p, coarsen(*v, policy_.bucket_width)});
  }

  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.coarse != b.coarse) return a.coarse > b.coarse;
    return a.id_p < b.id_p;
  });

  if (policy_.randomize) {
    std::lock_guard lock(mu_);
    for (auto first = scored.begin(); first != scored.end();) {
      auto last = std::find_if(first, scored.end(),
                               [&](const Scored& s) { return s.coarse != first->coarse; });
      std::shuffle(first, last, rng_);
      first = last;
    }
  }

  resp.ranked.reserve(scored.size());
  for (const auto& s : scored) {
    resp.ranked.push_back(
        {s.id_p, hcrypt::enc(s.coarse.v, catalog::bid_key(master_, s.id_p))});
  }
  return resp;
}

std::string RankingService::open_channel(std::string_view wire, std::string_view context,
                                         hcrypt::SessionKey& key_out) const {
  json doc = parse_doc(wire, "sealed channel message");
  hcrypt::Bytes skey;
  hcrypt::Bytes body;
  try {
    skey = hcrypt::base64_decode(doc.at("skey").get<std::string>());
    body = hcrypt::base64_decode(doc.at("body").get<std::string>());
  } catch (const std::exception& e) {
    throw MessageError(std::string("sealed channel message: ") + e.what());
  }
  auto key = hcrypt::open_session_key(skey, channel_keys_);
  if (!key) throw MessageError("sealed channel message: session key does not open");
  auto plain = hcrypt::aead_open(body, *key, context);
  if (!plain) throw MessageError("sealed channel message: body fails authentication");
  key_out = *key;
  return hcrypt::to_string(*plain);
}

std::string RankingService::handle_sealed_rank(std::string_view wire,
                                               std::string_view client_channel_id, TimeMs now) {
  hcrypt::SessionKey key;
  RankingRequest req = parse_ranking_request(open_channel(wire, hcrypt::context::kRankingRequest, key));
  req.client_channel_id = std::string(client_channel_id);
  const std::string plain = serialize(rank(req, now));
  json doc;
  doc["body"] = hcrypt::base64_encode(
      hcrypt::aead_seal(hcrypt::as_bytes(plain), key, hcrypt::context::kRankingResponse));
  return doc.dump();
}

void RankingService::handle_sealed_stats(std::string_view wire) {
  hcrypt::SessionKey key;
  StatsContribution c = parse_stats_contribution(open_channel(wire, hcrypt::context::kStatsContribution, key));
  std::lock_guard lock(mu_);
  stats_batch_.push_back(std::move(c));
}

StatsReport RankingService::release_statistics() {
  std::vector<StatsContribution> batch;
  {
    std::lock_guard lock(mu_);
    batch.swap(stats_batch_);
  }
  return aggregate_statistics(batch, policy_.k_anon);
}

std::size_t RankingService::pending_contributions() const {
  std::lock_guard lock(mu_);
  return stats_batch_.size();
}

}  // namespace pprt::ranking
