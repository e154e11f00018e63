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

#include "pprt/simnet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "pprt/client_agent.hpp"
#include "pprt/exchange.hpp"
#include "pprt/ranking_service.hpp"
#include "pprt/retargeter.hpp"
#include "pprt/wire.hpp"

namespace pprt::simnet {
namespace {

using json = nlohmann::ordered_json;

// Default-schema attribute positions.
constexpr std::uint32_t kAge = 0;
constexpr std::uint32_t kGender = 1;
constexpr std::uint32_t kLocality = 2;
constexpr std::uint32_t kInterest = 3;
constexpr std::uint32_t kConversion = 4;
constexpr std::uint32_t kFrequency = 5;
constexpr std::uint32_t kLastVisit = 6;

std::string fmt(const char* pattern, unsigned a, unsigned b = 0) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

std::string product_id(unsigned advertiser, unsigned index) {
  return fmt("adv%02u-p%04u", advertiser, index);
}
std::string retargeter_id(unsigned r) { return fmt("ret%02u", r); }
std::string publisher_domain(unsigned p) { return fmt("pub%02u.example", p); }
std::string client_address(unsigned u) { return fmt("10.0.%u.%u", u / 250, u % 250 + 1); }

/// Occurrences of product-id-shaped tokens ("advNN-pNNNN"). The '-' is not
/// in the base64 alphabet, so ciphertext never matches.
std::uint64_t count_taint(std::string_view s) {
  std::uint64_t n = 0;
  auto digit = [](char c) { return c >= '0' && c <= '9'; };
  for (std::size_t pos = s.find("adv"); pos != std::string_view::npos; pos = s.find("adv", pos + 1)) {
    if (pos + 11 > s.size()) break;
    const auto t = s.substr(pos, 11);
    if (digit(t[3]) && digit(t[4]) && t[5] == '-' && t[6] == 'p' && digit(t[7]) && digit(t[8]) &&
        digit(t[9]) && digit(t[10]))
      ++n;
  }
  return n;
}

std::int64_t to_micros(double x) { return std::llround(x * 1e6); }

// Observations of retargeter hosts: (peer address, carries product data).
class ObservationLog {
 public:
  void add(std::string_view route, std::string_view peer, std::string_view body) {
    const bool product_data = route == "/bid" || route == "/ad" || route == "/report" ||
                              count_taint(body) > 0;
    std::lock_guard lock(mu_);
    events_.push_back({std::string(peer), product_data, std::string(route)});
  }
  struct Event {
    std::string peer;
    bool product_data;
    std::string route;
  };
  std::vector<Event> take() {
    std::lock_guard lock(mu_);
    return std::exchange(events_, {});
  }

 private:
  std::mutex mu_;
  std::vector<Event> events_;
};

class ObservingLink : public exchange::BidderLink {
 public:
  ObservingLink(std::shared_ptr<exchange::BidderLink> inner, ObservationLog& log)
      : inner_(std::move(inner)), log_(log) {}
  std::optional<msg::BidResponse> bid(const msg::BidRequest& req, TimeMs now) override {
    log_.add("/bid", "adx", msg::serialize(req));
    return inner_->bid(req, now);
  }
  std::optional<hcrypt::Bytes> fetch_ad(const std::string& ad_url, TimeMs now) override {
    log_.add("/ad", "adx", ad_url);
    return inner_->fetch_ad(ad_url, now);
  }
  void notify_win(const msg::RequestId& rid, std::int64_t price) override {
    log_.add("/win", "adx", msg::to_hex(rid));
    inner_->notify_win(rid, price);
  }
  bool deliver_report(const msg::ForwardedReport& report) override {
    log_.add("/report", "adx", msg::serialize(report));
    return inner_->deliver_report(report);
  }

 private:
  std::shared_ptr<exchange::BidderLink> inner_;
  ObservationLog& log_;
};

/// What a client can reach: the exchange endpoints and ranking services.
class Fabric {
 public:
  virtual ~Fabric() = default;
  virtual std::optional<msg::AdDelivery> ad_request(const msg::AdRequest& req,
                                                    const std::string& addr, TimeMs now) = 0;
  virtual std::optional<hcrypt::Bytes> fetch(const std::string& url, const std::string& addr,
                                             TimeMs now) = 0;
  virtual std::optional<msg::ForwardedReport> report(const msg::RawReport& raw,
                                                     const std::string& addr, TimeMs now) = 0;
  virtual std::optional<std::string> rank(const std::string& url, const std::string& body,
                                          const std::string& addr, TimeMs now) = 0;
  virtual std::vector<std::pair<std::string, std::string>> trace(
      const std::vector<std::string>& ids, TimeMs now) = 0;
};

class InProcessFabric : public Fabric {
 public:
  InProcessFabric(exchange::Exchange& ex, std::map<std::string, ranking::RankingService*> rankers,
                  ObservationLog& log)
      : ex_(ex), rankers_(std::move(rankers)), log_(log) {}

  std::optional<msg::AdDelivery> ad_request(const msg::AdRequest& req, const std::string& addr,
                                            TimeMs now) override {
    // Same bytes as on the wire.
    return ex_.handle_ad_request(msg::parse_ad_request(msg::serialize(req)), addr, now);
  }
  std::optional<hcrypt::Bytes> fetch(const std::string& url, const std::string&,
                                     TimeMs now) override {
    return ex_.proxy_fetch_ad(url, now);
  }
  std::optional<msg::ForwardedReport> report(const msg::RawReport& raw, const std::string& addr,
                                             TimeMs now) override {
    return ex_.anonymize_report(raw, addr, now);
  }
  std::optional<std::string> rank(const std::string& url, const std::string& body,
                                  const std::string& addr, TimeMs now) override {
    auto it = rankers_.find(url);
    if (it == rankers_.end()) return std::nullopt;
    log_.add("/rank", addr, body);
    try {
      return it->second->handle_sealed_rank(body, addr, now);
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
  }
  std::vector<std::pair<std::string, std::string>> trace(const std::vector<std::string>& ids,
                                                         TimeMs now) override {
    return ex_.trace_click_fraud(ids, now);
  }

 private:
  exchange::Exchange& ex_;
  std::map<std::string, ranking::RankingService*> rankers_;
  ObservationLog& log_;
};

class WireFabric : public Fabric {
 public:
  explicit WireFabric(std::string exchange_url) : client_(std::move(exchange_url)) {}
  std::optional<msg::AdDelivery> ad_request(const msg::AdRequest& req, const std::string& addr,
                                            TimeMs now) override {
    return client_.ad_request(req, addr, now);
  }
  std::optional<hcrypt::Bytes> fetch(const std::string& url, const std::string& addr,
                                     TimeMs now) override {
    return client_.fetch(url, addr, now);
  }
  std::optional<msg::ForwardedReport> report(const msg::RawReport& raw, const std::string& addr,
                                             TimeMs now) override {
    return client_.report(raw, addr, now);
  }
  std::optional<std::string> rank(const std::string& url, const std::string& body,
                                  const std::string& addr, TimeMs now) override {
    return wire::post_rank(url, body, addr, now);
  }
  std::vector<std::pair<std::string, std::string>> trace(const std::vector<std::string>& ids,
                                                         TimeMs now) override {
    return client_.trace(ids, now);
  }

 private:
  wire::ExchangeClient client_;
};

struct MirrorEntry {
  OracleStoredProduct stored;
  bool sensitive = false;
  std::uint32_t visits = 0;
  std::uint32_t conversion = 0;
};

struct SimUser {
  std::string addr;
  catalog::UserProfile base;
  std::vector<unsigned> favourite_advertisers;
  std::unique_ptr<client::ClientAgent> agent;
  std::map<std::string, MirrorEntry> mirror;
  std::map<std::string, std::uint32_t> shown_today;
  std::map<std::string, std::int64_t> capped_on_day;
  bool fraud_done = false;
};

enum class EventKind { kVisit = 0, kAdRequest = 1 };

struct Event {
  TimeMs t;
  std::uint32_t user;
  EventKind kind;
  std::uint32_t seq;
  bool operator<(const Event& o) const {
    return std::tie(t, user, kind, seq) < std::tie(o.t, o.user, o.kind, o.seq);
  }
};

class Simulation {
 public:
  explicit Simulation(const ScenarioConfig& cfg)
      : cfg_(cfg), schema_(catalog::AttributeSchema::default_schema()), rng_(cfg.seed) {}

  RunMetrics run();

 private:
  void build_parties();
  void build_catalog();
  void build_users();
  std::string ranking_url(unsigned r) const;

  void visit(SimUser& user, TimeMs t);
  void ad_request(SimUser& user, TimeMs t, std::int64_t day);
  void refresh_rankings(SimUser& user, TimeMs t);
  void midday_cpc_update();
  void end_of_day(TimeMs t);
  void check_ad_request(const msg::AdRequest& req);
  void drain_observations();
  void taint_scan(std::string_view where, std::string_view bytes);
  void violation(std::uint64_t HygieneReport::*counter, std::string sample);

  std::uint64_t u64(std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng_);
  }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p) { return p > 0 && std::bernoulli_distribution(std::min(p, 1.0))(rng_); }

  ScenarioConfig cfg_;
  catalog::AttributeSchema schema_;
  std::mt19937_64 rng_;
  RunMetrics m_;

  std::vector<std::string> retargeter_ids_;
  std::vector<std::unique_ptr<retargeter::Retargeter>> retargeters_;
  std::vector<std::unique_ptr<ranking::RankingService>> rankers_;
  std::vector<std::unique_ptr<wire::HttpServer>> servers_;
  std::unique_ptr<exchange::Exchange> exchange_;
  std::unique_ptr<Fabric> fabric_;
  ObservationLog observations_;

  std::map<std::string, OracleProduct> products_;
  std::vector<std::vector<std::string>> by_advertiser_;
  std::map<std::string, catalog::ProductProfileEnc> published_;
  OracleMarket market_;

  std::vector<SimUser> users_;
  std::set<std::string> client_addrs_;
  std::set<std::string> seen_rids_;
  std::set<std::string> seen_blobs_;
  std::set<std::string> suspects_;
  std::map<std::string, std::uint64_t> traced_by_addr_;
  std::map<std::tuple<std::uint32_t, std::int64_t, std::string>, std::uint32_t> shown_per_day_;
  double clearing_sum_ = 0.0;
  std::uint64_t won_auctions_ = 0;
};

std::string Simulation::ranking_url(unsigned r) const {
  if (cfg_.mode == Mode::kWire) return servers_.at(r)->base_url() + "/rank";
  return "https://" + retargeter_ids_[r] + ".rank.example/rank";
}

void Simulation::build_parties() {
  exchange::ExchangeConfig xcfg;
  xcfg.reserve_micros = cfg_.exchange_reserve_micros;
  xcfg.report_ttl_ms = cfg_.report_ttl_ms;

  std::unique_ptr<wire::HttpServer> exchange_server;
  if (cfg_.mode == Mode::kWire) {
    exchange_server = std::make_unique<wire::HttpServer>();
    exchange_server->bind();
    xcfg.proxy_base = exchange_server->base_url();
  }
  exchange_ = std::make_unique<exchange::Exchange>(xcfg);

  ranking::RankingPolicy policy;
  policy.bucket_width = cfg_.bucket_width;
  policy.rate_limit_per_day = cfg_.rate_limit_per_day;
  policy.randomize = cfg_.randomize_ties;

  std::map<std::string, ranking::RankingService*> ranker_by_url;
  for (unsigned r = 0; r < cfg_.num_retargeters; ++r) {
    const std::string id = retargeter_ids_.emplace_back(retargeter_id(r));
    std::array<std::uint8_t, 32> seed{};
    for (auto& b : seed) b = static_cast<std::uint8_t>(u64(0, 255));
    hcrypt::MasterSecret master;
    for (auto& b : master.bytes) b = static_cast<std::uint8_t>(u64(0, 255));
    std::array<std::uint8_t, 32> sc_seed{};
    for (auto& b : sc_seed) b = static_cast<std::uint8_t>(u64(0, 255));

    retargeter::RetargeterConfig rcfg;
    rcfg.alpha = cfg_.alpha;
    rcfg.reserve_micros = cfg_.retargeter_reserve_micros;
    retargeters_.push_back(std::make_unique<retargeter::Retargeter>(
        id, schema_, master, hcrypt::KeyPair::from_seed(seed), rcfg));
    rankers_.push_back(std::make_unique<ranking::RankingService>(
        id, schema_, master, policy, hcrypt::KeyPair::from_seed(sc_seed), cfg_.seed + r));

    exchange::RegistryEntry entry{"", retargeters_.back()->public_key()};
    std::shared_ptr<exchange::BidderLink> link;
    if (cfg_.mode == Mode::kWire) {
      auto server = std::make_unique<wire::HttpServer>();
      server->bind();
      wire::mount_retargeter(*server, *retargeters_.back(), *rankers_.back(),
                             [this](std::string_view route, std::string_view peer,
                                    std::string_view body) { observations_.add(route, peer, body); });
      server->start();
      entry.endpoint = server->base_url();
      link = std::make_shared<wire::HttpBidderLink>(entry.endpoint);
      servers_.push_back(std::move(server));
    } else {
      entry.endpoint = "https://" + id + ".rtb.example";
      link = std::make_shared<ObservingLink>(
          std::make_shared<exchange::LocalBidderLink>(*retargeters_.back()), observations_);
    }
    exchange_->register_bidder(id, entry, link);
    ranker_by_url[ranking_url(r)] = rankers_.back().get();
  }

  if (cfg_.mode == Mode::kWire) {
    wire::mount_exchange(*exchange_server, *exchange_);
    exchange_server->start();
    fabric_ = std::make_unique<WireFabric>(exchange_server->base_url());
    servers_.push_back(std::move(exchange_server));
  } else {
    fabric_ = std::make_unique<InProcessFabric>(*exchange_, ranker_by_url, observations_);
  }
}

void Simulation::build_catalog() {
  market_.alpha = cfg_.alpha;
  market_.retargeter_reserve_micros = cfg_.retargeter_reserve_micros;
  market_.exchange_reserve_micros = cfg_.exchange_reserve_micros;
  market_.bucket_width = cfg_.bucket_width;
  market_.top_m = cfg_.top_m;

  const std::uint32_t factor_attrs[] = {kGender, kAge, kInterest, kConversion, kFrequency,
                                        kLastVisit};
  by_advertiser_.resize(cfg_.num_advertisers);
  for (unsigned a = 0; a < cfg_.num_advertisers; ++a) {
    const unsigned r = a % cfg_.num_retargeters;
    for (unsigned i = 0; i < cfg_.products_per_advertiser; ++i) {
      catalog::ProductSpec spec;
      spec.id_p = product_id(a, i);
      spec.id_r = retargeter_ids_[r];
      spec.ctr_default = std::round(real(cfg_.ctr_min, cfg_.ctr_max) * 1e6) / 1e6;
      spec.cpc_micros = static_cast<std::int64_t>(u64(cfg_.cpc_min_micros, cfg_.cpc_max_micros));
      spec.ranking_url = ranking_url(r);

      OracleProduct op;
      op.id_p = spec.id_p;
      op.id_r = spec.id_r;
      op.ctr = spec.ctr_default;
      op.cpc_micros = spec.cpc_micros;
      for (std::size_t k = 0; k < schema_.size(); ++k)
        op.factors.emplace_back(schema_[k].cardinality, 1.0);
      for (auto attr : factor_attrs) {
        auto& slots = spec.factors[attr];
        for (std::uint32_t v = 0; v < schema_[attr].cardinality; ++v) {
          const std::int64_t micros = to_micros(real(cfg_.factor_min, cfg_.factor_max));
          slots.push_back(micros);
          op.factors[attr][v] = static_cast<double>(micros) / 1e6;
        }
      }
      // A few local markets matter.
      auto& loc = spec.factors[kLocality];
      loc.assign(8, catalog::kMicrosPerUnit);
      for (int n = 0; n < 3; ++n) {
        const auto slot = u64(0, 7);
        loc[slot] = to_micros(real(cfg_.factor_min, cfg_.factor_max));
        op.factors[kLocality][slot] = static_cast<double>(loc[slot]) / 1e6;
      }
      if (coin(cfg_.coefficient_rate)) {
        catalog::CoefficientTable t;
        t.attr_i = kAge;
        t.attr_j = kGender;
        t.rows = schema_[kAge].cardinality;
        t.cols = schema_[kGender].cardinality;
        OracleProduct::Coefficient oc{kAge, kGender, {}};
        oc.table.assign(t.rows, std::vector<double>(t.cols, 1.0));
        for (std::uint32_t x = 0; x < t.rows; ++x) {
          for (std::uint32_t y = 0; y < t.cols; ++y) {
            const std::int64_t micros = to_micros(real(0.8, 1.25));
            t.values.push_back(micros);
            oc.table[x][y] = static_cast<double>(micros) / 1e6;
          }
        }
        spec.coefficients.push_back(std::move(t));
        op.coefficients.push_back(std::move(oc));
      }

      auto clear = catalog::build_product_profile_clear(spec, schema_);
      market_.current_pis_micros[spec.id_p] = std::llround(op.ctr * static_cast<double>(op.cpc_micros));
      retargeters_[r]->add_product(std::move(clear));
      by_advertiser_[a].push_back(spec.id_p);
      products_.emplace(spec.id_p, std::move(op));
    }
  }

  for (unsigned r = 0; r < cfg_.num_retargeters; ++r) {
    std::vector<unsigned> domains(cfg_.num_publishers);
    for (unsigned p = 0; p < cfg_.num_publishers; ++p) domains[p] = p;
    std::shuffle(domains.begin(), domains.end(), rng_);
    for (unsigned n = 0; n < cfg_.quality_domains; ++n) {
      const std::int64_t micros = to_micros(real(0.7, 1.3));
      const std::string domain = publisher_domain(domains[n]);
      retargeters_[r]->set_page_quality(domain, micros);
      market_.page_quality[retargeter_ids_[r]][domain] = static_cast<double>(micros) / 1e6;
    }
    for (auto& enc : retargeters_[r]->publish_feed()) published_[enc.id_p] = std::move(enc);
  }
  for (const auto& [_, enc] : published_) m_.profile_bytes.add(catalog::serialize_profile(enc).size());
}

void Simulation::build_users() {
  for (unsigned u = 0; u < cfg_.num_users; ++u) {
    SimUser user;
    user.addr = client_address(u);
    client_addrs_.insert(user.addr);
    user.base.values.assign(schema_.size(), 0);
    for (const auto a : {kGender, kAge, kInterest})
      user.base.values[a] = static_cast<std::uint32_t>(u64(0, schema_[a].cardinality - 1));
    user.base.values[kLocality] = static_cast<std::uint32_t>(u64(0, 7));
    for (int f = 0; f < 3; ++f)
      user.favourite_advertisers.push_back(static_cast<unsigned>(u64(0, cfg_.num_advertisers - 1)));

    client::ClientConfig ccfg;
    ccfg.store_cap = cfg_.store_cap;
    ccfg.top_m = cfg_.top_m;
    ccfg.freq_cap = cfg_.freq_cap;
    ccfg.jitter_max_ms = cfg_.jitter_max_ms;
    ccfg.batch_min = cfg_.batch_min;
    ccfg.seed = cfg_.seed * 1'000'003 + u;
    user.agent = std::make_unique<client::ClientAgent>(schema_, ccfg);
    for (unsigned r = 0; r < cfg_.num_retargeters; ++r) {
      user.agent->register_retargeter(retargeter_ids_[r], retargeters_[r]->public_key());
      user.agent->register_ranking_service(ranking_url(r), rankers_[r]->channel_public_key());
    }
    users_.push_back(std::move(user));
  }
}

void Simulation::violation(std::uint64_t HygieneReport::*counter, std::string sample) {
  ++(m_.hygiene.*counter);
  if (m_.hygiene.samples.size() < 20) m_.hygiene.samples.push_back(std::move(sample));
}

void Simulation::taint_scan(std::string_view where, std::string_view bytes) {
  ++m_.hygiene.checks;
  if (auto n = count_taint(bytes); n > 0)
    violation(&HygieneReport::exchange_taint,
              std::string(where) + ": " + std::to_string(n) + " product id token(s)");
}

void Simulation::drain_observations() {
  for (const auto& e : observations_.take()) {
    ++m_.hygiene.checks;
    if (e.product_data && client_addrs_.contains(e.peer))
      violation(&HygieneReport::retargeter_coobservation,
                "retargeter saw " + e.peer + " with product data on " + e.route);
  }
}

void Simulation::check_ad_request(const msg::AdRequest& req) {
  const std::string text = msg::serialize(req);
  m_.ad_request_bytes.add(text.size());
  taint_scan("ad request", text);
  ++m_.hygiene.checks;
  const json doc = json::parse(text);
  std::vector<std::string> keys;
  for (const auto& [k, _] : doc.items()) keys.push_back(k);
  if (keys != std::vector<std::string>{"rid", "page", "entries"})
    violation(&HygieneReport::stable_identifier, "ad request has unexpected fields");
  for (const auto& e : doc.at("entries")) {
    std::vector<std::string> ek;
    for (const auto& [k, _] : e.items()) ek.push_back(k);
    if (ek != std::vector<std::string>{"id_R", "skey", "payload"})
      violation(&HygieneReport::stable_identifier, "ad request entry has unexpected fields");
    for (const char* f : {"skey", "payload"}) {
      if (!seen_blobs_.insert(e.at(f).get<std::string>()).second)
        violation(&HygieneReport::stable_identifier, std::string("repeated ") + f);
    }
  }
  if (!seen_rids_.insert(doc.at("rid").get<std::string>()).second)
    violation(&HygieneReport::stable_identifier, "repeated request id");
}

void Simulation::visit(SimUser& user, TimeMs t) {
  const unsigned adv = coin(0.8)
                           ? user.favourite_advertisers[u64(0, user.favourite_advertisers.size() - 1)]
                           : static_cast<unsigned>(u64(0, cfg_.num_advertisers - 1));
  const auto& ids = by_advertiser_[adv];
  const std::string& id_p = ids[u64(0, ids.size() - 1)];
  const auto& profile = published_.at(id_p);
  const bool sensitive = coin(cfg_.sensitive_rate);

  auto& entry = user.mirror[id_p];
  if (entry.visits == 0) entry.conversion = coin(0.1) ? static_cast<std::uint32_t>(u64(1, 4)) : 0;
  ++entry.visits;
  catalog::UserProfile u = user.base;
  u.values[kConversion] = entry.conversion;
  u.values[kFrequency] = std::min<std::uint32_t>(entry.visits - 1, 4);
  u.values[kLastVisit] = 0;

  user.agent->record_product(profile, u, t, sensitive);
  ++m_.visits;

  entry.stored.product = &products_.at(id_p);
  entry.stored.u = u;
  entry.stored.recorded_pis_micros = market_.current_pis_micros.at(id_p);
  entry.sensitive = entry.sensitive || sensitive;
}

void Simulation::refresh_rankings(SimUser& user, TimeMs t) {
  for (const auto& id_r : user.agent->retargeters_with_pending(t)) {
    auto sender = [&](const std::string& url, const std::string& body,
                      TimeMs send_at) -> std::optional<std::string> {
      m_.ranking_request_bytes.add(body.size());
      return fabric_->rank(url, body, user.addr, send_at);
    };
    const auto result = user.agent->request_ranking(id_r, t, sender);
    if (result.status == client::RankingStatus::kNothingToRank) continue;
    ++m_.ranking_requests;
    if (result.status == client::RankingStatus::kDenied) ++m_.ranking_denied;
    if (result.status != client::RankingStatus::kRanked) continue;
    for (auto& [id_p, e] : user.mirror) {
      if (e.stored.product == nullptr || e.stored.product->id_r != id_r) continue;
      if (e.sensitive) {
        e.stored.ranked_score.reset();
        continue;
      }
      e.stored.ranked_score = oracle_score(e.stored);
    }
  }
}

void Simulation::ad_request(SimUser& user, TimeMs t, std::int64_t day) {
  refresh_rankings(user, t);
  drain_observations();

  const std::string page = "https://" + publisher_domain(static_cast<unsigned>(
                                            u64(0, cfg_.num_publishers - 1))) +
                           "/article/" + std::to_string(u64(0, 9999));
  ++m_.ad_requests;
  auto out = user.agent->build_ad_request(page, t);

  // Oracle view of the same request.
  std::vector<OracleStoredProduct> eligible;
  for (const auto& [id_p, e] : user.mirror) {
    if (e.sensitive || !e.stored.ranked_score) continue;
    if (user.shown_today[id_p] >= cfg_.freq_cap) continue;
    eligible.push_back(e.stored);
  }
  const OracleAuction expected = run_oracle(eligible, page, market_);

  if (out.request.entries.empty()) {
    ++m_.empty_ad_requests;
    user.agent->forget_request(out.request.rid);
    ++m_.oracle_compared;
    if (expected.offered.empty()) ++m_.oracle_matches;
    return;
  }
  check_ad_request(out.request);

  auto delivery = fabric_->ad_request(out.request, user.addr, out.send_at);
  ++m_.auctions;
  const auto auction = exchange_->auction(out.request.rid);
  if (auction) {
    for (const auto& br : auction->bid_requests) m_.bid_request_bytes.add(msg::serialize(br).size());
  }
  drain_observations();

  std::optional<client::AdView> view;
  if (delivery) {
    taint_scan("ad delivery", msg::serialize(*delivery));
    const std::string proxy_prefix = exchange_->config().proxy_base + "/proxy?";
    view = user.agent->open_delivery(*delivery, [&](const std::string& url) {
      ++m_.hygiene.checks;
      if (url.rfind(proxy_prefix, 0) != 0) {
        violation(&HygieneReport::topology, "client fetch outside the exchange: " + url);
        return std::optional<hcrypt::Bytes>();
      }
      auto bytes = fabric_->fetch(url, user.addr, out.send_at);
      if (bytes) {
        m_.proxied_bytes += bytes->size();
        taint_scan("proxied ad", hcrypt::to_string(*bytes));
      }
      return bytes;
    });
  } else {
    user.agent->forget_request(out.request.rid);
  }
  drain_observations();

  const bool won = auction && auction->winner.has_value();
  if (!won) ++m_.no_bid_auctions;

  // Oracle agreement covers the offered lists as well as the auction outcome.
  ++m_.oracle_compared;
  bool match = auction.has_value();
  if (match) {
    match = out.offered == expected.offered && auction->winner == expected.winner &&
            (!won || auction->clearing_price_micros == expected.clearing_price_micros);
    if (won) match = match && view && view->markup.id_p == expected.winning_product;
  }
  if (match) ++m_.oracle_matches;

  if (won && expected.winner_revenue_micros > 0) {
    const double err = std::fabs(static_cast<double>(expected.winner_revenue_micros) -
                                 expected.winner_float_revenue) /
                       expected.winner_float_revenue;
    m_.max_revenue_rel_error = std::max(m_.max_revenue_rel_error, err);
  }
  if (won) {
    ++m_.wins[*auction->winner];
    clearing_sum_ += static_cast<double>(auction->clearing_price_micros);
    ++won_auctions_;
  }

  if (!view) return;
  const std::string& id_p = view->markup.id_p;
  user.agent->register_ad_impression(id_p);
  const std::uint32_t shown = ++user.shown_today[id_p];
  if (shown >= cfg_.freq_cap) user.capped_on_day.emplace(id_p, day);
  if (auto it = user.capped_on_day.find(id_p); it != user.capped_on_day.end() && it->second < day) {
    ++m_.capped_then_reshown;
    user.capped_on_day.erase(it);
  }
  auto& per_day = shown_per_day_[{static_cast<std::uint32_t>(&user - users_.data()), day, id_p}];
  ++per_day;
  m_.max_impressions_per_product_user_day = std::max(m_.max_impressions_per_product_user_day, per_day);
  ++m_.impressions;

  const std::string& creative = delivery->creative.creative_id;
  fabric_->report({creative, msg::ReportEvent::kImpression, out.send_at, "sim-agent/1.0"},
                  user.addr, out.send_at);
  if (cfg_.clicks && coin(products_.at(id_p).ctr)) {
    ++m_.clicks;
    fabric_->report({creative, msg::ReportEvent::kClick, out.send_at + kSecondMs, "sim-agent/1.0"},
                    user.addr, out.send_at + kSecondMs);
  }
  const bool bot = &user == &users_.back();
  if (bot && cfg_.fraud_clicks > 0 && !user.fraud_done) {
    user.fraud_done = true;
    for (std::uint32_t i = 0; i < cfg_.fraud_clicks; ++i) {
      fabric_->report({creative, msg::ReportEvent::kClick, out.send_at + (i + 2) * kSecondMs,
                       "sim-agent/1.0"},
                      user.addr, out.send_at + (i + 2) * kSecondMs);
    }
  }
  drain_observations();
}

void Simulation::midday_cpc_update() {
  for (unsigned r = 0; r < cfg_.num_retargeters; ++r) {
    const auto feed = retargeters_[r]->snapshot();
    for (const auto& [id_p, _] : feed->products) {
      if (!coin(cfg_.cpc_update_rate)) continue;
      const auto cpc = static_cast<std::int64_t>(u64(cfg_.cpc_min_micros, cfg_.cpc_max_micros));
      retargeters_[r]->update_cpc(id_p, cpc);
      auto& op = products_.at(id_p);
      op.cpc_micros = cpc;
      market_.current_pis_micros[id_p] = std::llround(op.ctr * static_cast<double>(cpc));
    }
    for (auto& enc : retargeters_[r]->publish_feed()) published_[enc.id_p] = std::move(enc);
  }
}

void Simulation::end_of_day(TimeMs t) {
  for (const auto& r : retargeters_) {
    std::vector<std::string> fresh;
    for (auto& id : r->suspected_click_reports())
      if (suspects_.insert(id).second) fresh.push_back(id);
    if (fresh.empty()) continue;
    m_.fraud.suspect_reports += fresh.size();
    for (const auto& [id, addr] : fabric_->trace(fresh, t)) {
      ++m_.fraud.traced_reports;
      ++traced_by_addr_[addr];
    }
  }
  taint_scan("exchange state", exchange_->state_snapshot());
  drain_observations();
}

RunMetrics Simulation::run() {
  const auto start = std::chrono::steady_clock::now();
  build_parties();
  build_catalog();
  build_users();

  for (std::uint32_t day = 0; day < cfg_.days; ++day) {
    const TimeMs day_start = static_cast<TimeMs>(day) * kDayMs;
    if (day > 0) {
      for (auto& u : users_) {
        u.agent->reset_daily_counters();
        u.shown_today.clear();
      }
      exchange_->purge(day_start);
    }

    std::vector<Event> events;
    for (std::uint32_t u = 0; u < users_.size(); ++u) {
      for (std::uint32_t i = 0; i < cfg_.visits_per_user_day; ++i)
        events.push_back({day_start + static_cast<TimeMs>(u64(0, kDayMs - 1)), u, EventKind::kVisit, i});
      for (std::uint32_t i = 0; i < cfg_.ad_requests_per_user_day; ++i)
        events.push_back(
            {day_start + static_cast<TimeMs>(u64(0, kDayMs - 1)), u, EventKind::kAdRequest, i});
    }
    std::sort(events.begin(), events.end());

    bool cpc_updated = false;
    for (const auto& e : events) {
      if (!cpc_updated && e.t >= day_start + kDayMs / 2) {
        midday_cpc_update();
        cpc_updated = true;
      }
      auto& user = users_[e.user];
      if (e.kind == EventKind::kVisit) {
        visit(user, e.t);
      } else {
        ad_request(user, e.t, day);
      }
    }
    end_of_day(day_start + kDayMs - 1);
  }

  for (const auto& id : retargeter_ids_) {
    m_.wins.try_emplace(id, 0);
    m_.win_rates[id] = m_.auctions == 0 ? 0.0 : static_cast<double>(m_.wins[id]) / m_.auctions;
  }
  m_.mean_clearing_price_micros = won_auctions_ == 0 ? 0.0 : clearing_sum_ / won_auctions_;
  m_.oracle_agreement =
      m_.oracle_compared == 0 ? 1.0 : static_cast<double>(m_.oracle_matches) / m_.oracle_compared;

  m_.fraud.distinct_addresses = traced_by_addr_.size();
  std::uint64_t best = 0;
  for (const auto& [addr, n] : traced_by_addr_) {
    if (n > best) {
      best = n;
      m_.fraud.top_address = addr;
    }
  }
  if (m_.fraud.traced_reports > 0)
    m_.fraud.top_address_share = static_cast<double>(best) / m_.fraud.traced_reports;
  m_.fraud.bot_identified = cfg_.fraud_clicks > 0 && m_.fraud.top_address == users_.back().addr;

  for (auto& s : servers_) s->stop();
  m_.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m_;
}

json size_json(const SizeStats& s) {
  return {{"count", s.count}, {"mean", s.mean()}, {"max", s.max_bytes}};
}

Mode mode_from(const std::string& s) {
  if (s == "inproc") return Mode::kInProcess;
  if (s == "wire") return Mode::kWire;
  throw ConfigError("mode must be 'inproc' or 'wire'");
}

}  // namespace

void SizeStats::add(std::uint64_t bytes) {
  ++count;
  total_bytes += bytes;
  max_bytes = std::max(max_bytes, bytes);
}

ScenarioConfig desk_config() { return ScenarioConfig{}; }

void ScenarioConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(num_users >= 1, "num_users must be >= 1");
  require(num_retargeters >= 1 && num_retargeters <= 99, "num_retargeters must be in [1, 99]");
  require(num_advertisers >= 1 && num_advertisers <= 99, "num_advertisers must be in [1, 99]");
  require(products_per_advertiser >= 1 && products_per_advertiser <= 9999,
          "products_per_advertiser must be in [1, 9999]");
  require(days >= 1, "days must be >= 1");
  require(num_publishers >= 1 && num_publishers <= 99, "num_publishers must be in [1, 99]");
  require(quality_domains <= num_publishers, "quality_domains must not exceed num_publishers");
  require(ctr_min > 0 && ctr_min <= ctr_max && ctr_max <= 1, "need 0 < ctr_min <= ctr_max <= 1");
  require(cpc_min_micros >= 1 && cpc_min_micros <= cpc_max_micros, "invalid CPC range");
  require(factor_min > 0 && factor_min <= factor_max, "invalid factor range");
  for (double r : {coefficient_rate, sensitive_rate, cpc_update_rate})
    require(r >= 0 && r <= 1, "rates must be in [0, 1]");
  require(store_cap >= 1, "store_cap must be >= 1");
  require(top_m >= 1, "top_m must be >= 1");
  require(freq_cap >= 1, "freq_cap must be >= 1");
  require(jitter_max_ms >= 0, "jitter_max_ms must be >= 0");
  require(bucket_width >= 1, "bucket_width must be >= 1");
  require(alpha > 0 && alpha <= 1, "alpha must be in (0, 1]");
  require(report_ttl_ms >= 1, "report_ttl_ms must be >= 1");
}

ScenarioConfig ScenarioConfig::from_json(std::string_view text) {
  ScenarioConfig c;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  const json defaults = json::parse(c.to_json());
  for (const auto& [k, _] : doc.items()) {
    if (!defaults.contains(k)) throw ConfigError("config: unknown key '" + k + "'");
  }
  try {
#define PPRT_FIELD(name) c.name = doc.value(#name, c.name)
    PPRT_FIELD(seed);
    PPRT_FIELD(num_users);
    PPRT_FIELD(num_retargeters);
    PPRT_FIELD(num_advertisers);
    PPRT_FIELD(products_per_advertiser);
    PPRT_FIELD(visits_per_user_day);
    PPRT_FIELD(ad_requests_per_user_day);
    PPRT_FIELD(days);
    PPRT_FIELD(num_publishers);
    PPRT_FIELD(ctr_min);
    PPRT_FIELD(ctr_max);
    PPRT_FIELD(cpc_min_micros);
    PPRT_FIELD(cpc_max_micros);
    PPRT_FIELD(factor_min);
    PPRT_FIELD(factor_max);
    PPRT_FIELD(coefficient_rate);
    PPRT_FIELD(sensitive_rate);
    PPRT_FIELD(cpc_update_rate);
    PPRT_FIELD(quality_domains);
    PPRT_FIELD(clicks);
    PPRT_FIELD(fraud_clicks);
    PPRT_FIELD(store_cap);
    PPRT_FIELD(top_m);
    PPRT_FIELD(freq_cap);
    PPRT_FIELD(jitter_max_ms);
    PPRT_FIELD(batch_min);
    PPRT_FIELD(bucket_width);
    PPRT_FIELD(rate_limit_per_day);
    PPRT_FIELD(randomize_ties);
    PPRT_FIELD(alpha);
    PPRT_FIELD(retargeter_reserve_micros);
    PPRT_FIELD(exchange_reserve_micros);
    PPRT_FIELD(report_ttl_ms);
#undef PPRT_FIELD
    if (doc.contains("mode")) c.mode = mode_from(doc.at("mode").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ScenarioConfig::to_json() const {
  json d;
  d["seed"] = seed;
  d["num_users"] = num_users;
  d["num_retargeters"] = num_retargeters;
  d["num_advertisers"] = num_advertisers;
  d["products_per_advertiser"] = products_per_advertiser;
  d["visits_per_user_day"] = visits_per_user_day;
  d["ad_requests_per_user_day"] = ad_requests_per_user_day;
  d["days"] = days;
  d["num_publishers"] = num_publishers;
  d["mode"] = mode == Mode::kWire ? "wire" : "inproc";
  d["ctr_min"] = ctr_min;
  d["ctr_max"] = ctr_max;
  d["cpc_min_micros"] = cpc_min_micros;
  d["cpc_max_micros"] = cpc_max_micros;
  d["factor_min"] = factor_min;
  d["factor_max"] = factor_max;
  d["coefficient_rate"] = coefficient_rate;
  d["sensitive_rate"] = sensitive_rate;
  d["cpc_update_rate"] = cpc_update_rate;
  d["quality_domains"] = quality_domains;
  d["clicks"] = clicks;
  d["fraud_clicks"] = fraud_clicks;
  d["store_cap"] = store_cap;
  d["top_m"] = top_m;
  d["freq_cap"] = freq_cap;
  d["jitter_max_ms"] = jitter_max_ms;
  d["batch_min"] = batch_min;
  d["bucket_width"] = bucket_width;
  d["rate_limit_per_day"] = rate_limit_per_day;
  d["randomize_ties"] = randomize_ties;
  d["alpha"] = alpha;
  d["retargeter_reserve_micros"] = retargeter_reserve_micros;
  d["exchange_reserve_micros"] = exchange_reserve_micros;
  d["report_ttl_ms"] = report_ttl_ms;
  return d.dump(2);
}

std::string RunMetrics::to_json(bool include_timing) const {
  json d;
  d["ad_requests"] = ad_requests;
  d["empty_ad_requests"] = empty_ad_requests;
  d["auctions"] = auctions;
  d["no_bid_auctions"] = no_bid_auctions;
  d["wins"] = wins;
  d["win_rates"] = win_rates;
  d["mean_clearing_price_micros"] = mean_clearing_price_micros;
  d["oracle"] = {{"compared", oracle_compared},
                 {"matches", oracle_matches},
                 {"agreement", oracle_agreement},
                 {"max_revenue_rel_error", max_revenue_rel_error}};
  d["visits"] = visits;
  d["ranking_requests"] = ranking_requests;
  d["ranking_denied"] = ranking_denied;
  d["impressions"] = impressions;
  d["clicks"] = clicks;
  d["max_impressions_per_product_user_day"] = max_impressions_per_product_user_day;
  d["capped_then_reshown"] = capped_then_reshown;
  d["sizes"] = {{"profile", size_json(profile_bytes)},
                {"ad_request", size_json(ad_request_bytes)},
                {"bid_request", size_json(bid_request_bytes)},
                {"ranking_request", size_json(ranking_request_bytes)}};
  d["proxied_bytes"] = proxied_bytes;
  d["hygiene"] = {{"violations", hygiene.violations()},
                  {"checks", hygiene.checks},
                  {"exchange_taint", hygiene.exchange_taint},
                  {"retargeter_coobservation", hygiene.retargeter_coobservation},
                  {"stable_identifier", hygiene.stable_identifier},
                  {"topology", hygiene.topology},
                  {"samples", hygiene.samples}};
  d["fraud"] = {{"suspect_reports", fraud.suspect_reports},
                {"traced_reports", fraud.traced_reports},
                {"distinct_addresses", fraud.distinct_addresses},
                {"top_address", fraud.top_address},
                {"top_address_share", fraud.top_address_share},
                {"bot_identified", fraud.bot_identified}};
  if (include_timing) d["wall_seconds"] = wall_seconds;
  return d.dump(2);
}

std::string RunMetrics::to_csv() const {
  std::ostringstream out;
  out << "metric,value\n";
  std::function<void(const std::string&, const json&)> flatten = [&](const std::string& prefix,
                                                                     const json& j) {
    if (j.is_object()) {
      for (const auto& [k, v] : j.items()) flatten(prefix.empty() ? k : prefix + "." + k, v);
    } else if (j.is_array()) {
      out << prefix << ",\"" << j.size() << " item(s)\"\n";
    } else {
      out << prefix << "," << j.dump() << "\n";
    }
  };
  flatten("", json::parse(to_json()));
  return out.str();
}

RunMetrics run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Simulation sim(cfg);
  return sim.run();
}

}  // namespace pprt::simnet
