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

// Plaintext reference for the auction path. Uses nothing from
// the encrypted pipeline.

#include <algorithm>
#include <cmath>

#include "pprt/simnet.hpp"

namespace pprt::simnet {
namespace {

std::string domain_of(std::string_view url) {
  if (auto p = url.find("://"); p != std::string_view::npos) url.remove_prefix(p + 3);
  return std::string(url.substr(0, url.find_first_of("/?#:")));
}

double quality_of(const OracleMarket& market, const std::string& id_r, std::string_view page) {
  auto r = market.page_quality.find(id_r);
  if (r == market.page_quality.end()) return 1.0;
  auto d = r->second.find(domain_of(page));
  return d == r->second.end() ? 1.0 : d->second;
}

double multiplier_product(const OracleStoredProduct& s) {
  double x = 1.0;
  const auto& p = *s.product;
  for (std::size_t i = 0; i < p.factors.size(); ++i) x *= p.factors[i][s.u.values[i]];
  for (const auto& c : p.coefficients) x *= c.table[s.u.values[c.attr_i]][s.u.values[c.attr_j]];
  return x;
}

}  // namespace

std::int64_t oracle_log_term(double x) { return std::llround(std::log(x) * 1e6); }

std::int64_t oracle_score(const OracleStoredProduct& s) {
  const auto& p = *s.product;
  std::int64_t v = oracle_log_term(static_cast<double>(s.recorded_pis_micros));
  for (std::size_t i = 0; i < p.factors.size(); ++i)
    v += oracle_log_term(p.factors[i][s.u.values[i]]);
  for (const auto& c : p.coefficients)
    v += oracle_log_term(c.table[s.u.values[c.attr_i]][s.u.values[c.attr_j]]);
  return v;
}

double oracle_float_revenue(const OracleStoredProduct& s, std::int64_t current_pis_micros,
                            double quality) {
  return static_cast<double>(current_pis_micros) * multiplier_product(s) * quality;
}

std::int64_t oracle_coarsen(std::int64_t v, std::int64_t width) {
  if (width <= 1) return v;
  const double q = std::floor((static_cast<double>(v) + static_cast<double>(width) / 2.0) /
                              static_cast<double>(width));
  return static_cast<std::int64_t>(q) * width;
}

std::vector<std::string> oracle_rank(const std::vector<OracleStoredProduct>& stored,
                                     std::int64_t width) {
  std::vector<std::pair<std::int64_t, std::string>> scored;
  for (const auto& s : stored) {
    const std::int64_t raw = s.ranked_score ? *s.ranked_score : oracle_score(s);
    scored.emplace_back(oracle_coarsen(raw, width), s.product->id_p);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (auto& [_, id] : scored) out.push_back(std::move(id));
  return out;
}

OracleAuction run_oracle(const std::vector<OracleStoredProduct>& eligible,
                         std::string_view page_url, const OracleMarket& market) {
  OracleAuction result;
  std::map<std::string, std::vector<const OracleStoredProduct*>> groups;
  for (const auto& s : eligible) groups[s.product->id_r].push_back(&s);

  for (const auto& [id_r, members] : groups) {
    std::vector<OracleStoredProduct> copies;
    for (const auto* m : members) copies.push_back(*m);
    auto order = oracle_rank(copies, market.bucket_width);
    if (order.size() > market.top_m) order.resize(market.top_m);
    result.offered[id_r] = order;

    const double quality = quality_of(market, id_r, page_url);
    const std::int64_t quality_term = oracle_log_term(quality);
    std::optional<std::pair<std::int64_t, std::string>> best;
    const OracleStoredProduct* best_product = nullptr;
    for (const auto& id : order) {
      const auto* s = *std::find_if(members.begin(), members.end(),
                                    [&](const auto* m) { return m->product->id_p == id; });
      const std::int64_t raw = s->ranked_score ? *s->ranked_score : oracle_score(*s);
      const std::int64_t current = market.current_pis_micros.at(id);
      const std::int64_t adjusted = oracle_coarsen(raw, market.bucket_width) +
                                    oracle_log_term(static_cast<double>(current)) -
                                    oracle_log_term(static_cast<double>(s->recorded_pis_micros)) +
                                    quality_term;
      if (!best || adjusted > best->first || (adjusted == best->first && id < best->second)) {
        best = {adjusted, id};
        best_product = s;
      }
    }
    if (!best) continue;
    const std::int64_t revenue = std::llround(std::exp(static_cast<double>(best->first) / 1e6));
    if (revenue < market.retargeter_reserve_micros) continue;
    OracleBid bid;
    bid.id_r = id_r;
    bid.id_p = best->second;
    bid.revenue_micros = revenue;
    bid.price_micros = std::llround(market.alpha * static_cast<double>(revenue));
    bid.float_revenue = oracle_float_revenue(
        *best_product, market.current_pis_micros.at(best->second), quality);
    if (bid.price_micros < market.exchange_reserve_micros) continue;
    result.bids.push_back(std::move(bid));
  }

  std::sort(result.bids.begin(), result.bids.end(), [](const OracleBid& a, const OracleBid& b) {
    return a.price_micros != b.price_micros ? a.price_micros > b.price_micros : a.id_r < b.id_r;
  });
  if (!result.bids.empty()) {
    const auto& w = result.bids.front();
    result.winner = w.id_r;
    result.winning_product = w.id_p;
    result.winner_revenue_micros = w.revenue_micros;
    result.winner_float_revenue = w.float_revenue;
    result.clearing_price_micros =
        result.bids.size() > 1 ? result.bids[1].price_micros : market.exchange_reserve_micros;
  }
  return result;
}

}  // namespace pprt::simnet
