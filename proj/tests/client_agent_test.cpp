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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"

namespace pprt::client {
namespace {

using testing::kUser;
using testing::Market;
using testing::schema;

hcrypt::Keystream score_key(const hcrypt::MasterSecret& m, const catalog::ProductProfileEnc& p,
                            const UserProfile& u) {
  hcrypt::Keystream k = catalog::pis_key(m, p.id_p);
  for (std::uint32_t i = 0; i < u.values.size(); ++i)
    k = hcrypt::add_keys(k, catalog::factor_key(m, p.id_p, i, u.values[i]));
  for (const auto& t : p.coefficients)
    k = hcrypt::add_keys(
        k, catalog::coeff_key(m, p.id_p, t.attr_i, t.attr_j, u.values[t.attr_i], u.values[t.attr_j]));
  return k;
}

std::int64_t decoded_score(Market& market, const std::string& id_p, const UserProfile& u) {
  const auto p = market.profile("R1", id_p);
  const auto& master = market.party("R1").retargeter->master();
  return catalog::decode_log(
      catalog::FixedLog{hcrypt::dec(compute_encrypted_score(p, u), score_key(master, p, u))});
}

TEST(Score, UnitFactorsGivePis) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P1");
  const auto p = market.profile("R1", "P1");
  const auto& master = market.party("R1").retargeter->master();
  EXPECT_EQ(hcrypt::dec(compute_encrypted_score(p, kUser), score_key(master, p, kUser)),
            catalog::encode_log(5'000).v);
}

catalog::FactorOverrides worked_factors() {
  // Value 0 of each attribute carries (1.2, 1.1, 1.0, 0.9, 1.5, 1.0, 1.0).
  return {{0, {1'200'000}}, {1, {1'100'000}}, {3, {900'000}}, {4, {1'500'000}}};
}

TEST(Score, WorkedExample) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P1", 0.01, 500'000, worked_factors());
  const UserProfile u{{0, 0, 0, 0, 0, 0, 0}};
  EXPECT_NEAR(decoded_score(market, "P1", u), 8'910, 1);
}

TEST(Score, WorkedExampleWithCoefficient) {
  Market market;
  market.add_retargeter("R1");
  catalog::CoefficientTable t{0, 3, 7, 24, std::vector<std::int64_t>(7 * 24, 1'000'000)};
  t.at(0, 0) = 1'100'000;
  market.add_product("R1", "P1", 0.01, 500'000, worked_factors(), {t});
  const UserProfile u{{0, 0, 0, 0, 0, 0, 0}};
  EXPECT_NEAR(decoded_score(market, "P1", u), 9'801, 1);
}

TEST(Score, ShapeMismatchRejected) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P1");
  auto p = market.profile("R1", "P1");
  EXPECT_THROW(compute_encrypted_score(p, UserProfile{{0, 0, 0}}), ClientError);
  p.factors[0].resize(1);  // kUser picks value 1
  EXPECT_THROW(compute_encrypted_score(p, kUser), ClientError);
  ClientAgent agent(schema(), {});
  EXPECT_THROW(agent.record_product(p, kUser, 0), ClientError);
  EXPECT_THROW(agent.record_product(market.profile("R1", "P1"), UserProfile{{9, 0, 0, 0, 0, 0, 0}}, 0),
               ClientError);
}

TEST(Store, CapEvictsExactlyOne) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P");
  const auto base = market.profile("R1", "P");
  ClientAgent agent(schema(), {});
  for (int i = 0; i < 1000; ++i) {
    auto p = base;
    p.id_p = "P" + std::to_string(10000 + i);
    agent.record_product(p, kUser, i);
  }
  ASSERT_EQ(agent.size(), 1000u);
  auto p = base;
  p.id_p = "Pnew";
  agent.record_product(p, kUser, 5000);
  EXPECT_EQ(agent.size(), 1000u);
  EXPECT_NE(agent.find("Pnew"), nullptr);
  EXPECT_EQ(agent.find("P10000"), nullptr);  // oldest unranked
}

TEST(Store, EvictionPrefersUnrankedThenWorstRank) {
  Market market;
  market.add_retargeter("R1");
  for (const char* id : {"A", "B", "C"}) market.add_product("R1", id);
  ClientConfig cfg;
  cfg.store_cap = 3;
  ClientAgent agent(schema(), cfg);
  market.connect(agent);
  for (const char* id : {"A", "B", "C"}) agent.record_product(market.profile("R1", id), kUser, 0);
  ASSERT_EQ(agent.request_ranking("R1", 0, market.sender()).status, RankingStatus::kRanked);
  market.add_product("R1", "D");
  agent.record_product(market.profile("R1", "D"), kUser, 10);  // evicts C, the worst rank
  EXPECT_EQ(agent.find("C"), nullptr);
  market.add_product("R1", "E");
  agent.record_product(market.profile("R1", "E"), kUser, 20);  // evicts unranked D
  EXPECT_EQ(agent.find("D"), nullptr);
  EXPECT_NE(agent.find("A"), nullptr);
  EXPECT_NE(agent.find("B"), nullptr);
}

TEST(Store, RevisitUpdatesInPlace) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P1");
  ClientAgent agent(schema(), {});
  agent.record_product(market.profile("R1", "P1"), kUser, 100);
  agent.record_product(market.profile("R1", "P1"), kUser, 200);
  EXPECT_EQ(agent.size(), 1u);
  EXPECT_EQ(agent.find("P1")->first_seen, 100);
  EXPECT_EQ(agent.find("P1")->last_seen, 200);
}

TEST(Ranking, PermutationMatchesPlaintextOrder) {
  Market market(ranking::RankingPolicy{1, 100, 20, false});
  market.add_retargeter("R1");
  std::mt19937_64 rng(3);
  std::vector<std::pair<std::int64_t, std::string>> oracle;
  ClientAgent agent(schema(), {});
  market.connect(agent);
  for (int i = 0; i < 100; ++i) {
    const std::string id = "P" + std::to_string(100 + i);
    const double ctr = 0.005 + 0.0005 * static_cast<double>(rng() % 90);
    const std::int64_t cpc = 100'000 + static_cast<std::int64_t>(rng() % 1'900'000);
    const std::int64_t f = 500'000 + static_cast<std::int64_t>(rng() % 1'500'000);
    market.add_product("R1", id, ctr, cpc, {{2, std::vector<std::int64_t>(90, f)}});
    const double pis = std::round(ctr * static_cast<double>(cpc));
    oracle.emplace_back(std::llround(std::log(pis) * 1e6) + std::llround(std::log(f / 1e6) * 1e6), id);
    agent.record_product(market.profile("R1", id), kUser, 0);
  }
  std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  const auto r = agent.request_ranking("R1", 0, market.sender());
  ASSERT_EQ(r.status, RankingStatus::kRanked);
  EXPECT_EQ(r.ranked, 100u);
  for (std::uint32_t i = 0; i < 100; ++i) EXPECT_EQ(agent.find(oracle[i].second)->rank, i);
}

TEST(Ranking, DenialKeepsRanksAndHonoursRetryAfter) {
  Market market(ranking::RankingPolicy{50'000, 1, 20, false});
  market.add_retargeter("R1");
  market.add_product("R1", "P1");
  market.add_product("R1", "P2", 0.02);
  ClientConfig cfg;
  cfg.batch_min = 1;
  cfg.jitter_max_ms = 0;
  ClientAgent agent(schema(), cfg);
  market.connect(agent);
  agent.record_product(market.profile("R1", "P1"), kUser, 0);
  agent.record_product(market.profile("R1", "P2"), kUser, 0);
  ASSERT_EQ(agent.request_ranking("R1", 0, market.sender()).status, RankingStatus::kRanked);
  EXPECT_EQ(agent.find("P2")->rank, 0u);
  market.add_product("R1", "P3", 0.05);
  agent.record_product(market.profile("R1", "P3"), kUser, 1000);
  const auto denied = agent.request_ranking("R1", 1000, market.sender());
  EXPECT_EQ(denied.status, RankingStatus::kDenied);
  EXPECT_EQ(denied.retry_after_ms, kDayMs - 1000);
  EXPECT_EQ(agent.find("P2")->rank, 0u);
  EXPECT_EQ(agent.find("P1")->rank, 1u);
  EXPECT_FALSE(agent.find("P3")->rank.has_value());
  EXPECT_FALSE(agent.ranking_due("R1", 2000));
  EXPECT_TRUE(agent.ranking_due("R1", kDayMs));
  EXPECT_EQ(agent.request_ranking("R1", kDayMs, market.sender()).status, RankingStatus::kRanked);
  EXPECT_EQ(agent.find("P3")->rank, 0u);
}

TEST(Ranking, JitterWithinBound) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P1");
  ClientConfig cfg;
  cfg.jitter_max_ms = 500;
  ClientAgent agent(schema(), cfg);
  market.connect(agent);
  for (int i = 0; i < 50; ++i) {
    agent.record_product(market.profile("R1", "P1"), kUser, 0);
    const TimeMs now = i * kSecondMs;
    const auto r = agent.request_ranking("R1", now, market.sender());
    ASSERT_EQ(r.status, RankingStatus::kRanked);
    EXPECT_GE(r.sent_at, now);
    EXPECT_LE(r.sent_at, now + 500);
    const auto out = agent.build_ad_request("https://pub.example/", now);
    EXPECT_GE(out.send_at, now);
    EXPECT_LE(out.send_at, now + 500);
  }
}

TEST(Ranking, UnknownServiceOrTransportFailure) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P1");
  ClientAgent agent(schema(), {});
  agent.record_product(market.profile("R1", "P1"), kUser, 0);
  EXPECT_EQ(agent.request_ranking("R1", 0, market.sender()).status, RankingStatus::kFailed);
  market.connect(agent);
  auto dead = [](const std::string&, const std::string&, TimeMs) {
    return std::optional<std::string>();
  };
  EXPECT_EQ(agent.request_ranking("R1", 0, dead).status, RankingStatus::kFailed);
  EXPECT_FALSE(agent.find("P1")->rank.has_value());
  EXPECT_EQ(agent.request_ranking("R2", 0, market.sender()).status, RankingStatus::kNothingToRank);
}

class AdRequestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    market.add_retargeter("R1");
    for (int i = 0; i < 5; ++i) market.add_product("R1", "P" + std::to_string(i), 0.01 + 0.01 * i);
    market.connect(agent);
    for (int i = 0; i < 5; ++i)
      agent.record_product(market.profile("R1", "P" + std::to_string(i)), kUser, 0);
    ASSERT_EQ(agent.request_ranking("R1", 0, market.sender()).status, RankingStatus::kRanked);
  }

  std::vector<std::string> offered() {
    auto out = agent.build_ad_request("https://pub.example/", 0);
    return out.offered["R1"];
  }

  Market market;
  ClientAgent agent{schema(), {}};
};

TEST_F(AdRequestTest, TopThreeOpaqueEntries) {
  const auto out = agent.build_ad_request("https://pub.example/", 0);
  ASSERT_EQ(out.request.entries.size(), 1u);
  EXPECT_EQ(out.offered.at("R1"), (std::vector<std::string>{"P4", "P3", "P2"}));
  const auto wire = msg::serialize(out.request);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(wire.find("P" + std::to_string(i) + "\""), std::string::npos);
  const auto again = agent.build_ad_request("https://pub.example/", 0);
  EXPECT_NE(again.request.rid, out.request.rid);
  EXPECT_NE(again.request.entries[0].sealed_key, out.request.entries[0].sealed_key);
  EXPECT_NE(again.request.entries[0].payload, out.request.entries[0].payload);
}

TEST_F(AdRequestTest, FrequencyCap) {
  for (int i = 0; i < 3; ++i) agent.register_ad_impression("P4");
  EXPECT_EQ(agent.find("P4")->impressions_today, 3u);
  agent.register_ad_impression("unknown");
  for (int i = 0; i < 7; ++i) agent.register_ad_impression("P4");
  EXPECT_EQ(offered(), (std::vector<std::string>{"P3", "P2", "P1"}));
  agent.reset_daily_counters();
  EXPECT_EQ(agent.find("P4")->impressions_today, 0u);
  EXPECT_EQ(offered().front(), "P4");
}

TEST_F(AdRequestTest, SensitiveProducts) {
  agent.set_sensitive("P4", true);
  EXPECT_EQ(offered(), (std::vector<std::string>{"P3", "P2", "P1"}));
  EXPECT_EQ(agent.size(), 5u);
  agent.set_sensitive("P4", false);
  ASSERT_EQ(agent.request_ranking("R1", 0, market.sender()).status, RankingStatus::kRanked);
  EXPECT_EQ(offered().front(), "P4");
  for (int i = 0; i < 5; ++i) agent.set_sensitive("P" + std::to_string(i), true);
  EXPECT_TRUE(agent.build_ad_request("https://pub.example/", 0).request.entries.empty());
  EXPECT_THROW(agent.set_sensitive("nope", true), ClientError);
}

TEST(Sensitive, NeverSentForRanking) {
  Market market;
  market.add_retargeter("R1");
  market.add_product("R1", "P1");
  market.add_product("R1", "Psecret");
  ClientAgent agent(schema(), {});
  market.connect(agent);
  agent.record_product(market.profile("R1", "P1"), kUser, 0);
  agent.record_product(market.profile("R1", "Psecret"), kUser, 0, true);
  EXPECT_TRUE(agent.find("Psecret")->sensitive);
  std::string captured;
  auto inner = market.sender();
  auto spy = [&](const std::string& url, const std::string& body, TimeMs t) {
    captured = body;
    return inner(url, body, t);
  };
  const auto r = agent.request_ranking("R1", 0, spy);
  EXPECT_EQ(r.ranked, 1u);
  EXPECT_FALSE(agent.find("Psecret")->rank.has_value());
  EXPECT_EQ(captured.find("Psecret"), std::string::npos);
}

}  // namespace
}  // namespace pprt::client
