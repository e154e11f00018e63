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
#include <random>

#include "pprt/ranking_service.hpp"

namespace pprt::ranking {
namespace {

const catalog::AttributeSchema& schema() { return catalog::AttributeSchema::default_schema(); }
const UserProfile kUser{{1, 0, 100, 12, 0, 1, 2}};

hcrypt::MasterSecret master() {
  hcrypt::MasterSecret m;
  m.bytes.fill(0x11);
  return m;
}

RankingService make_service(RankingPolicy policy = {}) {
  return RankingService("R1", schema(), master(), policy, hcrypt::KeyPair::generate());
}

// Ciphertext that decrypts to `log_score` under the score key for (id_p, u).
Ciphertext score_for(const std::string& id_p, std::int64_t log_score, const UserProfile& u = kUser) {
  hcrypt::Keystream k = catalog::pis_key(master(), id_p);
  for (std::uint32_t i = 0; i < u.values.size(); ++i)
    k = hcrypt::add_keys(k, catalog::factor_key(master(), id_p, i, u.values[i]));
  return hcrypt::enc(log_score, k);
}

std::vector<std::string> ids(const RankingResponse& r) {
  std::vector<std::string> out;
  for (const auto& e : r.ranked) out.push_back(e.id_p);
  return out;
}

TEST(Coarsen, HalfUpAndBound) {
  EXPECT_EQ(coarsen(FixedLog{13'800'000}, 50'000).v, 13'800'000);
  EXPECT_EQ(coarsen(FixedLog{13'820'000}, 50'000).v, 13'800'000);
  EXPECT_EQ(coarsen(FixedLog{13'825'000}, 50'000).v, 13'850'000);
  EXPECT_EQ(coarsen(FixedLog{-25'000}, 50'000).v, 0);
  EXPECT_EQ(coarsen(FixedLog{-25'001}, 50'000).v, -50'000);
  EXPECT_EQ(coarsen(FixedLog{12'345}, 1).v, 12'345);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10'000; ++i) {
    const std::int64_t v = static_cast<std::int64_t>(rng() % 40'000'000) - 20'000'000;
    const auto c = coarsen(FixedLog{v}, 50'000).v;
    ASSERT_LE(std::llabs(c - v), 25'000);
    ASSERT_EQ(c % 50'000, 0);
  }
}

TEST(Rank, BucketExample) {
  auto svc = make_service();
  RankingRequest req{"chan", kUser, {}};
  req.entries.push_back({"P3", score_for("P3", 9'000'000), {}, {}});
  req.entries.push_back({"P2", score_for("P2", 13'820'000), {}, {}});
  req.entries.push_back({"P1", score_for("P1", 13'800'000), {}, {}});
  const auto out = std::get<RankingResponse>(svc.rank(req, 0));
  EXPECT_EQ(ids(out), (std::vector<std::string>{"P1", "P2", "P3"}));
  const std::vector<std::int64_t> buckets{13'800'000, 13'800'000, 9'000'000};
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(hcrypt::dec(out.ranked[i].bid_score, catalog::bid_key(master(), out.ranked[i].id_p)),
              buckets[i]);
}

TEST(Rank, SingleEntry) {
  auto svc = make_service();
  RankingRequest req{"chan", kUser, {{"P1", score_for("P1", 8'000'000), {}, {}}}};
  const auto out = std::get<RankingResponse>(svc.rank(req, 0));
  ASSERT_EQ(out.ranked.size(), 1u);
  EXPECT_EQ(out.ranked[0].id_p, "P1");
}

TEST(Rank, MatchesPlaintextSortOracle) {
  for (std::int64_t width : {std::int64_t{1}, std::int64_t{50'000}}) {
    RankingPolicy policy;
    policy.bucket_width = width;
    policy.rate_limit_per_day = 1000;
    auto svc = make_service(policy);
    std::mt19937_64 rng(static_cast<unsigned>(width));
    for (int trial = 0; trial < 20; ++trial) {
      RankingRequest req{"chan", kUser, {}};
      std::vector<std::pair<std::int64_t, std::string>> oracle;
      for (int p = 0; p < 100; ++p) {
        const std::string id = "P" + std::to_string(1000 + p);
        const std::int64_t v = 5'000'000 + static_cast<std::int64_t>(rng() % 5'000'000);
        req.entries.push_back({id, score_for(id, v), {}, {}});
        const std::int64_t c =
            width == 1 ? v : static_cast<std::int64_t>(std::floor((v + width / 2.0) / width)) * width;
        oracle.emplace_back(c, id);
      }
      std::shuffle(req.entries.begin(), req.entries.end(), rng);
      std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      const auto out = std::get<RankingResponse>(svc.rank(req, 0));
      ASSERT_EQ(out.ranked.size(), 100u);
      for (std::size_t i = 0; i < 100; ++i) {
        ASSERT_EQ(out.ranked[i].id_p, oracle[i].second);
        ASSERT_EQ(hcrypt::dec(out.ranked[i].bid_score, catalog::bid_key(master(), oracle[i].second)),
                  oracle[i].first);
      }
    }
  }
}

TEST(Rank, PerEntryProfileAndCoefficientPairs) {
  auto svc = make_service();
  UserProfile other = kUser;
  other.values[4] = 3;
  hcrypt::Keystream k = catalog::pis_key(master(), "P9");
  for (std::uint32_t i = 0; i < 7; ++i)
    k = hcrypt::add_keys(k, catalog::factor_key(master(), "P9", i, other.values[i]));
  k = hcrypt::add_keys(k, catalog::coeff_key(master(), "P9", 0, 1, other.values[0], other.values[1]));
  RankingRequest req{"chan", kUser, {{"P9", hcrypt::enc(10'000'000, k), {{0, 1}}, other}}};
  const auto out = std::get<RankingResponse>(svc.rank(req, 0));
  ASSERT_EQ(out.ranked.size(), 1u);
  EXPECT_EQ(hcrypt::dec(out.ranked[0].bid_score, catalog::bid_key(master(), "P9")), 10'000'000);
}

TEST(Rank, UndecodableAndDuplicateEntriesDropped) {
  auto svc = make_service();
  RankingRequest req{"chan", kUser, {}};
  req.entries.push_back({"P1", score_for("P1", 9'000'000), {}, {}});
  req.entries.push_back({"P2", Ciphertext{0x8000000000000000ULL}, {}, {}});
  req.entries.push_back({"P1", score_for("P1", 9'000'000), {}, {}});
  req.entries.push_back({"P3", score_for("P3", 1), {{1, 0}}, {}});
  const auto out = std::get<RankingResponse>(svc.rank(req, 0));
  EXPECT_EQ(ids(out), (std::vector<std::string>{"P1"}));
  EXPECT_EQ(out.dropped, (std::vector<std::string>{"P2", "P1", "P3"}));
}

TEST(Rank, RandomizedTiesStayWithinBucket) {
  RankingPolicy policy;
  policy.randomize = true;
  policy.rate_limit_per_day = 1000;
  auto svc = make_service(policy);
  bool saw_other_order = false;
  for (int trial = 0; trial < 40; ++trial) {
    RankingRequest req{"chan", kUser, {}};
    for (int p = 0; p < 6; ++p) {
      const std::string id = "P" + std::to_string(p);
      req.entries.push_back({id, score_for(id, p < 5 ? 13'800'000 + p : 9'000'000), {}, {}});
    }
    const auto order = ids(std::get<RankingResponse>(svc.rank(req, 0)));
    EXPECT_EQ(order.back(), "P5");
    if (order[0] != "P0") saw_other_order = true;
  }
  EXPECT_TRUE(saw_other_order);
}

TEST(RateLimit, DailyBoundaryAndIndependence) {
  auto svc = make_service();
  for (int i = 1; i <= 100; ++i) ASSERT_TRUE(svc.check_rate_limit("a", 1000).allowed) << i;
  const auto denied = svc.check_rate_limit("a", 1000);
  EXPECT_FALSE(denied.allowed);
  EXPECT_EQ(denied.retry_after_ms, kDayMs - 1000);
  EXPECT_TRUE(svc.check_rate_limit("b", 1000).allowed);
  EXPECT_TRUE(svc.check_rate_limit("a", kDayMs).allowed);
  RankingRequest req{"a", kUser, {{"P1", score_for("P1", 1), {}, {}}}};
  auto exhausted = make_service();
  for (int i = 0; i < 100; ++i) exhausted.check_rate_limit("a", 0);
  EXPECT_TRUE(std::holds_alternative<RankingDenied>(exhausted.rank(req, 0)));
}

TEST(SealedChannel, RoundTripAndTamper) {
  auto svc = make_service();
  RankingRequest req{"ignored", kUser, {{"P1", score_for("P1", 9'000'000), {}, {}}}};
  const auto sealed = seal_for_service(serialize(req), svc.channel_public_key(),
                                       hcrypt::context::kRankingRequest);
  const auto wire = svc.handle_sealed_rank(sealed.wire, "chan", 0);
  const auto out = open_rank_response(wire, sealed.key);
  ASSERT_TRUE(out.has_value());
  EXPECT_EQ(ids(std::get<RankingResponse>(*out)), (std::vector<std::string>{"P1"}));
  EXPECT_FALSE(open_rank_response(wire, hcrypt::SessionKey::random()).has_value());
  // The host never sees the profile or the score in clear.
  EXPECT_EQ(sealed.wire.find("\"u\""), std::string::npos);
  auto other = make_service();
  EXPECT_THROW(other.handle_sealed_rank(sealed.wire, "chan", 0), std::invalid_argument);
}

TEST(Messages, RequestAndOutcomeRoundTrip) {
  RankingRequest req{"", kUser, {{"P1", Ciphertext{5}, {{0, 1}}, kUser}, {"P2", Ciphertext{6}, {}, {}}}};
  EXPECT_EQ(parse_ranking_request(serialize(req)), req);
  RankOutcome ok = RankingResponse{{{"P1", Ciphertext{7}}}, {"P2"}};
  EXPECT_EQ(parse_rank_outcome(serialize(ok)), ok);
  RankOutcome denied = RankingDenied{1234};
  EXPECT_EQ(parse_rank_outcome(serialize(denied)), denied);
}

TEST(Policy, JsonRoundTrip) {
  RankingPolicy p;
  p.bucket_width = 1;
  p.k_anon = 5;
  p.randomize = true;
  const auto q = RankingPolicy::from_json(p.to_json());
  EXPECT_EQ(q.bucket_width, 1);
  EXPECT_EQ(q.k_anon, 5u);
  EXPECT_TRUE(q.randomize);
  EXPECT_EQ(q.rate_limit_per_day, 100u);
}

StatsContribution contribution(std::uint32_t interest, double ctr) {
  UserProfile u = kUser;
  u.values[3] = interest;
  return {u, {{"P", ctr}}};
}

TEST(Stats, MeanAndSuppression) {
  std::vector<StatsContribution> batch;
  for (int i = 0; i < 24; ++i) batch.push_back(contribution(7, i % 2 ? 0.03 : 0.01));
  batch.push_back(contribution(7, 0.02));
  for (int i = 0; i < 19; ++i) batch.push_back(contribution(3, 0.5));
  const auto report = aggregate_statistics(batch, 20);
  auto cell = std::find_if(report.cells.begin(), report.cells.end(), [](const StatsCell& c) {
    return c.id_p == "P" && c.attribute == 3 && c.value == 7;
  });
  ASSERT_NE(cell, report.cells.end());
  EXPECT_EQ(cell->contributors, 25u);
  EXPECT_NEAR(cell->mean_ctr, 0.02, 1e-12);
  EXPECT_EQ(std::count_if(report.cells.begin(), report.cells.end(),
                          [](const StatsCell& c) { return c.attribute == 3 && c.value == 3; }),
            0);
  EXPECT_GE(report.suppressed_cells, 1u);
  EXPECT_TRUE(aggregate_statistics({}, 20).cells.empty());
  const auto back = StatsReport::from_json(report.to_json());
  EXPECT_EQ(back.cells, report.cells);
}

TEST(Stats, SealedContributionsReleasedOnce) {
  auto svc = make_service();
  for (int i = 0; i < 20; ++i) {
    const auto sealed = seal_for_service(serialize(contribution(1, 0.1)), svc.channel_public_key(),
                                         hcrypt::context::kStatsContribution);
    svc.handle_sealed_stats(sealed.wire);
  }
  EXPECT_EQ(svc.pending_contributions(), 20u);
  const auto report = svc.release_statistics();
  EXPECT_FALSE(report.cells.empty());
  EXPECT_EQ(svc.pending_contributions(), 0u);
  EXPECT_TRUE(svc.release_statistics().cells.empty());
}

}  // namespace
}  // namespace pprt::ranking
