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

#include <cmath>

#include "support.hpp"

namespace pprt::retargeter {
namespace {

using testing::Market;
using testing::schema;

class RetargeterTest : public ::testing::Test {
 protected:
  void SetUp() override {
    r = &market.add_retargeter("R1");
    // PIS 5000 each; scores are supplied directly below.
    for (const char* id : {"A", "B", "C"}) market.add_product("R1", id);
  }

  msg::PayloadItem item(const std::string& id_p, std::int64_t score_micros,
                        std::int64_t conveyed_pis = 5'000) {
    return {id_p, hcrypt::enc(catalog::encode_log(score_micros).v, catalog::bid_key(r->master(), id_p)),
            hcrypt::enc(catalog::encode_log(conveyed_pis).v, catalog::pis_key(r->master(), id_p))};
  }

  msg::BidRequest bid_request(const std::vector<msg::PayloadItem>& items, hcrypt::SessionKey& key) {
    key = hcrypt::SessionKey::random();
    msg::BidRequest req;
    req.rid = msg::random_request_id();
    req.page_url = "https://pub.example/a";
    req.sealed_key = hcrypt::seal_session_key(key, r->public_key());
    req.payload = hcrypt::aead_seal(hcrypt::as_bytes(msg::serialize_payload(items)), key,
                                    hcrypt::context::kProductPayload);
    return req;
  }

  Market market;
  Retargeter* r = nullptr;
};

TEST_F(RetargeterTest, SelectsBestAndPricesAtAlpha) {
  const auto d = r->decide({item("A", 8'910), item("B", 5'000), item("C", 2'000)},
                           "https://pub.example/", *r->snapshot());
  ASSERT_TRUE(d.winner.has_value());
  EXPECT_EQ(d.candidates[*d.winner].id_p, "A");
  EXPECT_EQ(d.expected_revenue_micros, 8'910);
  EXPECT_EQ(d.bid_price_micros, 7'128);
}

TEST_F(RetargeterTest, TieGoesToSmallerId) {
  const auto d = r->decide({item("B", 5'000), item("A", 5'000)}, "https://pub.example/",
                           *r->snapshot());
  EXPECT_EQ(d.candidates[*d.winner].id_p, "A");
}

TEST_F(RetargeterTest, PisDriftAdjustment) {
  r->update_cpc("B", 1'000'000);  // PIS 5000 -> 10000
  EXPECT_EQ(r->snapshot()->products.at("B").pis_micros, 10'000);
  const auto d = r->decide({item("A", 8'000), item("B", 5'000)}, "https://pub.example/",
                           *r->snapshot());
  const auto& b = d.candidates[1];
  EXPECT_NEAR(static_cast<double>(b.adjusted.v - b.conveyed.v), std::log(2.0) * 1e6, 1.0);
  EXPECT_EQ(d.candidates[*d.winner].id_p, "B");
  EXPECT_NEAR(d.expected_revenue_micros, 10'000, 1);
}

TEST_F(RetargeterTest, PageQualityIsMultiplicative) {
  r->set_page_quality("premium.example", 1'500'000);
  const auto d = r->decide({item("A", 8'000)}, "https://premium.example/x", *r->snapshot());
  EXPECT_NEAR(d.expected_revenue_micros, 12'000, 1);
  const auto plain = r->decide({item("A", 8'000)}, "https://other.example/x", *r->snapshot());
  EXPECT_EQ(plain.expected_revenue_micros, 8'000);
}

TEST_F(RetargeterTest, PriceNeverExceedsRevenue) {
  for (std::int64_t s = 1'000; s < 2'000'000; s = s * 3 / 2 + 7) {
    const auto d = r->decide({item("A", s)}, "https://pub.example/", *r->snapshot());
    ASSERT_EQ(d.bid_price_micros, std::llround(0.8 * static_cast<double>(d.expected_revenue_micros)));
    ASSERT_LE(d.bid_price_micros, d.expected_revenue_micros);
  }
}

TEST_F(RetargeterTest, UnknownOrUndecodableItemsIgnored) {
  msg::PayloadItem junk{"A", hcrypt::Ciphertext{0x7000000000000000ULL}, hcrypt::Ciphertext{1}};
  const auto d = r->decide({item("Z", 9'000), junk}, "https://pub.example/", *r->snapshot());
  EXPECT_FALSE(d.winner.has_value());
}

TEST_F(RetargeterTest, FullBidCarriesSealedCreative) {
  hcrypt::SessionKey key;
  const auto req = bid_request({item("A", 8'910), item("B", 5'000)}, key);
  const auto resp = r->handle_bid_request(req, 0);
  ASSERT_TRUE(resp.has_value());
  EXPECT_EQ(resp->rid, req.rid);
  EXPECT_EQ(resp->id_r, "R1");
  EXPECT_EQ(resp->bid_price_micros, 7'128);
  EXPECT_EQ(msg::serialize(*resp).find("\"A\""), std::string::npos);
  const auto markup = hcrypt::aead_open(resp->creative.ad_ct, key, hcrypt::context::kAdContent);
  ASSERT_TRUE(markup.has_value());
  EXPECT_EQ(msg::parse_ad_markup(hcrypt::to_string(*markup)).id_p, "A");

  const auto asset = r->serve_ad(resp->creative.creative_id, 10);
  ASSERT_TRUE(asset.has_value());
  const auto opened = hcrypt::aead_open(*asset, key, hcrypt::context::kAdContent);
  ASSERT_TRUE(opened.has_value());
  EXPECT_EQ(opened->size(), r->config().ad_asset_bytes);
  EXPECT_FALSE(r->serve_ad("unknown", 10).has_value());
  EXPECT_FALSE(r->serve_ad(resp->creative.creative_id, kDayMs).has_value());

  r->notify_win(req.rid, 4'000);
  EXPECT_EQ(r->stats().wins, 1u);
  EXPECT_EQ(r->stats().spend_micros, 4'000);
}

TEST_F(RetargeterTest, TamperedRequestIsNoBid) {
  hcrypt::SessionKey key;
  auto req = bid_request({item("A", 8'910)}, key);
  req.sealed_key[5] ^= 1;
  EXPECT_NO_THROW(EXPECT_FALSE(r->handle_bid_request(req, 0).has_value()));
  req = bid_request({item("A", 8'910)}, key);
  req.payload.back() ^= 1;
  EXPECT_FALSE(r->handle_bid_request(req, 0).has_value());
  req = bid_request({}, key);
  req.payload = hcrypt::aead_seal(hcrypt::as_bytes("not json"), key, hcrypt::context::kProductPayload);
  EXPECT_FALSE(r->handle_bid_request(req, 0).has_value());
  EXPECT_EQ(r->stats().rejected_requests, 3u);
}

TEST(RetargeterReserve, BelowReserveIsNoBid) {
  Market market;
  RetargeterConfig cfg;
  cfg.reserve_micros = 9'000;
  auto& r = market.add_retargeter("R1", cfg);
  market.add_product("R1", "A");
  msg::PayloadItem it{"A", hcrypt::enc(catalog::encode_log(8'910).v, catalog::bid_key(r.master(), "A")),
                      hcrypt::enc(catalog::encode_log(5'000).v, catalog::pis_key(r.master(), "A"))};
  EXPECT_FALSE(r.decide({it}, "https://p.example/", *r.snapshot()).winner.has_value());
}

TEST_F(RetargeterTest, ReportsUpdateTallies) {
  hcrypt::SessionKey key;
  const auto resp = r->handle_bid_request(bid_request({item("A", 8'910)}, key), 0);
  ASSERT_TRUE(resp.has_value());
  const auto& cid = resp->creative.creative_id;
  EXPECT_TRUE(r->receive_report(msg::ForwardedReport{"r1", cid, msg::ReportEvent::kImpression, 0}));
  EXPECT_TRUE(r->receive_report(msg::serialize(msg::ForwardedReport{"r2", cid, msg::ReportEvent::kClick, 0})));
  EXPECT_FALSE(r->receive_report(msg::ForwardedReport{"r3", "nope", msg::ReportEvent::kClick, 0}));
  EXPECT_FALSE(r->receive_report(
      R"({"report_id":"r4","creative_id":")" + cid + R"(","event":"click","ts":0,"ip":"10.0.0.1"})"));
  const auto t = r->tallies().at("A");
  EXPECT_EQ(t.impressions, 1u);
  EXPECT_EQ(t.clicks, 1u);
  EXPECT_EQ(t.billed_micros, 500'000);
  EXPECT_DOUBLE_EQ(t.ctr(), 1.0);
  EXPECT_EQ(r->stats().rejected_reports, 1u);
  EXPECT_TRUE(r->suspected_click_reports().empty());
  r->receive_report(msg::ForwardedReport{"r5", cid, msg::ReportEvent::kClick, 0});
  EXPECT_EQ(r->suspected_click_reports(), (std::vector<std::string>{"r2", "r5"}));
}

TEST(Feed, PublishAndRepublish) {
  Market market;
  auto& r = market.add_retargeter("R1");
  for (int i = 0; i < 100; ++i) market.add_product("R1", "P" + std::to_string(100 + i));
  const auto before = r.publish_feed();
  EXPECT_EQ(before.size(), 100u);
  r.update_cpc("P150", 900'000);
  const auto after = r.publish_feed();
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (before[i] == after[i]) continue;
    ++changed;
    EXPECT_EQ(after[i].id_p, "P150");
    EXPECT_NE(after[i].pis, before[i].pis);
    EXPECT_EQ(after[i].factors, before[i].factors);
  }
  EXPECT_EQ(changed, 1u);
  r.update_ctr("P151", 0.02);
  EXPECT_EQ(r.snapshot()->products.at("P151").pis_micros, 10'000);
}

TEST(Feed, Rejections) {
  Market market;
  auto& r = market.add_retargeter("R1");
  market.add_product("R1", "A");
  auto clear = r.snapshot()->products.at("A");
  EXPECT_THROW(r.add_product(clear), FeedError);
  clear.id_p = "B";
  clear.id_r = "R2";
  EXPECT_THROW(r.add_product(clear), FeedError);
}

TEST(Feed, ConfigFile) {
  const auto cfg = parse_feed_config(R"({
    "id_R": "R7", "alpha": 0.5, "page_quality": {"news.example": 1.2},
    "products": [
      {"id_P": "X1", "ctr": 0.01, "cpc_micros": 500000, "factors": {"gender": [1.2, 0.9]}},
      {"id_P": "X2", "ctr": 0.02, "cpc_micros": 250000,
       "coefficients": [{"i": "age", "j": "interest", "table": [[1.1]]}]}
    ]})", schema());
  EXPECT_EQ(cfg.id_r, "R7");
  EXPECT_DOUBLE_EQ(cfg.config.alpha, 0.5);
  EXPECT_EQ(cfg.page_quality.at("news.example"), 1'200'000);
  ASSERT_EQ(cfg.products.size(), 2u);
  EXPECT_EQ(cfg.products[0].factors.at(1), (std::vector<std::int64_t>{1'200'000, 900'000}));
  EXPECT_EQ(cfg.products[1].coefficients[0].attr_j, 3u);
  EXPECT_THROW(parse_feed_config(R"({"id_R": "R7", "products": [{"id_P": "X", "ctr": 0.1,
      "cpc_micros": 1, "factors": {"shoe": [1]}}]})", schema()), FeedError);
  EXPECT_THROW(parse_feed_config("{}", schema()), FeedError);
}

}  // namespace
}  // namespace pprt::retargeter
