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

#include "json.hpp"
#include "pprt/messages.hpp"

namespace pprt::msg {
namespace {

TEST(RequestIds, HexRoundTripAndFreshness) {
  const auto a = random_request_id();
  EXPECT_EQ(to_hex(a).size(), 32u);
  EXPECT_EQ(rid_from_hex(to_hex(a)), a);
  EXPECT_NE(a, random_request_id());
  EXPECT_THROW(rid_from_hex("abc"), MessageError);
  EXPECT_THROW(rid_from_hex(std::string(32, 'z')), MessageError);
}

TEST(Messages, AdRequestRoundTripCarriesOnlyOpaqueFields) {
  AdRequest m;
  m.rid = random_request_id();
  m.page_url = "https://pub.example/a";
  m.entries.push_back({"R1", Bytes(80, 1), Bytes(100, 2)});
  m.entries.push_back({"R2", Bytes(80, 3), Bytes(90, 4)});
  const auto text = serialize(m);
  EXPECT_EQ(parse_ad_request(text), m);
  const auto doc = nlohmann::ordered_json::parse(text);
  std::vector<std::string> keys;
  for (const auto& [k, _] : doc.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"rid", "page", "entries"}));
  for (const auto& e : doc["entries"]) {
    keys.clear();
    for (const auto& [k, _] : e.items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"id_R", "skey", "payload"}));
  }
}

TEST(Messages, OtherRoundTrips) {
  BidRequest b{random_request_id(), "https://p.example/", Bytes(80, 7), Bytes(40, 8)};
  EXPECT_EQ(parse_bid_request(serialize(b)), b);

  BidResponse r{b.rid, "R1", 7128, {"c0ffee", "https://r1.ads.example/ad/c0ffee", Bytes(64, 9)}};
  EXPECT_EQ(parse_bid_response(serialize(r)), r);

  AdDelivery d{b.rid, std::string("R1"), r.creative};
  EXPECT_EQ(parse_ad_delivery(serialize(d)), d);
  AdDelivery empty{b.rid, std::nullopt, {}};
  EXPECT_EQ(parse_ad_delivery(serialize(empty)), empty);

  ForwardedReport f{"ab12", "c0ffee", ReportEvent::kClick, 3600000};
  EXPECT_EQ(parse_forwarded_report(serialize(f)), f);

  RawReport raw{"c0ffee", ReportEvent::kImpression, 42, "Agent/1"};
  const auto raw2 = parse_raw_report(serialize(raw));
  EXPECT_EQ(raw2.creative_id, raw.creative_id);
  EXPECT_EQ(raw2.timestamp, 42);
  EXPECT_EQ(raw2.user_agent, "Agent/1");

  std::vector<PayloadItem> items{{"P1", {1}, {2}}, {"P2", {3}, {4}}};
  EXPECT_EQ(parse_payload(serialize_payload(items)), items);

  AdMarkup mk{"P1", "Blue shoes", "https://adv.example/p1"};
  EXPECT_EQ(parse_ad_markup(serialize(mk)), mk);
}

TEST(Messages, ForwardedReportRejectsUserFields) {
  EXPECT_THROW(parse_forwarded_report(
                   R"({"report_id":"a","creative_id":"b","event":"click","ts":0,"ip":"1.2.3.4"})"),
               MessageError);
  EXPECT_THROW(parse_forwarded_report(
                   R"({"report_id":"a","creative_id":"b","event":"click","ts":0,"user_agent":"x"})"),
               MessageError);
  EXPECT_THROW(parse_forwarded_report(R"({"report_id":"a","creative_id":"b","event":"nope","ts":0})"),
               MessageError);
}

TEST(Messages, Malformed) {
  EXPECT_THROW(parse_ad_request("{"), MessageError);
  EXPECT_THROW(parse_ad_request("[1]"), MessageError);
  EXPECT_THROW(parse_ad_request(R"({"rid":"00","page":"x","entries":[]})"), MessageError);
  EXPECT_THROW(parse_bid_response(R"({"rid":1})"), MessageError);
}

TEST(Urls, EncodeDecodeHost) {
  const std::string url = "https://r1.ads.example/ad/abc?x=1&y=a b";
  EXPECT_EQ(url_decode(url_encode(url)), url);
  EXPECT_EQ(url_encode("a/b"), "a%2Fb");
  EXPECT_THROW(url_decode("%G1"), MessageError);
  EXPECT_THROW(url_decode("%4"), MessageError);
  EXPECT_EQ(host_of("https://pub03.example:8080/x"), "pub03.example");
  EXPECT_EQ(host_of("https://pub03.example/x?y"), "pub03.example");
}

}  // namespace
}  // namespace pprt::msg
