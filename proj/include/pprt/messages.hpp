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

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pprt/common.hpp"
#include "pprt/hcrypt.hpp"

/// RTB wire messages exchanged between client, exchange and retargeters.
/// Every retargeter-bound field is either a sealed blob or an AEAD payload.
namespace pprt::msg {

using hcrypt::Bytes;

class MessageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using RequestId = std::array<std::uint8_t, 16>;

RequestId random_request_id();
std::string to_hex(const RequestId& rid);
/// Throws MessageError unless given 32 hex digits.
RequestId rid_from_hex(std::string_view hex);

struct AdRequestEntry {
  std::string id_r;
  Bytes sealed_key;
  Bytes payload;
  bool operator==(const AdRequestEntry&) const = default;
};

/// Client -> exchange. Carries nothing that identifies the user or a product.
struct AdRequest {
  RequestId rid{};
  std::string page_url;
  std::vector<AdRequestEntry> entries;
  bool operator==(const AdRequest&) const = default;
};

/// Exchange -> retargeter.
struct BidRequest {
  RequestId rid{};
  std::string page_url;
  Bytes sealed_key;
  Bytes payload;
  bool operator==(const BidRequest&) const = default;
};

struct Creative {
  std::string creative_id;
  std::string ad_url;
  /// AEAD(markup) under the session key; the ad asset itself is fetched
  /// from ad_url.
  Bytes ad_ct;
  bool operator==(const Creative&) const = default;
};

struct BidResponse {
  RequestId rid{};
  std::string id_r;
  std::int64_t bid_price_micros = 0;
  Creative creative;
  bool operator==(const BidResponse&) const = default;
};

/// Exchange -> client: the winning creative with its ad_url rewritten to
/// the exchange proxy. Empty (no id_r) when nobody bid.
struct AdDelivery {
  RequestId rid{};
  std::optional<std::string> id_r;
  Creative creative;
  bool operator==(const AdDelivery&) const = default;
};

/// One entry of the AEAD product payload inside an ad request.
struct PayloadItem {
  std::string id_p;
  hcrypt::Ciphertext bid_score;
  hcrypt::Ciphertext pis;
  bool operator==(const PayloadItem&) const = default;
};

/// Plaintext ad markup, only ever carried as AEAD ciphertext.
struct AdMarkup {
  std::string id_p;
  std::string title;
  std::string landing_url;
  bool operator==(const AdMarkup&) const = default;
};

enum class ReportEvent { kImpression, kClick };

std::string_view to_string(ReportEvent e);
ReportEvent report_event_from_string(std::string_view s);

/// Client -> exchange view/click report. Carries user-identifying fields
/// that the exchange strips before forwarding.
struct RawReport {
  std::string creative_id;
  ReportEvent event = ReportEvent::kImpression;
  TimeMs timestamp = 0;
  std::string user_agent;
};

/// Exchange -> retargeter; exactly the four fields below.
struct ForwardedReport {
  std::string report_id;
  std::string creative_id;
  ReportEvent event = ReportEvent::kImpression;
  TimeMs coarse_timestamp = 0;
  bool operator==(const ForwardedReport&) const = default;
};

// JSON codecs. Parsers throw MessageError.

std::string serialize(const AdRequest& m);
AdRequest parse_ad_request(std::string_view text);

std::string serialize(const BidRequest& m);
BidRequest parse_bid_request(std::string_view text);

std::string serialize(const BidResponse& m);
BidResponse parse_bid_response(std::string_view text);

std::string serialize(const AdDelivery& m);
AdDelivery parse_ad_delivery(std::string_view text);

std::string serialize(const RawReport& m);
RawReport parse_raw_report(std::string_view text);

std::string serialize(const ForwardedReport& m);
/// Strict: rejects any field beyond report_id, creative_id, event, ts.
ForwardedReport parse_forwarded_report(std::string_view text);

std::string serialize_payload(const std::vector<PayloadItem>& items);
std::vector<PayloadItem> parse_payload(std::string_view text);

std::string serialize(const AdMarkup& m);
AdMarkup parse_ad_markup(std::string_view text);

std::string url_encode(std::string_view s);
std::string url_decode(std::string_view s);
/// Host part of an http(s) URL, or the input when it has no scheme.
std::string host_of(std::string_view url);

}  // namespace pprt::msg
