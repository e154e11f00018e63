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

#include "pprt/messages.hpp"

#include <cctype>
#include <set>

#include "json.hpp"

namespace pprt::msg {
namespace {

using json = nlohmann::ordered_json;

json parse_object(std::string_view text, const char* what) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw MessageError(std::string(what) + ": " + e.what());
  }
  if (!doc.is_object()) throw MessageError(std::string(what) + " must be a JSON object");
  return doc;
}

const json& field(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw MessageError(std::string("missing field '") + key + "'");
  return *it;
}

std::string str(const json& doc, const char* key) {
  const auto& v = field(doc, key);
  if (!v.is_string()) throw MessageError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::int64_t integer(const json& doc, const char* key) {
  const auto& v = field(doc, key);
  if (!v.is_number_integer()) throw MessageError(std::string("field '") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

Bytes blob(const json& doc, const char* key) {
  try {
    return hcrypt::base64_decode(str(doc, key));
  } catch (const hcrypt::HcryptError& e) {
    throw MessageError(std::string("field '") + key + "': " + e.what());
  }
}

hcrypt::Ciphertext ct(const json& doc, const char* key) {
  try {
    return hcrypt::ciphertext_from_base64(str(doc, key));
  } catch (const hcrypt::HcryptError& e) {
    throw MessageError(std::string("field '") + key + "': " + e.what());
  }
}

json creative_json(const Creative& c) {
  json j;
  j["id"] = c.creative_id;
  j["ad_url"] = c.ad_url;
  j["ad_ct"] = hcrypt::base64_encode(c.ad_ct);
  return j;
}

Creative creative_from(const json& j) {
  if (!j.is_object()) throw MessageError("creative must be an object");
  return Creative{str(j, "id"), str(j, "ad_url"), blob(j, "ad_ct")};
}

}  // namespace

RequestId random_request_id() {
  RequestId rid{};
  hcrypt::random_bytes(rid);
  return rid;
}

RequestId rid_from_hex(std::string_view hex) {
  if (hex.size() != 32) throw MessageError("request id must be 32 hex digits");
  RequestId rid{};
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw MessageError("request id must be hex");
  };
  for (std::size_t i = 0; i < rid.size(); ++i)
    rid[i] = static_cast<std::uint8_t>(nib(hex[2 * i]) << 4 | nib(hex[2 * i + 1]));
  return rid;
}

std::string to_hex(const RequestId& rid) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(32);
  for (std::uint8_t b : rid) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

std::string_view to_string(ReportEvent e) {
  return e == ReportEvent::kClick ? "click" : "impression";
}

ReportEvent report_event_from_string(std::string_view s) {
  if (s == "click") return ReportEvent::kClick;
  if (s == "impression") return ReportEvent::kImpression;
  throw MessageError("unknown report event '" + std::string(s) + "'");
}

std::string serialize(const AdRequest& m) {
  json doc;
  doc["rid"] = to_hex(m.rid);
  doc["page"] = m.page_url;
  json entries = json::array();
  for (const auto& e : m.entries) {
    json j;
    j["id_R"] = e.id_r;
    j["skey"] = hcrypt::base64_encode(e.sealed_key);
    j["payload"] = hcrypt::base64_encode(e.payload);
    entries.push_back(std::move(j));
  }
  doc["entries"] = std::move(entries);
  return doc.dump();
}

AdRequest parse_ad_request(std::string_view text) {
  const json doc = parse_object(text, "ad request");
  AdRequest m;
  m.rid = rid_from_hex(str(doc, "rid"));
  m.page_url = str(doc, "page");
  const auto& entries = field(doc, "entries");
  if (!entries.is_array()) throw MessageError("entries must be an array");
  for (const auto& e : entries) {
    if (!e.is_object()) throw MessageError("entry must be an object");
    m.entries.push_back({str(e, "id_R"), blob(e, "skey"), blob(e, "payload")});
  }
  return m;
}

std::string serialize(const BidRequest& m) {
  json doc;
  doc["rid"] = to_hex(m.rid);
  doc["page"] = m.page_url;
  doc["skey"] = hcrypt::base64_encode(m.sealed_key);
  doc["payload"] = hcrypt::base64_encode(m.payload);
  return doc.dump();
}

BidRequest parse_bid_request(std::string_view text) {
  const json doc = parse_object(text, "bid request");
  return BidRequest{rid_from_hex(str(doc, "rid")), str(doc, "page"), blob(doc, "skey"),
                    blob(doc, "payload")};
}

std::string serialize(const BidResponse& m) {
  json doc;
  doc["rid"] = to_hex(m.rid);
  doc["id_R"] = m.id_r;
  doc["price"] = m.bid_price_micros;
  doc["creative"] = creative_json(m.creative);
  return doc.dump();
}

BidResponse parse_bid_response(std::string_view text) {
  const json doc = parse_object(text, "bid response");
  BidResponse m;
  m.rid = rid_from_hex(str(doc, "rid"));
  m.id_r = str(doc, "id_R");
  m.bid_price_micros = integer(doc, "price");
  if (m.bid_price_micros < 0) throw MessageError("negative bid price");
  m.creative = creative_from(field(doc, "creative"));
  return m;
}

std::string serialize(const AdDelivery& m) {
  json doc;
  doc["rid"] = to_hex(m.rid);
  if (m.id_r) {
    doc["id_R"] = *m.id_r;
    doc["creative"] = creative_json(m.creative);
  }
  return doc.dump();
}

AdDelivery parse_ad_delivery(std::string_view text) {
  const json doc = parse_object(text, "ad delivery");
  AdDelivery m;
  m.rid = rid_from_hex(str(doc, "rid"));
  if (doc.contains("id_R")) {
    m.id_r = str(doc, "id_R");
    m.creative = creative_from(field(doc, "creative"));
  }
  return m;
}

std::string serialize(const RawReport& m) {
  json doc;
  doc["creative_id"] = m.creative_id;
  doc["event"] = to_string(m.event);
  doc["ts"] = m.timestamp;
  doc["ua"] = m.user_agent;
  return doc.dump();
}

RawReport parse_raw_report(std::string_view text) {
  const json doc = parse_object(text, "report");
  RawReport m;
  m.creative_id = str(doc, "creative_id");
  m.event = report_event_from_string(str(doc, "event"));
  m.timestamp = integer(doc, "ts");
  if (doc.contains("ua")) m.user_agent = str(doc, "ua");
  return m;
}

std::string serialize(const ForwardedReport& m) {
  json doc;
  doc["report_id"] = m.report_id;
  doc["creative_id"] = m.creative_id;
  doc["event"] = to_string(m.event);
  doc["ts"] = m.coarse_timestamp;
  return doc.dump();
}

ForwardedReport parse_forwarded_report(std::string_view text) {
  const json doc = parse_object(text, "forwarded report");
  static const std::set<std::string> kAllowed = {"report_id", "creative_id", "event", "ts"};
  for (const auto& [key, _] : doc.items()) {
    if (!kAllowed.contains(key))
      throw MessageError("forwarded report carries disallowed field '" + key + "'");
  }
  ForwardedReport m;
  m.report_id = str(doc, "report_id");
  m.creative_id = str(doc, "creative_id");
  m.event = report_event_from_string(str(doc, "event"));
  m.coarse_timestamp = integer(doc, "ts");
  return m;
}

std::string serialize_payload(const std::vector<PayloadItem>& items) {
  json arr = json::array();
  for (const auto& it : items) {
    json j;
    j["id_P"] = it.id_p;
    j["score"] = hcrypt::ciphertext_to_base64(it.bid_score);
    j["pis"] = hcrypt::ciphertext_to_base64(it.pis);
    arr.push_back(std::move(j));
  }
  json doc;
  doc["products"] = std::move(arr);
  return doc.dump();
}

std::vector<PayloadItem> parse_payload(std::string_view text) {
  const json doc = parse_object(text, "product payload");
  const auto& arr = field(doc, "products");
  if (!arr.is_array()) throw MessageError("products must be an array");
  std::vector<PayloadItem> out;
  for (const auto& j : arr) {
    if (!j.is_object()) throw MessageError("product entry must be an object");
    out.push_back({str(j, "id_P"), ct(j, "score"), ct(j, "pis")});
  }
  return out;
}

std::string serialize(const AdMarkup& m) {
  json doc;
  doc["id_P"] = m.id_p;
  doc["title"] = m.title;
  doc["landing"] = m.landing_url;
  return doc.dump();
}

AdMarkup parse_ad_markup(std::string_view text) {
  const json doc = parse_object(text, "ad markup");
  return AdMarkup{str(doc, "id_P"), str(doc, "title"), str(doc, "landing")};
}

std::string url_encode(std::string_view s) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kDigits[c >> 4]);
      out.push_back(kDigits[c & 0xF]);
    }
  }
  return out;
}

std::string url_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%') {
      auto hex = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
      };
      if (i + 2 >= s.size()) throw MessageError("truncated percent escape");
      const int hi = hex(s[i + 1]);
      const int lo = hex(s[i + 2]);
      if (hi < 0 || lo < 0) throw MessageError("invalid percent escape");
      out.push_back(static_cast<char>(hi << 4 | lo));
      i += 2;
    } else if (s[i] == '+') {
      out.push_back(' ');
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::string host_of(std::string_view url) {
  auto pos = url.find("://");
  if (pos == std::string_view::npos) return std::string(url);
  url.remove_prefix(pos + 3);
  auto end = url.find_first_of("/?#:");
  return std::string(url.substr(0, end));
}

}  // namespace pprt::msg
