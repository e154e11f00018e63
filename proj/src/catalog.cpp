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

#include "pprt/catalog.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <utility>

#include "json.hpp"

namespace pprt::catalog {

using hcrypt::Ciphertext;
using hcrypt::DerivationLabel;
using hcrypt::Keystream;
using hcrypt::MasterSecret;
using json = nlohmann::ordered_json;

AttributeSchema::AttributeSchema(std::vector<Attribute> attributes)
    : attributes_(std::move(attributes)) {
  for (const auto& a : attributes_) {
    if (a.cardinality < 1) throw CatalogError("attribute '" + a.name + "' has cardinality 0");
  }
}

const AttributeSchema& AttributeSchema::default_schema() {
  static const AttributeSchema schema({{"age", 7},
                                       {"gender", 2},
                                       {"locality", 846},
                                       {"interest", 24},
                                       {"conversion_status", 5},
                                       {"visit_frequency", 5},
                                       {"last_visit", 5}});
  return schema;
}

std::optional<std::size_t> AttributeSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t AttributeSchema::total_slots() const {
  std::size_t n = 0;
  for (const auto& a : attributes_) n += a.cardinality;
  return n;
}

std::vector<ProfileViolation> validate_user_profile(const UserProfile& u,
                                                    const AttributeSchema& schema) {
  std::vector<ProfileViolation> out;
  if (u.values.size() != schema.size()) {
    out.push_back({schema.size(), "profile has " + std::to_string(u.values.size()) +
                                      " coordinates, schema has " +
                                      std::to_string(schema.size())});
  }
  const std::size_t n = std::min(u.values.size(), schema.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (u.values[i] >= schema[i].cardinality) {
      out.push_back({i, schema[i].name + " index " + std::to_string(u.values[i]) +
                            " exceeds maximum " + std::to_string(schema[i].cardinality - 1)});
    }
  }
  return out;
}

FixedLog encode_log(std::int64_t x_micros) {
  if (x_micros < 1) throw CatalogError("encode_log requires a positive value");
  return FixedLog{std::llround(std::log(static_cast<double>(x_micros)) * kFixedLogScale)};
}

std::int64_t decode_log(FixedLog v) {
  const double x = std::exp(static_cast<double>(v.v) / kFixedLogScale);
  if (!(x < 9.0e18)) throw CatalogError("decode_log overflow");
  return std::llround(x);
}

FixedLog encode_ratio_log(std::int64_t ratio_micros) {
  if (ratio_micros < 1) throw CatalogError("ratio must be positive");
  const double r = static_cast<double>(ratio_micros) / static_cast<double>(kMicrosPerUnit);
  return FixedLog{std::llround(std::log(r) * kFixedLogScale)};
}

namespace {

void check_coefficients(const std::vector<CoefficientTable>& tables,
                        const AttributeSchema& schema) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto& t : tables) {
    if (t.attr_i >= t.attr_j || t.attr_j >= schema.size())
      throw CatalogError("coefficient pair must satisfy i < j < n");
    if (!seen.emplace(t.attr_i, t.attr_j).second)
      throw CatalogError("duplicate coefficient pair");
    if (t.rows != schema[t.attr_i].cardinality || t.cols != schema[t.attr_j].cardinality ||
        t.values.size() != static_cast<std::size_t>(t.rows) * t.cols)
      throw CatalogError("coefficient table shape does not match schema");
    for (std::int64_t v : t.values) {
      if (v <= 0) throw CatalogError("coefficients must be positive");
    }
  }
}

}  // namespace

void refresh_pis(ProductProfileClear& p) {
  if (p.ctr_default < 0.0 || p.ctr_default > 1.0) throw CatalogError("CTR must be in [0, 1]");
  if (p.cpc_micros < 0) throw CatalogError("CPC must be non-negative");
  p.pis_micros = std::llround(p.ctr_default * static_cast<double>(p.cpc_micros));
  if (p.pis_micros < 1) throw CatalogError("PIS of '" + p.id_p + "' rounds below 1 micro");
}

ProductProfileClear build_product_profile_clear(const ProductSpec& spec,
                                                const AttributeSchema& schema) {
  if (spec.id_p.empty() || spec.id_r.empty()) throw CatalogError("empty product or retargeter id");

  ProductProfileClear p;
  p.id_p = spec.id_p;
  p.id_r = spec.id_r;
  p.ctr_default = spec.ctr_default;
  p.cpc_micros = spec.cpc_micros;
  p.ranking_url = spec.ranking_url;
  refresh_pis(p);

  p.factors.resize(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i)
    p.factors[i].assign(schema[i].cardinality, kMicrosPerUnit);

  for (const auto& [attr, values] : spec.factors) {
    if (attr >= schema.size()) throw CatalogError("factor for unknown attribute index");
    if (values.size() > schema[attr].cardinality)
      throw CatalogError("too many factor values for attribute '" + schema[attr].name + "'");
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (values[j] <= 0) throw CatalogError("impact factors must be positive");
      p.factors[attr][j] = values[j];
    }
  }

  check_coefficients(spec.coefficients, schema);
  p.coefficients = spec.coefficients;
  return p;
}

Keystream pis_key(const MasterSecret& master, std::string_view id_p) {
  return hcrypt::derive_keystream(master, DerivationLabel::pis(id_p));
}

Keystream factor_key(const MasterSecret& master, std::string_view id_p, std::uint32_t attribute,
                     std::uint32_t value) {
  return hcrypt::derive_keystream(master, DerivationLabel::factor(id_p, attribute, value));
}

Keystream coeff_key(const MasterSecret& master, std::string_view id_p, std::uint32_t attr_i,
                    std::uint32_t attr_j, std::uint32_t a, std::uint32_t b) {
  return hcrypt::derive_keystream(master, DerivationLabel::coeff(id_p, attr_i, attr_j, a, b));
}

Keystream bid_key(const MasterSecret& master, std::string_view id_p) {
  return hcrypt::derive_keystream(master, DerivationLabel::bid_key(id_p));
}

std::size_t ProductProfileEnc::ciphertext_count() const {
  std::size_t n = 1;
  for (const auto& f : factors) n += f.size();
  for (const auto& t : coefficients) n += t.values.size();
  return n;
}

ProductProfileEnc encrypt_product_profile(const ProductProfileClear& clear,
                                          const MasterSecret& master) {
  ProductProfileEnc enc;
  enc.id_p = clear.id_p;
  enc.id_r = clear.id_r;
  enc.ranking_url = clear.ranking_url;
  enc.pis = hcrypt::enc(encode_log(clear.pis_micros).v, pis_key(master, clear.id_p));

  enc.factors.resize(clear.factors.size());
  for (std::uint32_t i = 0; i < clear.factors.size(); ++i) {
    auto& row = enc.factors[i];
    row.reserve(clear.factors[i].size());
    for (std::uint32_t j = 0; j < clear.factors[i].size(); ++j) {
      row.push_back(hcrypt::enc(encode_ratio_log(clear.factors[i][j]).v,
                                factor_key(master, clear.id_p, i, j)));
    }
  }

  for (const auto& t : clear.coefficients) {
    EncCoefficientTable et{t.attr_i, t.attr_j, t.rows, t.cols, {}};
    et.values.reserve(t.values.size());
    for (std::uint32_t a = 0; a < t.rows; ++a) {
      for (std::uint32_t b = 0; b < t.cols; ++b) {
        et.values.push_back(hcrypt::enc(encode_ratio_log(t.at(a, b)).v,
                                        coeff_key(master, clear.id_p, t.attr_i, t.attr_j, a, b)));
      }
    }
    enc.coefficients.push_back(std::move(et));
  }
  return enc;
}

std::string serialize_profile(const ProductProfileEnc& enc) {
  json doc;
  doc["v"] = enc.schema_version;
  doc["id_P"] = enc.id_p;
  doc["id_R"] = enc.id_r;
  doc["rank_url"] = enc.ranking_url;
  doc["pis"] = hcrypt::ciphertext_to_base64(enc.pis);
  json f = json::array();
  for (const auto& row : enc.factors) {
    json r = json::array();
    for (const auto& c : row) r.push_back(hcrypt::ciphertext_to_base64(c));
    f.push_back(std::move(r));
  }
  doc["F"] = std::move(f);
  if (!enc.coefficients.empty()) {
    json cs = json::array();
    for (const auto& t : enc.coefficients) {
      json table = json::array();
      for (std::uint32_t a = 0; a < t.rows; ++a) {
        json row = json::array();
        for (std::uint32_t b = 0; b < t.cols; ++b)
          row.push_back(hcrypt::ciphertext_to_base64(t.at(a, b)));
        table.push_back(std::move(row));
      }
      json entry;
      entry["i"] = t.attr_i;
      entry["j"] = t.attr_j;
      entry["table"] = std::move(table);
      cs.push_back(std::move(entry));
    }
    doc["C"] = std::move(cs);
  }
  return doc.dump();
}

std::optional<std::string> shape_error(const ProductProfileEnc& enc,
                                       const AttributeSchema& schema) {
  if (enc.factors.size() != schema.size())
    return "profile has " + std::to_string(enc.factors.size()) + " factor vectors, schema has " +
           std::to_string(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (enc.factors[i].size() != schema[i].cardinality)
      return "|F_" + std::to_string(i) + "|=" + std::to_string(enc.factors[i].size()) +
             " but " + schema[i].name + " has cardinality " +
             std::to_string(schema[i].cardinality);
  }
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto& t : enc.coefficients) {
    if (t.attr_i >= t.attr_j || t.attr_j >= schema.size()) return "invalid coefficient pair";
    if (!seen.emplace(t.attr_i, t.attr_j).second) return "duplicate coefficient pair";
    if (t.rows != schema[t.attr_i].cardinality || t.cols != schema[t.attr_j].cardinality ||
        t.values.size() != static_cast<std::size_t>(t.rows) * t.cols)
      return "coefficient table shape mismatch";
  }
  return std::nullopt;
}

namespace {

Ciphertext ct_field(const json& v) {
  if (!v.is_string()) throw FormatError("ciphertext must be a base64 string");
  try {
    return hcrypt::ciphertext_from_base64(v.get<std::string>());
  } catch (const hcrypt::HcryptError& e) {
    throw FormatError(e.what());
  }
}

const json& require(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw FormatError(std::string("missing field '") + key + "'");
  return *it;
}

}  // namespace

ProductProfileEnc parse_profile(std::string_view document, const AttributeSchema& schema) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed profile document: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("profile document must be an object");

  ProductProfileEnc enc;
  try {
    const auto& v = require(doc, "v");
    if (!v.is_number_integer() || v.get<int>() != kSchemaVersion)
      throw FormatError("unsupported schema version");
    enc.schema_version = v.get<int>();
    enc.id_p = require(doc, "id_P").get<std::string>();
    enc.id_r = require(doc, "id_R").get<std::string>();
    enc.ranking_url = require(doc, "rank_url").get<std::string>();
    enc.pis = ct_field(require(doc, "pis"));

    const auto& f = require(doc, "F");
    if (!f.is_array()) throw FormatError("F must be an array");
    for (const auto& row : f) {
      if (!row.is_array()) throw FormatError("F entries must be arrays");
      auto& out = enc.factors.emplace_back();
      out.reserve(row.size());
      for (const auto& c : row) out.push_back(ct_field(c));
    }

    if (auto it = doc.find("C"); it != doc.end()) {
      if (!it->is_array()) throw FormatError("C must be an array");
      for (const auto& entry : *it) {
        EncCoefficientTable t;
        t.attr_i = require(entry, "i").get<std::uint32_t>();
        t.attr_j = require(entry, "j").get<std::uint32_t>();
        const auto& table = require(entry, "table");
        if (!table.is_array() || table.empty()) throw FormatError("table must be a 2-D array");
        t.rows = static_cast<std::uint32_t>(table.size());
        t.cols = static_cast<std::uint32_t>(table.front().size());
        for (const auto& row : table) {
          if (!row.is_array() || row.size() != t.cols) throw FormatError("ragged coefficient table");
          for (const auto& c : row) t.values.push_back(ct_field(c));
        }
        enc.coefficients.push_back(std::move(t));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed profile field: ") + e.what());
  }

  if (auto err = shape_error(enc, schema)) throw FormatError(*err);
  return enc;
}

}  // namespace pprt::catalog
