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

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pprt/hcrypt.hpp"

namespace pprt::catalog {

class CatalogError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by parse_profile on malformed or shape-inconsistent documents.
class FormatError : public CatalogError {
 public:
  using CatalogError::CatalogError;
};

inline constexpr std::int64_t kMicrosPerUnit = 1'000'000;
inline constexpr int kSchemaVersion = 1;

struct Attribute {
  std::string name;
  std::uint32_t cardinality = 1;
};

class AttributeSchema {
 public:
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<Attribute> attributes);

  /// age=7, gender=2, locality=846, interest=24, conversion_status=5,
  /// visit_frequency=5, last_visit=5.
  static const AttributeSchema& default_schema();

  std::size_t size() const { return attributes_.size(); }
  const Attribute& operator[](std::size_t i) const { return attributes_.at(i); }
  const std::vector<Attribute>& attributes() const { return attributes_; }
  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Sum of cardinalities: the number of impact-factor slots per product.
  std::size_t total_slots() const;

 private:
  std::vector<Attribute> attributes_;
};

/// Attribute value indices, 0-based, one per schema attribute.
struct UserProfile {
  std::vector<std::uint32_t> values;
  bool operator==(const UserProfile&) const = default;
};

struct ProfileViolation {
  std::size_t attribute = 0;  // == schema size for a length violation
  std::string message;
};

std::vector<ProfileViolation> validate_user_profile(const UserProfile& u,
                                                    const AttributeSchema& schema);

/// round(ln(x) * 10^6), signed.
struct FixedLog {
  std::int64_t v = 0;
  auto operator<=>(const FixedLog&) const = default;
};

inline constexpr double kFixedLogScale = 1e6;

/// Throws CatalogError for x_micros < 1.
FixedLog encode_log(std::int64_t x_micros);
/// round(exp(v / 10^6)); throws CatalogError if the result overflows.
std::int64_t decode_log(FixedLog v);
/// Log of a dimensionless ratio given in micros: round(ln(micros / 10^6) * 10^6).
FixedLog encode_ratio_log(std::int64_t ratio_micros);

/// Dense coefficient table for one attribute pair (i < j). values is
/// row-major with card(i) rows and card(j) columns.
template <typename T>
struct PairTable {
  std::uint32_t attr_i = 0;
  std::uint32_t attr_j = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<T> values;

  const T& at(std::uint32_t a, std::uint32_t b) const { return values.at(a * cols + b); }
  T& at(std::uint32_t a, std::uint32_t b) { return values.at(a * cols + b); }
  bool operator==(const PairTable&) const = default;
};

using CoefficientTable = PairTable<std::int64_t>;
using EncCoefficientTable = PairTable<hcrypt::Ciphertext>;

struct ProductProfileClear {
  std::string id_p;
  std::string id_r;
  double ctr_default = 0.0;
  std::int64_t cpc_micros = 0;
  std::int64_t pis_micros = 0;
  std::string ranking_url;
  /// factors[i][j] in micros; factors[i].size() == cardinality(i).
  std::vector<std::vector<std::int64_t>> factors;
  std::vector<CoefficientTable> coefficients;

  bool operator==(const ProductProfileClear&) const = default;
};

struct ProductProfileEnc {
  int schema_version = kSchemaVersion;
  std::string id_p;
  std::string id_r;
  std::string ranking_url;
  hcrypt::Ciphertext pis;
  std::vector<std::vector<hcrypt::Ciphertext>> factors;
  std::vector<EncCoefficientTable> coefficients;

  std::size_t ciphertext_count() const;
  bool operator==(const ProductProfileEnc&) const = default;
};

/// Partial impact-factor input: attribute index -> leading slot values in
/// micros. Slots not given default to 1.0.
using FactorOverrides = std::map<std::size_t, std::vector<std::int64_t>>;

struct ProductSpec {
  std::string id_p;
  std::string id_r;
  double ctr_default = 0.0;
  std::int64_t cpc_micros = 0;
  std::string ranking_url;
  FactorOverrides factors;
  std::vector<CoefficientTable> coefficients;
};

/// Fills missing factor slots with 10^6 and computes
/// pis_micros = round(ctr * cpc). Throws CatalogError on invalid input,
/// including a PIS that rounds below 1 micro.
ProductProfileClear build_product_profile_clear(const ProductSpec& spec,
                                                const AttributeSchema& schema);

/// Recomputes pis_micros after a CPC or CTR change.
void refresh_pis(ProductProfileClear& p);

/// Keystream labels used for each slot of a product profile.
hcrypt::Keystream pis_key(const hcrypt::MasterSecret& master, std::string_view id_p);
hcrypt::Keystream factor_key(const hcrypt::MasterSecret& master, std::string_view id_p,
                             std::uint32_t attribute, std::uint32_t value);
hcrypt::Keystream coeff_key(const hcrypt::MasterSecret& master, std::string_view id_p,
                            std::uint32_t attr_i, std::uint32_t attr_j, std::uint32_t a,
                            std::uint32_t b);
hcrypt::Keystream bid_key(const hcrypt::MasterSecret& master, std::string_view id_p);

ProductProfileEnc encrypt_product_profile(const ProductProfileClear& clear,
                                          const hcrypt::MasterSecret& master);

/// Compact JSON, fields in fixed order: v, id_P, id_R, rank_url, pis, F, C.
std::string serialize_profile(const ProductProfileEnc& enc);
/// Throws FormatError on malformed or out-of-shape input.
ProductProfileEnc parse_profile(std::string_view document, const AttributeSchema& schema);

/// Shape check of an encrypted profile against a schema; empty when valid.
std::optional<std::string> shape_error(const ProductProfileEnc& enc,
                                       const AttributeSchema& schema);

}  // namespace pprt::catalog
