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
#include <random>

#include "json.hpp"
#include "pprt/catalog.hpp"

namespace pprt::catalog {
namespace {

const AttributeSchema& schema() { return AttributeSchema::default_schema(); }

ProductSpec basic_spec(const std::string& id = "P1") {
  ProductSpec s;
  s.id_p = id;
  s.id_r = "R1";
  s.ctr_default = 0.01;
  s.cpc_micros = 500'000;
  s.ranking_url = "https://r1.example/rank";
  return s;
}

hcrypt::MasterSecret master() {
  hcrypt::MasterSecret m;
  m.bytes.fill(0x5a);
  return m;
}

TEST(Schema, Defaults) {
  ASSERT_EQ(schema().size(), 7u);
  EXPECT_EQ(schema().total_slots(), 894u);
  EXPECT_EQ(schema()[0].name, "age");
  EXPECT_EQ(schema()[2].name, "locality");
  EXPECT_EQ(schema()[2].cardinality, 846u);
  EXPECT_EQ(schema().index_of("interest"), 3u);
  EXPECT_FALSE(schema().index_of("shoe_size").has_value());
  EXPECT_THROW(AttributeSchema({{"x", 0}}), CatalogError);
}

TEST(UserProfiles, Validation) {
  EXPECT_TRUE(validate_user_profile({{1, 0, 89, 1, 2, 2, 3}}, schema()).empty());
  const auto bad = validate_user_profile({{1, 0, 846, 1, 2, 2, 3}}, schema());
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0].attribute, 2u);
  EXPECT_TRUE(validate_user_profile({{1, 0, 845, 1, 2, 2, 3}}, schema()).empty());
  const auto short_u = validate_user_profile({{1, 0, 3, 4, 2, 2}}, schema());
  ASSERT_EQ(short_u.size(), 1u);
  EXPECT_EQ(short_u[0].attribute, schema().size());
}

TEST(FixedLogs, KnownValues) {
  EXPECT_EQ(encode_log(1'000'000).v, 13'815'511);
  EXPECT_EQ(decode_log(FixedLog{0}), 1);
  EXPECT_EQ(encode_ratio_log(1'200'000).v, 182'322);
  EXPECT_EQ(encode_ratio_log(900'000).v, -105'361);
  EXPECT_EQ(encode_ratio_log(1'000'000).v, 0);
  EXPECT_THROW(encode_log(0), CatalogError);
  EXPECT_THROW(encode_ratio_log(-1), CatalogError);
}

TEST(FixedLogs, RoundTripWithinTolerance) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10'000; ++i) {
    const std::int64_t x = 1'000 + static_cast<std::int64_t>(rng() % 10'000'000'000ULL);
    const auto v = encode_log(x);
    EXPECT_LT(std::llabs(v.v), std::int64_t{1} << 36);
    const double back = std::exp(static_cast<double>(v.v) / 1e6);
    ASSERT_LE(std::fabs(back / static_cast<double>(x) - 1.0), 2e-6) << x;
  }
}

TEST(Build, PisAndDefaults) {
  const auto p = build_product_profile_clear(basic_spec(), schema());
  EXPECT_EQ(p.pis_micros, 5'000);
  ASSERT_EQ(p.factors.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(p.factors[i].size(), schema()[i].cardinality);
    for (auto f : p.factors[i]) EXPECT_EQ(f, 1'000'000);
  }
}

TEST(Build, PartialFactorsFilled) {
  auto spec = basic_spec();
  spec.factors[1] = {1'200'000, 900'000};
  const auto p = build_product_profile_clear(spec, schema());
  EXPECT_EQ(p.factors[1], (std::vector<std::int64_t>{1'200'000, 900'000}));
  for (std::size_t i = 0; i < 7; ++i)
    if (i != 1)
      for (auto f : p.factors[i]) EXPECT_EQ(f, 1'000'000);
}

TEST(Build, Rejections) {
  auto spec = basic_spec();
  spec.factors[0] = {0, 1};
  EXPECT_THROW(build_product_profile_clear(spec, schema()), CatalogError);
  spec.factors[1] = {1, 1, 1};
  EXPECT_THROW(build_product_profile_clear(spec, schema()), CatalogError);
  spec = basic_spec();
  spec.factors[7] = {1};
  EXPECT_THROW(build_product_profile_clear(spec, schema()), CatalogError);
  spec = basic_spec();
  spec.ctr_default = 1.5;
  EXPECT_THROW(build_product_profile_clear(spec, schema()), CatalogError);
  spec = basic_spec();
  spec.coefficients.push_back({1, 0, 7, 2, std::vector<std::int64_t>(14, 1'000'000)});
  EXPECT_THROW(build_product_profile_clear(spec, schema()), CatalogError);
  spec.coefficients[0] = {0, 1, 2, 7, std::vector<std::int64_t>(13, 1'000'000)};
  EXPECT_THROW(build_product_profile_clear(spec, schema()), CatalogError);
}

TEST(Build, PisConsistency) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 500; ++i) {
    auto spec = basic_spec();
    spec.ctr_default = std::uniform_real_distribution<double>(0.001, 0.1)(rng);
    spec.cpc_micros = 10'000 + static_cast<std::int64_t>(rng() % 5'000'000);
    const auto p = build_product_profile_clear(spec, schema());
    EXPECT_EQ(p.pis_micros, std::llround(spec.ctr_default * static_cast<double>(spec.cpc_micros)));
  }
}

ProductProfileClear rich_profile() {
  auto spec = basic_spec();
  std::mt19937_64 rng(7);
  for (std::size_t a = 0; a < schema().size(); ++a)
    for (std::uint32_t v = 0; v < schema()[a].cardinality; ++v)
      spec.factors[a].push_back(500'000 + static_cast<std::int64_t>(rng() % 1'500'000));
  CoefficientTable t{0, 3, 7, 24, {}};
  for (int i = 0; i < 7 * 24; ++i) t.values.push_back(800'000 + static_cast<std::int64_t>(i) * 1000);
  spec.coefficients.push_back(t);
  return build_product_profile_clear(spec, schema());
}

TEST(Encrypt, SlotsDecryptToEncodedValues) {
  const auto clear = rich_profile();
  const auto enc = encrypt_product_profile(clear, master());
  EXPECT_EQ(hcrypt::dec(enc.pis, pis_key(master(), "P1")), encode_log(clear.pis_micros).v);
  for (std::uint32_t i = 0; i < clear.factors.size(); ++i)
    for (std::uint32_t j = 0; j < clear.factors[i].size(); ++j)
      ASSERT_EQ(hcrypt::dec(enc.factors[i][j], factor_key(master(), "P1", i, j)),
                encode_ratio_log(clear.factors[i][j]).v);
  const auto& t = clear.coefficients[0];
  for (std::uint32_t a = 0; a < t.rows; ++a)
    for (std::uint32_t b = 0; b < t.cols; ++b)
      ASSERT_EQ(hcrypt::dec(enc.coefficients[0].at(a, b), coeff_key(master(), "P1", 0, 3, a, b)),
                encode_ratio_log(t.at(a, b)).v);
}

TEST(Encrypt, DeterministicAndCounted) {
  const auto clear = build_product_profile_clear(basic_spec(), schema());
  const auto a = encrypt_product_profile(clear, master());
  EXPECT_EQ(a, encrypt_product_profile(clear, master()));
  EXPECT_EQ(serialize_profile(a), serialize_profile(encrypt_product_profile(clear, master())));
  EXPECT_EQ(a.ciphertext_count(), 895u);
  EXPECT_NE(a.pis, encrypt_product_profile(clear, hcrypt::MasterSecret{}).pis);
}

TEST(Serialize, RoundTripAndSize) {
  const auto plain = encrypt_product_profile(build_product_profile_clear(basic_spec(), schema()),
                                             master());
  const auto doc = serialize_profile(plain);
  EXPECT_EQ(parse_profile(doc, schema()), plain);
  EXPECT_LE(doc.size(), 32u * 1024u);
  const auto rich = encrypt_product_profile(rich_profile(), master());
  EXPECT_EQ(parse_profile(serialize_profile(rich), schema()), rich);
  // Plaintext never appears in the document.
  EXPECT_EQ(doc.find("500000"), std::string::npos);
}

TEST(Serialize, Rejections) {
  const auto plain = encrypt_product_profile(build_product_profile_clear(basic_spec(), schema()),
                                             master());
  auto doc = nlohmann::ordered_json::parse(serialize_profile(plain));
  auto wide = doc;
  wide["F"][1].push_back(wide["F"][1][0]);  // gender gets 3 slots
  EXPECT_THROW(parse_profile(wide.dump(), schema()), FormatError);
  auto version = doc;
  version["v"] = 99;
  EXPECT_THROW(parse_profile(version.dump(), schema()), FormatError);
  auto missing = doc;
  missing.erase("pis");
  EXPECT_THROW(parse_profile(missing.dump(), schema()), FormatError);
  auto bad_ct = doc;
  bad_ct["pis"] = "not base64!";
  EXPECT_THROW(parse_profile(bad_ct.dump(), schema()), FormatError);
  EXPECT_THROW(parse_profile("{", schema()), FormatError);
  EXPECT_THROW(parse_profile("[]", schema()), FormatError);
}

}  // namespace
}  // namespace pprt::catalog
