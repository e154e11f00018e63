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

#include <chrono>
#include <functional>
#include <random>

#include "json.hpp"
#include "pprt/client_agent.hpp"
#include "pprt/messages.hpp"
#include "pprt/ranking_service.hpp"
#include "pprt/simnet.hpp"

namespace pprt::simnet {
namespace {

using json = nlohmann::ordered_json;

// Keeps results observable so the optimizer cannot drop the work.
volatile std::uint64_t g_sink = 0;

BenchResult time_op(std::string name, double min_seconds, std::uint64_t batch,
                    const std::function<void()>& op) {
  using clock = std::chrono::steady_clock;
  BenchResult r{std::move(name), 0, 0.0};
  for (std::uint64_t i = 0; i < batch / 10 + 1; ++i) op();  // warm-up
  const auto start = clock::now();
  do {
    for (std::uint64_t i = 0; i < batch; ++i) op();
    r.ops += batch;
    r.seconds = std::chrono::duration<double>(clock::now() - start).count();
  } while (r.seconds < min_seconds);
  return r;
}

catalog::ProductProfileClear sample_product(const std::string& id_p, const std::string& id_r,
                                            bool with_coefficients, std::mt19937_64& rng) {
  const auto& schema = catalog::AttributeSchema::default_schema();
  std::uniform_int_distribution<std::int64_t> factor(500'000, 2'000'000);
  catalog::ProductSpec spec;
  spec.id_p = id_p;
  spec.id_r = id_r;
  spec.ctr_default = 0.01;
  spec.cpc_micros = 500'000;
  spec.ranking_url = "https://" + id_r + ".rank.example/rank";
  for (std::size_t a = 0; a < schema.size(); ++a) {
    auto& slots = spec.factors[a];
    for (std::uint32_t v = 0; v < schema[a].cardinality; ++v) slots.push_back(factor(rng));
  }
  if (with_coefficients) {
    catalog::CoefficientTable t{0, 1, schema[0].cardinality, schema[1].cardinality, {}};
    for (std::uint32_t i = 0; i < t.rows * t.cols; ++i) t.values.push_back(factor(rng));
    spec.coefficients.push_back(std::move(t));
  }
  return catalog::build_product_profile_clear(spec, schema);
}

catalog::UserProfile sample_user(std::mt19937_64& rng) {
  const auto& schema = catalog::AttributeSchema::default_schema();
  catalog::UserProfile u;
  for (std::size_t a = 0; a < schema.size(); ++a)
    u.values.push_back(
        std::uniform_int_distribution<std::uint32_t>(0, schema[a].cardinality - 1)(rng));
  return u;
}

}  // namespace

std::vector<BenchResult> bench(double min_seconds) {
  std::mt19937_64 rng(7);
  std::vector<BenchResult> out;
  const auto master = hcrypt::MasterSecret::random();

  {
    std::uint64_t m = 1;
    hcrypt::Ciphertext acc = hcrypt::enc(0, hcrypt::Keystream{rng()});
    out.push_back(time_op("homomorphic_op", min_seconds, 100'000, [&] {
      acc = acc + hcrypt::enc(static_cast<std::int64_t>(++m & 0xffffff), hcrypt::Keystream{m * 0x9e3779b97f4a7c15ULL});
    }));
    g_sink = acc.value;
  }
  {
    const auto clear = sample_product("adv00-p0000", "ret00", false, rng);
    out.push_back(time_op("profile_encryption", min_seconds, 20, [&] {
      g_sink = catalog::encrypt_product_profile(clear, master).pis.value;
    }));
  }
  {
    // The ranking-service path: derive the score key, then decrypt.
    const auto clear = sample_product("adv00-p0001", "ret00", false, rng);
    const auto enc = catalog::encrypt_product_profile(clear, master);
    const auto u = sample_user(rng);
    const auto score = client::compute_encrypted_score(enc, u);
    out.push_back(time_op("score_decryption", min_seconds, 5'000, [&] {
      hcrypt::Keystream k = catalog::pis_key(master, clear.id_p);
      for (std::uint32_t i = 0; i < u.values.size(); ++i)
        k = hcrypt::add_keys(k, catalog::factor_key(master, clear.id_p, i, u.values[i]));
      g_sink = static_cast<std::uint64_t>(hcrypt::dec(score, k));
    }));
  }
  {
    const auto key = hcrypt::SessionKey::random();
    const hcrypt::Bytes asset(10 * 1024, '.');
    hcrypt::Bytes sealed = hcrypt::aead_seal(asset, key, hcrypt::context::kAdContent);
    bool seal = true;
    out.push_back(time_op("ad_aead", min_seconds, 2'000, [&] {
      if (seal) {
        sealed = hcrypt::aead_seal(asset, key, hcrypt::context::kAdContent);
      } else {
        g_sink = hcrypt::aead_open(sealed, key, hcrypt::context::kAdContent)->size();
      }
      seal = !seal;
    }));
  }
  {
    const auto kp = hcrypt::KeyPair::generate();
    const auto key = hcrypt::SessionKey::random();
    out.push_back(time_op("session_key_seal_open", min_seconds, 200, [&] {
      g_sink = hcrypt::open_session_key(hcrypt::seal_session_key(key, kp.public_key), kp)->bytes[0];
    }));
  }
  return out;
}

std::string MessageSizes::to_json() const {
  json d;
  d["profile_bytes"] = profile_bytes;
  d["profile_with_coefficients_bytes"] = profile_with_coefficients_bytes;
  d["ad_request_bytes"] = ad_request_bytes;
  d["ranking_request_bytes"] = ranking_request_bytes;
  return d.dump(2);
}

MessageSizes measure_messages(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& schema = catalog::AttributeSchema::default_schema();
  MessageSizes sizes;
  const auto master = hcrypt::MasterSecret::random();

  const auto plain = catalog::encrypt_product_profile(
      sample_product("adv00-p0000", "ret00", false, rng), master);
  sizes.profile_bytes = catalog::serialize_profile(plain).size();
  sizes.profile_with_coefficients_bytes =
      catalog::serialize_profile(
          catalog::encrypt_product_profile(sample_product("adv00-p0001", "ret00", true, rng),
                                           master))
          .size();

  // 3 retargeters x 3 products through a real client agent.
  client::ClientConfig ccfg;
  ccfg.seed = seed;
  client::ClientAgent agent(schema, ccfg);
  std::vector<std::unique_ptr<ranking::RankingService>> services;
  std::map<std::string, ranking::RankingService*> by_url;
  const auto u = sample_user(rng);
  for (unsigned r = 0; r < 3; ++r) {
    const std::string id_r = "ret0" + std::to_string(r);
    const auto rmaster = hcrypt::MasterSecret::random();
    const auto rkeys = hcrypt::KeyPair::generate();
    services.push_back(std::make_unique<ranking::RankingService>(
        id_r, schema, rmaster, ranking::RankingPolicy{}, hcrypt::KeyPair::generate()));
    agent.register_retargeter(id_r, rkeys.public_key);
    for (unsigned p = 0; p < 3; ++p) {
      auto clear = sample_product("adv0" + std::to_string(r) + "-p000" + std::to_string(p), id_r,
                                  false, rng);
      by_url[clear.ranking_url] = services.back().get();
      agent.register_ranking_service(clear.ranking_url, services.back()->channel_public_key());
      agent.record_product(catalog::encrypt_product_profile(clear, rmaster), u, 0);
    }
    agent.request_ranking(id_r, 0, [&](const std::string& url, const std::string& body, TimeMs t) {
      return std::optional<std::string>(by_url.at(url)->handle_sealed_rank(body, "client", t));
    });
  }
  sizes.ad_request_bytes =
      msg::serialize(agent.build_ad_request("https://pub00.example/article/1", 0).request).size();

  // Ranking request with 20 products, as sealed on the wire.
  ranking::RankingRequest req;
  req.u = u;
  for (unsigned p = 0; p < 20; ++p) {
    ranking::RankingEntry e;
    e.id_p = "adv00-p00" + std::to_string(10 + p);
    e.score = hcrypt::Ciphertext{rng()};
    auto pu = u;
    pu.values[4] = p % 5;
    if (pu != u) e.u = pu;
    req.entries.push_back(std::move(e));
  }
  const auto sc = hcrypt::KeyPair::generate();
  sizes.ranking_request_bytes =
      ranking::seal_for_service(ranking::serialize(req), sc.public_key,
                                hcrypt::context::kRankingRequest)
          .wire.size();
  return sizes;
}

}  // namespace pprt::simnet
