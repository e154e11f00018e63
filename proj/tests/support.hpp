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

// Small in-process market shared by the unit tests.

#pragma once

#include <map>
#include <memory>
#include <string>

#include "pprt/catalog.hpp"
#include "pprt/client_agent.hpp"
#include "pprt/ranking_service.hpp"
#include "pprt/retargeter.hpp"

namespace pprt::testing {

inline const catalog::AttributeSchema& schema() {
  return catalog::AttributeSchema::default_schema();
}

inline const catalog::UserProfile kUser{{1, 0, 89, 1, 2, 2, 3}};

struct Party {
  std::unique_ptr<retargeter::Retargeter> retargeter;
  std::unique_ptr<ranking::RankingService> ranking;
  std::string ranking_url;
};

class Market {
 public:
  explicit Market(ranking::RankingPolicy policy = {}) : policy_(policy) {}

  retargeter::Retargeter& add_retargeter(const std::string& id_r,
                                         retargeter::RetargeterConfig config = {}) {
    hcrypt::MasterSecret master = hcrypt::MasterSecret::random();
    Party p;
    p.ranking_url = "https://" + id_r + ".rank.example/rank";
    p.retargeter = std::make_unique<retargeter::Retargeter>(id_r, schema(), master,
                                                            hcrypt::KeyPair::generate(), config);
    p.ranking = std::make_unique<ranking::RankingService>(id_r, schema(), master, policy_,
                                                          hcrypt::KeyPair::generate());
    auto& r = *p.retargeter;
    parties_[id_r] = std::move(p);
    return r;
  }

  Party& party(const std::string& id_r) { return parties_.at(id_r); }

  void add_product(const std::string& id_r, const std::string& id_p, double ctr = 0.01,
                   std::int64_t cpc = 500'000, catalog::FactorOverrides factors = {},
                   std::vector<catalog::CoefficientTable> coefficients = {}) {
    catalog::ProductSpec s{id_p, id_r, ctr, cpc, party(id_r).ranking_url, std::move(factors),
                           std::move(coefficients)};
    party(id_r).retargeter->add_product(catalog::build_product_profile_clear(s, schema()));
    party(id_r).retargeter->publish_feed();
  }

  catalog::ProductProfileEnc profile(const std::string& id_r, const std::string& id_p) {
    return *party(id_r).retargeter->published_profile(id_p);
  }

  /// Registers every retargeter and ranking service with the client.
  void connect(client::ClientAgent& c) {
    for (auto& [id_r, p] : parties_) {
      c.register_retargeter(id_r, p.retargeter->public_key());
      c.register_ranking_service(p.ranking_url, p.ranking->channel_public_key());
    }
  }

  client::RankingSender sender(const std::string& channel = "client-1") {
    return [this, channel](const std::string& url, const std::string& body, TimeMs t) {
      for (auto& [_, p] : parties_)
        if (p.ranking_url == url)
          return std::optional<std::string>(p.ranking->handle_sealed_rank(body, channel, t));
      return std::optional<std::string>();
    };
  }

 private:
  ranking::RankingPolicy policy_;
  std::map<std::string, Party> parties_;
};

}  // namespace pprt::testing
