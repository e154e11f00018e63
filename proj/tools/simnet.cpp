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

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pprt/simnet.hpp"

namespace {

using pprt::simnet::ScenarioConfig;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text << "\n";
}

ScenarioConfig load_config(const std::string& path) {
  return path.empty() ? pprt::simnet::desk_config() : ScenarioConfig::from_json(read_file(path));
}

void print_summary(const pprt::simnet::RunMetrics& m) {
  std::cerr << "auctions " << m.auctions << ", oracle agreement " << m.oracle_agreement * 100
            << "%, hygiene violations " << m.hygiene.violations() << ", " << std::fixed
            << std::setprecision(2) << m.wall_seconds << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-preserving retargeting network simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a scenario and emit metrics");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out_path;
  std::string csv_path;
  run->add_option("--config", config_path, "Scenario config (JSON); desk defaults if omitted");
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--mode", mode, "inproc | wire")->check(CLI::IsMember({"inproc", "wire"}));
  run->add_option("--out", out_path, "Metrics JSON path ('-' for stdout)");
  run->add_option("--csv", csv_path, "Also write metrics as CSV");

  auto* client = app.add_subcommand("client", "Run the scenario with explicit client settings");
  std::string client_config;
  std::size_t store_cap = 1000;
  std::size_t top_m = 3;
  std::uint32_t freq_cap = 10;
  std::int64_t jitter_max = 2000;
  std::uint64_t client_seed = 1;
  client->add_option("--config", client_config, "Scenario config (JSON)");
  client->add_option("--store-cap", store_cap, "Stored products per client")->check(CLI::PositiveNumber);
  client->add_option("--top-m", top_m, "Products offered per retargeter")->check(CLI::PositiveNumber);
  client->add_option("--freq-cap", freq_cap, "Impressions per product per day")
      ->check(CLI::PositiveNumber);
  client->add_option("--jitter-max", jitter_max, "Maximum send delay in ms")
      ->check(CLI::NonNegativeNumber);
  client->add_option("--seed", client_seed, "Seed");

  auto* bench = app.add_subcommand("bench", "Throughput of the cryptographic operations");
  double seconds = 0.5;
  bench->add_option("--seconds", seconds, "Minimum time per operation")->check(CLI::PositiveNumber);

  auto* measure = app.add_subcommand("measure", "Serialized message sizes");
  std::uint64_t measure_seed = 1;
  measure->add_option("--seed", measure_seed, "Seed");

  auto* config = app.add_subcommand("config", "Print the desk default config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (!mode.empty())
        cfg.mode = mode == "wire" ? pprt::simnet::Mode::kWire : pprt::simnet::Mode::kInProcess;
      const auto m = pprt::simnet::run_scenario(cfg);
      write_or_print(out_path, m.to_json());
      if (!csv_path.empty()) write_or_print(csv_path, m.to_csv());
      print_summary(m);
      return m.hygiene.violations() == 0 ? 0 : 2;
    }
    if (*client) {
      auto cfg = load_config(client_config);
      cfg.store_cap = store_cap;
      cfg.top_m = top_m;
      cfg.freq_cap = freq_cap;
      cfg.jitter_max_ms = jitter_max;
      cfg.seed = client_seed;
      const auto m = pprt::simnet::run_scenario(cfg);
      std::cout << m.to_json() << "\n";
      print_summary(m);
      return m.hygiene.violations() == 0 ? 0 : 2;
    }
    if (*bench) {
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& r : pprt::simnet::bench(seconds))
        out.push_back({{"op", r.name}, {"ops", r.ops}, {"seconds", r.seconds},
                       {"ops_per_second", r.ops_per_second()}});
      std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (*measure) {
      std::cout << pprt::simnet::measure_messages(measure_seed).to_json() << "\n";
      return 0;
    }
    if (*config) {
      std::cout << pprt::simnet::desk_config().to_json() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
