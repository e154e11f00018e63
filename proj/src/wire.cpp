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

#include "pprt/wire.hpp"

#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace pprt::wire {

struct HttpServer::Impl {
  httplib::Server server;
  std::thread thread;
};

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kJson = "application/json";
constexpr const char* kOctets = "application/octet-stream";

TimeMs request_time(const httplib::Request& req) {
  if (!req.has_header(kTimeHeader)) return 0;
  try {
    return std::stoll(req.get_header_value(kTimeHeader));
  } catch (const std::exception&) {
    return 0;
  }
}

std::string request_addr(const httplib::Request& req) {
  return req.has_header(kAddrHeader) ? req.get_header_value(kAddrHeader) : req.remote_addr;
}

httplib::Headers sim_headers(const std::string& addr, TimeMs now) {
  return {{kTimeHeader, std::to_string(now)}, {kAddrHeader, addr}};
}

httplib::Client make_client(const std::string& base_url) {
  httplib::Client cli(base_url);
  cli.set_connection_timeout(5, 0);
  cli.set_read_timeout(30, 0);
  return cli;
}

void bad_request(httplib::Response& res, const std::string& what) {
  res.status = 400;
  res.set_content(what, "text/plain");
}

}  // namespace

HttpServer::HttpServer() : impl_(std::make_unique<Impl>()) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  if (port_ < 0) throw std::runtime_error("cannot bind a localhost port");
  return port_;
}

void HttpServer::start() {
  if (port_ < 0) bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string HttpServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

void mount_exchange(HttpServer& server, exchange::Exchange& ex) {
  auto& s = server.impl().server;
  s.Post("/adreq", [&ex](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto ad_req = msg::parse_ad_request(req.body);
      const auto delivery = ex.handle_ad_request(ad_req, request_addr(req), request_time(req));
      res.set_content(msg::serialize(delivery), kJson);
    } catch (const msg::MessageError& e) {
      bad_request(res, e.what());
    }
  });
  s.Get("/proxy", [&ex](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("u")) return bad_request(res, "missing u");
    const std::string url =
        ex.config().proxy_base + "/proxy?u=" + msg::url_encode(req.get_param_value("u"));
    auto bytes = ex.proxy_fetch_ad(url, request_time(req));
    if (!bytes) {
      res.status = 404;
      return;
    }
    res.set_content(std::string(bytes->begin(), bytes->end()), kOctets);
  });
  s.Post("/report", [&ex](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto raw = msg::parse_raw_report(req.body);
      auto fwd = ex.anonymize_report(raw, request_addr(req), request_time(req));
      if (!fwd) {
        res.status = 404;
        return;
      }
      res.set_content(msg::serialize(*fwd), kJson);
    } catch (const msg::MessageError& e) {
      bad_request(res, e.what());
    }
  });
  s.Post("/trace", [&ex](const httplib::Request& req, httplib::Response& res) {
    std::vector<std::string> ids;
    try {
      ids = json::parse(req.body).at("report_ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      return bad_request(res, e.what());
    }
    json out = json::array();
    for (const auto& [id, addr] : ex.trace_click_fraud(ids, request_time(req)))
      out.push_back({{"report_id", id}, {"addr", addr}});
    res.set_content(json{{"traced", out}}.dump(), kJson);
  });
}

void mount_retargeter(HttpServer& server, retargeter::Retargeter& r,
                      ranking::RankingService& ranking, Observer observer) {
  auto& s = server.impl().server;
  auto observe = [observer](std::string_view route, const httplib::Request& req) {
    if (observer) observer(route, request_addr(req), req.body.empty() ? req.target : req.body);
  };
  s.Post("/bid", [&r, observe](const httplib::Request& req, httplib::Response& res) {
    observe("/bid", req);
    try {
      auto resp = r.handle_bid_request(msg::parse_bid_request(req.body), request_time(req));
      if (!resp) {
        res.status = 204;
        return;
      }
      res.set_content(msg::serialize(*resp), kJson);
    } catch (const msg::MessageError& e) {
      bad_request(res, e.what());
    }
  });
  s.Get(R"(/ad/([0-9a-f]+))", [&r, observe](const httplib::Request& req, httplib::Response& res) {
    observe("/ad", req);
    auto bytes = r.serve_ad(req.matches[1], request_time(req));
    if (!bytes) {
      res.status = 404;
      return;
    }
    res.set_content(std::string(bytes->begin(), bytes->end()), kOctets);
  });
  s.Post("/report", [&r, observe](const httplib::Request& req, httplib::Response& res) {
    observe("/report", req);
    res.status = r.receive_report(std::string_view(req.body)) ? 204 : 404;
  });
  s.Post("/win", [&r, observe](const httplib::Request& req, httplib::Response& res) {
    observe("/win", req);
    try {
      const json doc = json::parse(req.body);
      r.notify_win(msg::rid_from_hex(doc.at("rid").get<std::string>()),
                   doc.at("price").get<std::int64_t>());
      res.status = 204;
    } catch (const std::exception& e) {
      bad_request(res, e.what());
    }
  });
  s.Post("/rank", [&ranking, observe](const httplib::Request& req, httplib::Response& res) {
    observe("/rank", req);
    try {
      res.set_content(ranking.handle_sealed_rank(req.body, request_addr(req), request_time(req)),
                      kJson);
    } catch (const std::invalid_argument& e) {
      bad_request(res, e.what());
    }
  });
  s.Post("/stats", [&ranking, observe](const httplib::Request& req, httplib::Response& res) {
    observe("/stats", req);
    try {
      ranking.handle_sealed_stats(req.body);
      res.status = 204;
    } catch (const std::invalid_argument& e) {
      bad_request(res, e.what());
    }
  });
  s.Post("/stats/release", [&ranking](const httplib::Request&, httplib::Response& res) {
    res.set_content(ranking.release_statistics().to_json(), kJson);
  });
}

HttpBidderLink::HttpBidderLink(std::string base_url, std::string self_addr)
    : base_url_(std::move(base_url)), self_addr_(std::move(self_addr)) {}

std::optional<msg::BidResponse> HttpBidderLink::bid(const msg::BidRequest& req, TimeMs now) {
  auto cli = make_client(base_url_);
  auto res = cli.Post("/bid", sim_headers(self_addr_, now), msg::serialize(req), kJson);
  if (!res || res->status != 200) return std::nullopt;
  try {
    return msg::parse_bid_response(res->body);
  } catch (const msg::MessageError&) {
    return std::nullopt;
  }
}

std::optional<hcrypt::Bytes> HttpBidderLink::fetch_ad(const std::string& ad_url, TimeMs now) {
  auto id = exchange::creative_id_from_url(ad_url);
  if (!id) return std::nullopt;
  auto cli = make_client(base_url_);
  auto res = cli.Get("/ad/" + *id, sim_headers(self_addr_, now));
  if (!res || res->status != 200) return std::nullopt;
  return hcrypt::Bytes(res->body.begin(), res->body.end());
}

void HttpBidderLink::notify_win(const msg::RequestId& rid, std::int64_t clearing_price_micros) {
  auto cli = make_client(base_url_);
  const json doc{{"rid", msg::to_hex(rid)}, {"price", clearing_price_micros}};
  cli.Post("/win", sim_headers(self_addr_, 0), doc.dump(), kJson);
}

bool HttpBidderLink::deliver_report(const msg::ForwardedReport& report) {
  auto cli = make_client(base_url_);
  auto res = cli.Post("/report", sim_headers(self_addr_, report.coarse_timestamp),
                      msg::serialize(report), kJson);
  return res && res->status == 204;
}

ExchangeClient::ExchangeClient(std::string base_url) : base_url_(std::move(base_url)) {}

std::optional<msg::AdDelivery> ExchangeClient::ad_request(const msg::AdRequest& req,
                                                          const std::string& addr, TimeMs now) {
  auto cli = make_client(base_url_);
  auto res = cli.Post("/adreq", sim_headers(addr, now), msg::serialize(req), kJson);
  if (!res || res->status != 200) return std::nullopt;
  try {
    return msg::parse_ad_delivery(res->body);
  } catch (const msg::MessageError&) {
    return std::nullopt;
  }
}

std::optional<hcrypt::Bytes> ExchangeClient::fetch(const std::string& url,
                                                   const std::string& addr, TimeMs now) {
  const auto [base, path] = split_url(url);
  auto cli = make_client(base);
  auto res = cli.Get(path, sim_headers(addr, now));
  if (!res || res->status != 200) return std::nullopt;
  return hcrypt::Bytes(res->body.begin(), res->body.end());
}

std::optional<msg::ForwardedReport> ExchangeClient::report(const msg::RawReport& raw,
                                                           const std::string& addr, TimeMs now) {
  auto cli = make_client(base_url_);
  auto res = cli.Post("/report", sim_headers(addr, now), msg::serialize(raw), kJson);
  if (!res || res->status != 200) return std::nullopt;
  try {
    return msg::parse_forwarded_report(res->body);
  } catch (const msg::MessageError&) {
    return std::nullopt;
  }
}

std::vector<std::pair<std::string, std::string>> ExchangeClient::trace(
    const std::vector<std::string>& ids, TimeMs now) {
  auto cli = make_client(base_url_);
  auto res = cli.Post("/trace", sim_headers("", now), json{{"report_ids", ids}}.dump(), kJson);
  std::vector<std::pair<std::string, std::string>> out;
  if (!res || res->status != 200) return out;
  try {
    for (const auto& e : json::parse(res->body).at("traced"))
      out.emplace_back(e.at("report_id").get<std::string>(), e.at("addr").get<std::string>());
  } catch (const json::exception&) {
    out.clear();
  }
  return out;
}

std::optional<std::string> post_rank(const std::string& ranking_url, const std::string& body,
                                     const std::string& addr, TimeMs now) {
  const auto [base, path] = split_url(ranking_url);
  auto cli = make_client(base);
  auto res = cli.Post(path, sim_headers(addr, now), body, kJson);
  if (!res || res->status != 200) return std::nullopt;
  return res->body;
}

std::pair<std::string, std::string> split_url(std::string_view url) {
  const auto scheme = url.find("://");
  const auto host_start = scheme == std::string_view::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

}  // namespace pprt::wire
