// Copyright 2026 The mlmc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "mlmc/remote.hpp"

#include <cmath>
#include <set>

#include <httplib.h>

namespace mlmc::remote {

using nlohmann::json;
using nlohmann::ordered_json;

HttpError::HttpError(int status, std::string body)
    : TransportError("HTTP " + std::to_string(status) + ": " + body),
      status_(status),
      body_(std::move(body)) {}

// ---------------------------------------------------------------------------
// schema

Violations validate(const ScoreRequest& r) {
  Violations out;
  std::int64_t expect = -1;
  for (std::int64_t v : r.encoder_tokens) {
    if (v >= 0) continue;
    if (v != expect) {
      out.push_back({"encoder_tokens", "sentinel markers strictly decreasing from -1"});
      break;
    }
    --expect;
  }
  if (expect == -1) out.push_back({"encoder_tokens", "at least one sentinel marker"});
  const std::int64_t lowest = expect + 1;

  std::int64_t last = 0;
  for (std::size_t i = 0; i < r.decoder_prefix.size(); ++i) {
    const std::int64_t v = r.decoder_prefix[i];
    if (i == 0 && v >= 0) {
      out.push_back({"decoder_prefix", "starts with a sentinel marker"});
      break;
    }
    if (v >= 0) continue;
    if (v >= last || v < lowest) {
      out.push_back({"decoder_prefix", "markers decreasing and present in encoder_tokens"});
      break;
    }
    last = v;
  }
  // The target slot must remain after the listed ones.
  if (last != 0 && last <= lowest) {
    out.push_back({"decoder_prefix", "a target slot remains after the listed slots"});
  }

  if (r.candidates.empty()) out.push_back({"candidates", "candidates nonempty"});
  for (const auto& c : r.candidates) {
    bool bad = c.empty();
    for (std::int64_t t : c) bad |= t < 0;
    if (bad) {
      out.push_back({"candidates", "each candidate a nonempty list of token ids"});
      break;
    }
  }
  return out;
}

Violations validate(const ScoreResponse& r, std::size_t expected_candidates) {
  Violations out;
  if (r.log_probs.size() != expected_candidates) {
    out.push_back({"log_probs", "length matches request candidates"});
  }
  for (double v : r.log_probs) {
    if (!std::isfinite(v)) {
      out.push_back({"log_probs", "log_probs finite"});
      break;
    }
  }
  return out;
}

ordered_json to_json(const ScoreRequest& r) {
  return ordered_json{{"request_id", r.request_id},         {"prompt_prefix", r.prompt_prefix},
                      {"encoder_tokens", r.encoder_tokens}, {"decoder_prefix", r.decoder_prefix},
                      {"candidates", r.candidates},         {"normalize", r.normalize}};
}

ordered_json to_json(const ScoreResponse& r) {
  return ordered_json{{"request_id", r.request_id},
                      {"log_probs", r.log_probs},
                      {"model_id", r.model_id},
                      {"usage",
                       ordered_json{{"prompt_tokens", r.usage.prompt_tokens},
                                    {"candidate_tokens", r.usage.candidate_tokens}}}};
}

ordered_json to_json(const ServerInfo& info) {
  ordered_json j{{"model_id", info.model_id}, {"max_len", info.max_len}, {"styles", info.styles}};
  if (info.vocab_size) j["vocab_size"] = *info.vocab_size;
  return j;
}

namespace {

template <typename T>
T get_field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) {
    throw InvalidArgument(std::string(name) + ": missing field");
  }
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string(name) + ": " + e.what());
  }
}

// Field name is the text before the first ':' of a schema error.
std::string error_field(const std::string& what) {
  const auto colon = what.find(':');
  return colon == std::string::npos ? std::string() : what.substr(0, colon);
}

}  // namespace

ScoreRequest request_from_json(const json& j) {
  ScoreRequest r;
  if (j.contains("request_id")) r.request_id = get_field<std::string>(j, "request_id");
  if (j.contains("prompt_prefix")) r.prompt_prefix = get_field<std::string>(j, "prompt_prefix");
  r.encoder_tokens = get_field<std::vector<std::int64_t>>(j, "encoder_tokens");
  r.decoder_prefix = get_field<std::vector<std::int64_t>>(j, "decoder_prefix");
  r.candidates = get_field<std::vector<std::vector<std::int64_t>>>(j, "candidates");
  if (j.contains("normalize")) r.normalize = get_field<bool>(j, "normalize");
  return r;
}

ScoreResponse response_from_json(const json& j) {
  ScoreResponse r;
  if (j.contains("request_id")) r.request_id = get_field<std::string>(j, "request_id");
  r.log_probs = get_field<std::vector<double>>(j, "log_probs");
  r.model_id = get_field<std::string>(j, "model_id");
  if (j.contains("usage")) {
    const auto& u = j.at("usage");
    r.usage.prompt_tokens = get_field<std::size_t>(u, "prompt_tokens");
    r.usage.candidate_tokens = get_field<std::size_t>(u, "candidate_tokens");
  }
  return r;
}

ServerInfo info_from_json(const json& j) {
  ServerInfo info;
  info.model_id = get_field<std::string>(j, "model_id");
  info.max_len = get_field<std::size_t>(j, "max_len");
  info.styles = get_field<std::vector<std::string>>(j, "styles");
  if (j.contains("vocab_size")) info.vocab_size = get_field<std::size_t>(j, "vocab_size");
  return info;
}

ScoreRequest to_request(const MaskedQuery& query, std::span<const TokenSeq> candidates,
                        const std::string& prompt_prefix, bool normalize) {
  require_valid(validate(query), "MaskedQuery");
  ScoreRequest r;
  r.prompt_prefix = prompt_prefix;
  r.normalize = normalize;
  for (const auto& item : query.encoder) {
    r.encoder_tokens.push_back(item.is_slot ? -static_cast<std::int64_t>(item.value) - 1
                                            : static_cast<std::int64_t>(item.value));
  }
  for (std::size_t i = 0; i < query.target_slot; ++i) {
    r.decoder_prefix.push_back(-static_cast<std::int64_t>(i) - 1);
    for (TokenId t : query.slots[i].given) r.decoder_prefix.push_back(t);
  }
  for (const auto& c : candidates) r.candidates.emplace_back(c.begin(), c.end());
  return r;
}

MaskedQuery query_from_request(const ScoreRequest& r) {
  require_valid(validate(r), "ScoreRequest");
  MaskedQuery q;
  q.pattern = MaskPattern::baseline();
  std::size_t slot_count = 0;
  for (std::int64_t v : r.encoder_tokens) {
    if (v < 0) {
      q.encoder.push_back(EncoderItem::slot(static_cast<std::uint32_t>(-v - 1)));
      ++slot_count;
    } else {
      q.encoder.push_back(EncoderItem::token(static_cast<TokenId>(v)));
    }
  }
  q.slots.assign(slot_count, Slot{{}, 1});
  std::size_t listed = 0;
  std::optional<std::size_t> current;
  for (std::int64_t v : r.decoder_prefix) {
    if (v < 0) {
      current = static_cast<std::size_t>(-v - 1);
      listed = *current + 1;
      continue;
    }
    q.slots[*current].given.push_back(static_cast<TokenId>(v));
  }
  for (auto& s : q.slots) {
    if (s.filled()) s.width = s.given.size();
  }
  q.target_slot = listed;
  q.slots[listed] = Slot{};
  return q;
}

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InvalidArgument("endpoint must include a scheme: " + url);
  const auto path = url.find('/', scheme + 3);
  Endpoint e;
  e.scheme_host_port = url.substr(0, path);
  if (path != std::string::npos) {
    e.base_path = url.substr(path);
    while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
  }
  return e;
}

// ---------------------------------------------------------------------------
// client

Client::Client(Endpoint endpoint, ClientOptions options)
    : endpoint_(std::move(endpoint)),
      options_(options),
      in_flight_(std::make_unique<std::counting_semaphore<>>(
          static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options.max_in_flight)))) {}

Client::~Client() = default;

std::string Client::send(const std::string& method, const std::string& path,
                         const std::string& body) const {
  in_flight_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{in_flight_.get()};

  const auto ms = options_.timeout.count();
  auto backoff = options_.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    httplib::Client cli(endpoint_.scheme_host_port);
    cli.set_connection_timeout(ms / 1000, (ms % 1000) * 1000);
    cli.set_read_timeout(ms / 1000, (ms % 1000) * 1000);
    cli.set_write_timeout(ms / 1000, (ms % 1000) * 1000);
    const std::string full = endpoint_.base_path + path;
    auto res = method == "GET" ? cli.Get(full) : cli.Post(full, body, "application/json");

    std::exception_ptr failure;
    if (!res) {
      const auto err = res.error();
      const std::string what = "request to " + endpoint_.scheme_host_port + full + " failed: " +
                               httplib::to_string(err);
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
        failure = std::make_exception_ptr(TimeoutError(what));
      } else {
        failure = std::make_exception_ptr(ConnectionError(what));
      }
    } else if (res->status >= 400 && res->status < 500) {
      throw ClientError(res->status, res->body);
    } else if (res->status >= 500) {
      failure = std::make_exception_ptr(ServerError(res->status, res->body));
    } else {
      return res->body;
    }
    if (attempt >= options_.retries) std::rethrow_exception(failure);
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
}

ServerInfo Client::info() const {
  const auto body = send("GET", "/v1/info", "");
  try {
    return info_from_json(json::parse(body));
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed /v1/info response: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ProtocolError(std::string("malformed /v1/info response: ") + e.what());
  }
}

ScoreResponse Client::score(ScoreRequest request) const {
  if (request.request_id.empty()) request.request_id = "req-" + std::to_string(next_id_++);
  require_valid(validate(request), "ScoreRequest");
  const auto body = send("POST", "/v1/score", to_json(request).dump());
  ScoreResponse response;
  try {
    response = response_from_json(json::parse(body));
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed /v1/score response: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ProtocolError(std::string("malformed /v1/score response: ") + e.what());
  }
  if (!response.request_id.empty() && response.request_id != request.request_id) {
    throw ProtocolError("response id " + response.request_id + " does not match request " +
                        request.request_id);
  }
  const auto violations = validate(response, request.candidates.size());
  if (!violations.empty()) throw ProtocolError("invalid response: " + describe(violations));
  return response;
}

ScoreResponse remote_score(const std::string& endpoint, const ScoreRequest& request,
                           std::chrono::milliseconds timeout, int retries) {
  ClientOptions options;
  options.timeout = timeout;
  options.retries = retries;
  return Client(parse_endpoint(endpoint), options).score(request);
}

RemoteProvider::RemoteProvider(std::shared_ptr<const Client> client, std::string prompt_prefix,
                               bool normalize)
    : client_(std::move(client)), prompt_prefix_(std::move(prompt_prefix)), normalize_(normalize) {
  if (!client_) throw InvalidArgument("null remote client");
  info_ = client_->info();
}

Capability RemoteProvider::capability() const {
  Capability c;
  c.max_context_length = info_.max_len;
  c.deterministic = false;
  c.vocab_size = info_.vocab_size;
  return c;
}

std::vector<double> RemoteProvider::score_candidates(const MaskedQuery& query,
                                                     std::span<const TokenSeq> candidates) const {
  return client_->score(to_request(query, candidates, prompt_prefix_, normalize_)).log_probs;
}

// ---------------------------------------------------------------------------
// server

struct ProviderServer::Impl {
  std::shared_ptr<const Provider> provider;
  std::string model_id;
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port = 0;
};

namespace {

void reply_error(httplib::Response& res, int status, const std::string& message,
                 const std::string& field) {
  ordered_json body{{"error", message}};
  body["field"] = field.empty() ? json(nullptr) : json(field);
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

ProviderServer::ProviderServer(std::shared_ptr<const Provider> provider, std::string model_id)
    : impl_(std::make_unique<Impl>()) {
  impl_->provider = std::move(provider);
  impl_->model_id = std::move(model_id);
  Impl* impl = impl_.get();

  impl->server.Get("/v1/info", [impl](const httplib::Request&, httplib::Response& res) {
    const auto cap = impl->provider->capability();
    ServerInfo info{impl->model_id, cap.max_context_length, {"t5-like"}, cap.vocab_size};
    res.set_content(to_json(info).dump(), "application/json");
  });

  impl->server.Post("/v1/score", [impl](const httplib::Request& req, httplib::Response& res) {
    ScoreRequest request;
    try {
      request = request_from_json(json::parse(req.body));
    } catch (const json::exception& e) {
      return reply_error(res, 400, e.what(), "");
    } catch (const InvalidArgument& e) {
      return reply_error(res, 400, e.what(), error_field(e.what()));
    }
    const auto violations = validate(request);
    if (!violations.empty()) {
      return reply_error(res, 400, describe(violations), violations.front().field);
    }
    try {
      const auto query = query_from_request(request);
      std::vector<TokenSeq> cands;
      for (const auto& c : request.candidates) cands.emplace_back(c.begin(), c.end());
      ScoreResponse response;
      response.request_id = request.request_id;
      response.model_id = impl->model_id;
      response.log_probs = mlmc::score_candidates(*impl->provider, query, cands);
      if (request.normalize) {
        double hi = -INFINITY;
        for (double v : response.log_probs) hi = std::max(hi, v);
        double sum = 0.0;
        for (double v : response.log_probs) sum += std::exp(v - hi);
        for (double& v : response.log_probs) v -= hi + std::log(sum);
      }
      for (double v : response.log_probs) {
        if (!std::isfinite(v)) return reply_error(res, 422, "candidate has zero probability", "");
      }
      response.usage.prompt_tokens = request.encoder_tokens.size() + request.decoder_prefix.size();
      for (const auto& c : request.candidates) response.usage.candidate_tokens += c.size();
      res.set_content(to_json(response).dump(), "application/json");
    } catch (const CapabilityExceeded& e) {
      reply_error(res, 422, e.what(), "encoder_tokens");
    } catch (const RangeError& e) {
      reply_error(res, 422, e.what(), "");
    } catch (const InvalidArgument& e) {
      reply_error(res, 400, e.what(), "");
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what(), "");
    }
  });
}

ProviderServer::~ProviderServer() { stop(); }

int ProviderServer::start(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host) : port;
  if (port != 0 && !impl_->server.bind_to_port(host, port)) {
    throw ConnectionError("cannot bind " + host + ":" + std::to_string(port));
  }
  if (impl_->port < 0) throw ConnectionError("cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void ProviderServer::listen(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) {
    throw ConnectionError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

void ProviderServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string ProviderServer::url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

}  // namespace mlmc::remote
