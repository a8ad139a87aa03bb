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


#pragma once

// JSON-over-HTTP conditional scoring.
//
//   POST /v1/score   ScoreRequest -> ScoreResponse
//   GET  /v1/info    -> {"model_id", "max_len", "styles", ["vocab_size"]}
//
// Sentinel convention: encoder_tokens carries slot k as the negative marker
// -(k+1), so markers run -1, -2, ... left to right. decoder_prefix repeats
// the marker of every slot preceding the target followed by that slot's given
// tokens (a hidden slot contributes its marker only). Candidates are scored
// as the continuation of the target slot.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mlmc/core.hpp"
#include "mlmc/provider.hpp"

namespace mlmc::remote {

class TransportError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

class ConnectionError : public TransportError {
 public:
  using TransportError::TransportError;
};

// An HTTP error status. 4xx means the request was rejected and is never
// retried; 5xx is a server fault.
class HttpError : public TransportError {
 public:
  HttpError(int status, std::string body);
  int status() const { return status_; }
  const std::string& body() const { return body_; }

 private:
  int status_;
  std::string body_;
};

class ClientError : public HttpError {
 public:
  using HttpError::HttpError;
};

class ServerError : public HttpError {
 public:
  using HttpError::HttpError;
};

// The server answered 2xx with something that is not a valid response.
class ProtocolError : public TransportError {
 public:
  using TransportError::TransportError;
};

struct ScoreRequest {
  std::string request_id;
  std::string prompt_prefix;
  std::vector<std::int64_t> encoder_tokens;
  std::vector<std::int64_t> decoder_prefix;
  std::vector<std::vector<std::int64_t>> candidates;
  bool normalize = false;

  bool operator==(const ScoreRequest&) const = default;
};

struct Usage {
  std::size_t prompt_tokens = 0;
  std::size_t candidate_tokens = 0;

  bool operator==(const Usage&) const = default;
};

struct ScoreResponse {
  std::string request_id;
  std::vector<double> log_probs;
  std::string model_id;
  Usage usage;

  bool operator==(const ScoreResponse&) const = default;
};

struct ServerInfo {
  std::string model_id;
  std::size_t max_len = 0;
  std::vector<std::string> styles;
  std::optional<std::size_t> vocab_size;
};

Violations validate(const ScoreRequest& request);
Violations validate(const ScoreResponse& response, std::size_t expected_candidates);

// Canonical serialization: fixed field order.
nlohmann::ordered_json to_json(const ScoreRequest& request);
nlohmann::ordered_json to_json(const ScoreResponse& response);
nlohmann::ordered_json to_json(const ServerInfo& info);
ScoreRequest request_from_json(const nlohmann::json& j);
ScoreResponse response_from_json(const nlohmann::json& j);
ServerInfo info_from_json(const nlohmann::json& j);

ScoreRequest to_request(const MaskedQuery& query, std::span<const TokenSeq> candidates,
                        const std::string& prompt_prefix = "", bool normalize = false);

// Inverse of to_request for the query part. Hidden slots decode as one token
// wide.
MaskedQuery query_from_request(const ScoreRequest& request);

struct Endpoint {
  std::string scheme_host_port;  // e.g. "http://127.0.0.1:8080"
  std::string base_path;         // prefix before /v1/..., may be empty
};

Endpoint parse_endpoint(const std::string& url);

// Name of the environment variable that overrides remote endpoints.
inline constexpr const char* kEndpointEnv = "MLMC_REMOTE_ENDPOINT";

struct ClientOptions {
  std::chrono::milliseconds timeout{120'000};
  int retries = 3;
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds initial_backoff{100};
};

// Thread-safe; at most max_in_flight requests are outstanding at once.
class Client {
 public:
  explicit Client(Endpoint endpoint, ClientOptions options = {});
  ~Client();

  ServerInfo info() const;
  // Fills in request_id when empty and checks the echoed id.
  ScoreResponse score(ScoreRequest request) const;

  const ClientOptions& options() const { return options_; }

 private:
  std::string send(const std::string& method, const std::string& path,
                   const std::string& body) const;

  Endpoint endpoint_;
  ClientOptions options_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
  mutable std::atomic<std::uint64_t> next_id_{1};
};

ScoreResponse remote_score(const std::string& endpoint, const ScoreRequest& request,
                           std::chrono::milliseconds timeout, int retries);

// Provider backed by a remote server. Nondeterministic by contract.
class RemoteProvider : public Provider {
 public:
  RemoteProvider(std::shared_ptr<const Client> client, std::string prompt_prefix = "",
                 bool normalize = false);

  Capability capability() const override;
  std::vector<double> score_candidates(const MaskedQuery& query,
                                       std::span<const TokenSeq> candidates) const override;

  const ServerInfo& info() const { return info_; }

 private:
  std::shared_ptr<const Client> client_;
  std::string prompt_prefix_;
  bool normalize_;
  ServerInfo info_;
};

// Serves any provider over the protocol on a background thread. Used to
// expose the oracle providers to protocol tooling and in tests.
class ProviderServer {
 public:
  ProviderServer(std::shared_ptr<const Provider> provider, std::string model_id);
  ~ProviderServer();

  ProviderServer(const ProviderServer&) = delete;
  ProviderServer& operator=(const ProviderServer&) = delete;

  // Binds to host (port 0 picks a free port) and starts serving.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Blocks in the calling thread.
  void listen(const std::string& host, int port);
  void stop();

  std::string url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mlmc::remote
