#pragma once

#include "merg/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace merg {

/// Wire form of one turn: media as /v1/assets URLs.
nlohmann::json turn_response_body(const TurnResult& result,
                                  const std::string& speech_url,
                                  const std::string& video_url);

/// HTTP front end over an Engine. Sessions live in memory; cached speech and
/// uploads live under the store's asset root.
///
///   POST   /v1/sessions                 {speaker_profile_id, listener_profile_id, config?}
///   GET    /v1/sessions/{id}
///   DELETE /v1/sessions/{id}
///   POST   /v1/sessions/{id}/turns      {text, audio_uri?, video_uri?}
///   GET    /v1/sessions/{id}/events     ?after=<seq>&follow=1&timeout_ms=<ms>
///   POST   /v1/assets                   raw bytes, ?ext=<extension>
///   GET    /v1/assets/{id}
///   GET    /v1/health
class Service {
 public:
  Service(std::shared_ptr<Engine> engine, PipelineConfig base_config,
          std::vector<BackendDescriptor> registry);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Returns the bound port; port 0 picks a free one. Throws IoError.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

  /// Registers a local path or remote URI and returns its /v1/assets URL.
  std::string asset_url(const std::string& uri);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace merg
