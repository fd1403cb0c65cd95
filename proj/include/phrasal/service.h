#pragma once

#include <atomic>
#include <cstddef>
#include <string>
#include <utility>

#include "phrasal/pipeline.h"

namespace httplib {
class Server;
}

namespace phrasal {

struct ServiceOptions {
  SegmentConfig segment;
  std::size_t default_k = 32;
};

/// Read-only search over an immutable model and index. Requests are
/// stateless, so one instance serves concurrent handlers.
class SearchService {
 public:
  // Throws std::invalid_argument when the index dimension differs from the model's.
  SearchService(PhraseModel model, PhraseIndex index, ServiceOptions opts = {});

  // Runs one throwaway query, then reports healthy.
  void warm_up();
  bool warm() const { return warm_.load(); }

  // POST /search body -> (HTTP status, JSON body).
  std::pair<int, std::string> handle_search(const std::string& body) const;
  // GET /healthz -> (200 | 503, JSON body).
  std::pair<int, std::string> handle_health() const;

  void mount(httplib::Server& server) const;

  const PhraseModel& model() const { return model_; }
  const PhraseIndex& index() const { return index_; }

 private:
  PhraseModel model_;
  PhraseIndex index_;
  ServiceOptions opts_;
  std::atomic<bool> warm_{false};
};

}  // namespace phrasal
