#include "phrasal/service.h"

#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

namespace phrasal {

namespace {

std::string error_body(const std::string& message) { return nlohmann::json{{"error", message}}.dump(); }

}  // namespace

SearchService::SearchService(PhraseModel model, PhraseIndex index, ServiceOptions opts)
    : model_(std::move(model)), index_(std::move(index)), opts_(std::move(opts)) {
  opts_.segment.validate();
  if (index_.dim() != model_.params.config.o) {
    throw std::invalid_argument("index dimension " + std::to_string(index_.dim()) +
                                " does not match model output dimension " +
                                std::to_string(model_.params.config.o));
  }
}

void SearchService::warm_up() {
  // Touches the encoder and every index page once.
  const std::string probe = model_.vocab.size() > 1 ? model_.vocab.token(1) : std::string("warmup");
  retrieve(make_sentence(probe, "", 0, {model_.lowercase}), model_, index_, opts_.segment, 1);
  if (!index_.empty()) {
    std::vector<float> q(index_.dim(), 0.0f);
    index_.search(q, 1);
  }
  warm_.store(true);
}

std::pair<int, std::string> SearchService::handle_health() const {
  if (!warm()) return {503, nlohmann::json{{"status", "warming"}}.dump()};
  return {200, nlohmann::json{{"status", "ok"}, {"entries", index_.size()}}.dump()};
}

std::pair<int, std::string> SearchService::handle_search(const std::string& body) const {
  if (!warm()) return {503, error_body("service is warming up")};
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return {400, error_body(std::string("malformed JSON: ") + e.what())};
  }
  if (!req.is_object() || !req.contains("text") || !req["text"].is_string()) {
    return {400, error_body("body must be an object with a string field \"text\"")};
  }
  std::size_t k = opts_.default_k;
  if (req.contains("k")) {
    if (!req["k"].is_number_integer() || req["k"].get<std::int64_t>() < 1) {
      return {400, error_body("\"k\" must be a positive integer")};
    }
    k = req["k"].get<std::size_t>();
  }
  Sentence sentence = make_sentence(req["text"].get<std::string>(), "", 0, {model_.lowercase});
  truncate_sentence(sentence, model_.params.config.max_positions);
  try {
    const auto results = retrieve(sentence, model_, index_, opts_.segment, k);
    return {200, results_to_json(results).dump()};
  } catch (const std::invalid_argument& e) {
    return {400, error_body(e.what())};
  }
}

void SearchService::mount(httplib::Server& server) const {
  server.Post("/search", [this](const httplib::Request& req, httplib::Response& res) {
    const auto [status, body] = handle_search(req.body);
    res.status = status;
    res.set_content(body, "application/json");
  });
  server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    const auto [status, body] = handle_health();
    res.status = status;
    res.set_content(body, "application/json");
  });
}

}  // namespace phrasal
