#include <algorithm>
#include <set>
#include <sstream>

#include "phrasal/pipeline.h"
#include "phrasal/utf8.h"

namespace phrasal {

namespace {

constexpr std::string_view kDivider = "------------------------------------";

std::vector<std::string> split_spaces(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join(std::span<const std::string> tokens, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t k = begin; k < end; ++k) {
    if (k > begin) out.push_back(' ');
    out += tokens[k];
  }
  return out;
}

}  // namespace

std::string truncate_context(std::span<const std::string> tokens, Span span, std::size_t max_chars,
                             const std::string& open_marker, const std::string& close_marker) {
  const std::size_t n = tokens.size();
  if (span.e >= n || span.s > span.e) throw std::out_of_range("context span outside its sentence");
  std::size_t used = utf8::length(join(tokens, span.s, span.e + 1));
  std::size_t l = span.s, r = span.e + 1;  // window [l, r)
  std::size_t left_chars = 0, right_chars = 0;
  bool left_open = l > 0, right_open = r < n;
  while (left_open || right_open) {
    const bool take_left = left_open && (!right_open || left_chars <= right_chars);
    const std::string& tok = take_left ? tokens[l - 1] : tokens[r];
    const std::size_t cost = utf8::length(tok) + 1;
    if (used + cost > max_chars) {
      (take_left ? left_open : right_open) = false;
      continue;
    }
    used += cost;
    if (take_left) {
      --l;
      left_chars += cost;
      left_open = l > 0;
    } else {
      ++r;
      right_chars += cost;
      right_open = r < n;
    }
  }
  std::string out;
  if (l > 0) out += "... ";
  if (l < span.s) out += join(tokens, l, span.s) + " ";
  out += open_marker + join(tokens, span.s, span.e + 1) + close_marker;
  if (r > span.e + 1) out += " " + join(tokens, span.e + 1, r);
  if (r < n) out += " ...";
  return out;
}

std::vector<const RetrievalResult*> select_prompt_results(std::span<const RetrievalResult> results,
                                                          const PromptConfig& cfg) {
  std::vector<const RetrievalResult*> candidates;
  for (const auto& r : results) {
    if (!r.hits.empty()) candidates.push_back(&r);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const RetrievalResult* a, const RetrievalResult* b) { return a->seg_score > b->seg_score; });
  std::vector<const RetrievalResult*> chosen;
  std::set<std::string> texts;
  for (const auto* r : candidates) {
    if (chosen.size() >= cfg.max_phrases) break;
    if (texts.insert(r->query_text).second) chosen.push_back(r);
  }
  std::sort(chosen.begin(), chosen.end(), [](const RetrievalResult* a, const RetrievalResult* b) {
    return a->query.span < b->query.span;
  });
  return chosen;
}

std::string build_prompt(const Sentence& sentence, std::span<const RetrievalResult> results,
                         const PromptConfig& cfg) {
  const auto chosen = select_prompt_results(results, cfg);
  const std::string& src = cfg.source_lang;
  const std::string& tgt = cfg.target_lang;
  std::ostringstream out;
  if (chosen.empty()) {
    out << "Please faithfully translate the following sentence from " << src << " into " << tgt
        << ", and do not alter its meaning:\n";
    out << src << ": " << sentence.text() << "\n";
    out << tgt << ":\n";
    return out.str();
  }

  out << "Below are phrases of the " << src << " sentence with potential " << tgt
      << " translations, each shown in a context where it appears, marked by " << cfg.open_marker
      << cfg.close_marker << ".\n";
  out << kDivider << "\n";
  for (std::size_t b = 0; b < chosen.size(); ++b) {
    const RetrievalResult& r = *chosen[b];
    const ResolvedHit& hit = r.hits.front();
    const auto ctx = split_spaces(hit.context);
    if (b > 0) out << "\n";
    out << src << " Phrase: " << r.query_text << "\n";
    out << "Potential Translation: " << hit.phrase << "\n";
    out << "Context: " << truncate_context(ctx, {hit.s, hit.e}, cfg.max_context_chars, cfg.open_marker,
                                           cfg.close_marker)
        << "\n";
  }
  out << kDivider << "\n";
  out << "Based on the provided information of phrase translation, please faithfully translate the following "
         "sentence from "
      << src << " into " << tgt << ":\n\n";

  std::string source_text;
  if (cfg.mark_source_phrases) {
    std::vector<bool> open(sentence.size(), false), close(sentence.size(), false);
    for (const auto* r : chosen) {
      open[r->query.span.s] = true;
      close[r->query.span.e] = true;
    }
    for (std::size_t k = 0; k < sentence.size(); ++k) {
      if (k) source_text.push_back(' ');
      if (open[k]) source_text += cfg.open_marker;
      source_text += sentence.tokens[k];
      if (close[k]) source_text += cfg.close_marker;
    }
  } else {
    source_text = sentence.text();
  }
  out << src << ": " << source_text << "\n\n";
  out << tgt << ":\n";
  return out.str();
}

}  // namespace phrasal
