#include "phrasal/cli.h"

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

// Eigen headers must precede httplib: <resolv.h> defines a `_res` macro.
#include "phrasal/aligner.h"
#include "phrasal/extract.h"
#include "phrasal/pipeline.h"
#include "phrasal/service.h"
#include "phrasal/trainer.h"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#ifndef PHRASAL_VERSION
#define PHRASAL_VERSION "0.0.0"
#endif

namespace phrasal::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

class RunManifest {
 public:
  explicit RunManifest(std::string subcommand) : subcommand_(std::move(subcommand)) {}

  void input(const std::string& key, const std::string& path) { inputs_[key] = path; }
  void output(const std::string& key, const std::string& path) { outputs_[key] = path; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_config(ojson config, std::string config_file) {
    config_ = std::move(config);
    config_file_ = std::move(config_file);
  }
  void note(const std::string& key, ojson value) { extra_[key] = std::move(value); }

  template <typename F>
  auto stage(const std::string& name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Record {
      RunManifest* self;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Record() {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        self->timings_[name] = dt.count();
      }
    } record{this, name, t0};
    return fn();
  }

  // tmp + rename so readers never see a partial manifest.
  void write(const fs::path& path, const std::string& status, const std::string& error = {}) const {
    ojson j;
    j["subcommand"] = subcommand_;
    j["version"] = PHRASAL_VERSION;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["seed"] = seed_;
    j["config_file"] = config_file_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["timings_seconds"] = timings_;
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write manifest " + tmp.string());
      out << j.dump(2) << '\n';
    }
    fs::rename(tmp, path);
  }

 private:
  std::string subcommand_;
  std::uint64_t seed_ = 0;
  ojson config_ = ojson::object();
  std::string config_file_;
  ojson inputs_ = ojson::object();
  ojson outputs_ = ojson::object();
  ojson timings_ = ojson::object();
  ojson extra_ = ojson::object();
};

// Every option of a subcommand with its resolved value and whether it was
// given (on the command line or in the config file) or defaulted.
ojson snapshot(const CLI::App& app) {
  ojson out = ojson::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    ojson entry;
    const bool given = opt->count() > 0;
    if (given) {
      const auto& res = opt->results();
      if (opt->get_expected_max() == 0) {
        entry["value"] = true;
      } else if (res.size() == 1) {
        entry["value"] = res.front();
      } else {
        entry["value"] = res;
      }
    } else {
      entry["value"] = opt->get_default_str();
    }
    entry["source"] = given ? "given" : "default";
    out[name] = std::move(entry);
  }
  return out;
}

struct BitextArgs {
  std::string jsonl;
  std::string prefix;
  std::string l1 = "src";
  std::string l2 = "tgt";
  bool lowercase = false;

  void add(CLI::App* sub) {
    auto* j = sub->add_option("--bitext", jsonl, "Parallel corpus as JSONL {src,tgt,src_lang,tgt_lang}")
                  ->check(CLI::ExistingFile);
    auto* p = sub->add_option("--prefix", prefix, "Two-file corpus prefix (<prefix>.<l1>, <prefix>.<l2>)");
    j->excludes(p);
    sub->add_option("--l1", l1, "Source language suffix for --prefix")->capture_default_str();
    sub->add_option("--l2", l2, "Target language suffix for --prefix")->capture_default_str();
    sub->add_flag("--lowercase", lowercase, "Lowercase while tokenizing");
  }

  std::string describe() const { return jsonl.empty() ? prefix + ".{" + l1 + "," + l2 + "}" : jsonl; }

  ParallelCorpus load() const {
    LoadOptions opts;
    opts.tokenize.lowercase = lowercase;
    if (!jsonl.empty()) return load_parallel_jsonl(jsonl, opts);
    if (!prefix.empty()) return load_parallel_two_file(prefix, l1, l2, opts);
    throw CLI::RequiredError("--bitext or --prefix");
  }
};

struct Common {
  std::string manifest;
  std::uint64_t seed = 1;
};

fs::path manifest_path(const Common& common, const std::string& sub, const std::string& out, bool out_is_dir) {
  if (!common.manifest.empty()) return common.manifest;
  if (out.empty() || out == "-") return fs::path("phrasal-" + sub + ".manifest.json");
  if (out_is_dir) return fs::path(out) / "run_manifest.json";
  return fs::path(out + ".manifest.json");
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  file.open(path, std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + path);
  return file;
}

MonolingualCorpus load_mono(const std::string& path, const std::string& lang, const PhraseModel& model) {
  LoadOptions opts;
  opts.tokenize.lowercase = model.lowercase;
  opts.max_tokens = std::min<std::size_t>(kMaxSentenceTokens, model.params.config.max_positions);
  return load_monolingual(path, lang, opts);
}

Sentence query_sentence(const std::string& text, std::uint32_t id, const PhraseModel& model) {
  Sentence s = make_sentence(text, "", id, {model.lowercase});
  truncate_sentence(s, model.params.config.max_positions);
  return s;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::atomic<httplib::Server*> g_server{nullptr};

void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Cross-lingual contextualized phrase retrieval toolkit", "phrasal"};
  app.set_version_flag("--version", PHRASAL_VERSION);
  app.set_config("--config", "", "TOML/INI config file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--manifest", common.manifest, "Run manifest path (default derived from the output)");

  std::string subcommand;
  std::function<void(RunManifest&)> action;
  std::string out_path;
  bool out_is_dir = false;

  // ---- align ----
  BitextArgs align_bitext;
  EMConfig em;
  bool no_null = false;
  std::string heuristic = "gdfa";
  std::string table_out;
  std::string align_out;
  auto* align = app.add_subcommand("align", "Word-align a bitext with IBM Model 1 and symmetrize");
  align_bitext.add(align);
  align->add_option("--iters", em.iterations, "EM iterations")->capture_default_str()->check(CLI::PositiveNumber);
  align->add_option("--epsilon", em.epsilon, "Additive smoothing in the M-step")->capture_default_str();
  align->add_flag("--no-null", no_null, "Disable the NULL source token");
  align->add_option("--heuristic", heuristic, "intersection | union | gdfa")
      ->capture_default_str()
      ->check(CLI::IsMember({"intersection", "union", "gdfa", "grow-diag-final-and"}));
  align->add_option("--table-out", table_out, "Dump the forward translation table (JSONL)");
  align->add_option("--out", align_out, "Pharaoh alignment output")->required();
  align->add_option("--seed", common.seed, "Recorded seed (alignment is deterministic)")->capture_default_str();
  align->callback([&] {
    subcommand = "align";
    out_path = align_out;
    action = [&](RunManifest& m) {
      em.use_null = !no_null;
      m.input("bitext", align_bitext.describe());
      const auto corpus = m.stage("load", [&] { return align_bitext.load(); });
      m.note("pairs", corpus.pairs.size());
      m.note("skipped_lines", corpus.skipped);
      const auto result =
          m.stage("align", [&] { return align_corpus(corpus.pairs, em, parse_heuristic(heuristic)); });
      m.note("fwd_log_likelihood", result.fwd_log_likelihood);
      m.note("rev_log_likelihood", result.rev_log_likelihood);
      m.stage("write", [&] {
        write_pharaoh(align_out, result.alignments);
        if (!table_out.empty()) {
          std::ofstream t(table_out, std::ios::trunc);
          if (!t) throw std::runtime_error("cannot write " + table_out);
          result.fwd_table.dump_jsonl(t);
        }
      });
      m.output("alignment", align_out);
      if (!table_out.empty()) m.output("table", table_out);
      std::cerr << "aligned " << corpus.pairs.size() << " pairs";
      if (corpus.skipped) std::cerr << " (" << corpus.skipped << " malformed lines skipped)";
      std::cerr << "\n";
    };
  });

  // ---- extract ----
  BitextArgs extract_bitext;
  ExtractionConfig ecfg;
  bool keep_numeric = false;
  std::string extract_align, extract_out;
  auto* extract = app.add_subcommand("extract", "Extract consistent phrase pairs from an aligned bitext");
  extract_bitext.add(extract);
  extract->add_option("--align", extract_align, "Pharaoh alignments (one line per pair)")
      ->required()
      ->check(CLI::ExistingFile);
  extract->add_option("--max-len", ecfg.max_phrase_len, "Maximum phrase length in tokens")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  extract->add_option("--boundary-freq", ecfg.boundary_freq_threshold,
                      "Drop phrases whose first or last token is more frequent than this")
      ->capture_default_str();
  extract->add_flag("--keep-numeric-punct", keep_numeric, "Keep phrases made only of numbers/punctuation");
  extract->add_flag("--strict", ecfg.strict_all_aligned, "Require every token of both spans to be aligned");
  extract->add_option("--out", extract_out, "Phrase-pair JSONL output")->required();
  extract->add_option("--seed", common.seed, "Recorded seed (extraction is deterministic)")->capture_default_str();
  extract->callback([&] {
    subcommand = "extract";
    out_path = extract_out;
    action = [&](RunManifest& m) {
      ecfg.drop_numeric_punct = !keep_numeric;
      m.input("bitext", extract_bitext.describe());
      m.input("alignment", extract_align);
      const auto corpus = m.stage("load", [&] { return extract_bitext.load(); });
      const auto aligns = m.stage("load_alignment", [&] { return read_pharaoh(extract_align, corpus.pairs); });
      const auto pairs = m.stage("extract", [&] { return extract_corpus(corpus.pairs, aligns, ecfg); });
      m.stage("write", [&] { write_phrase_pairs(extract_out, pairs, corpus.pairs); });
      m.output("pairs", extract_out);
      m.note("phrase_pairs", pairs.size());
      std::cerr << "extracted " << pairs.size() << " phrase pairs from " << corpus.pairs.size()
                << " sentence pairs\n";
    };
  });

  // ---- train ----
  std::vector<std::string> train_bitexts, train_pairs;
  bool train_lowercase = false;
  EncoderConfig ecfg_model;
  bool no_align_hidden = false;
  TrainConfig tcfg;
  std::string train_out, metrics_out;
  auto* train_cmd = app.add_subcommand("train", "Train the phrase encoder (alignment + segmentation)");
  train_cmd->add_option("--bitext", train_bitexts, "Parallel JSONL corpora (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--pairs", train_pairs, "Phrase-pair JSONL per --bitext, same order")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_flag("--lowercase", train_lowercase, "Lowercase while tokenizing");
  train_cmd->add_option("--d", ecfg_model.d, "Hidden size")->capture_default_str();
  train_cmd->add_option("--layers", ecfg_model.layers, "Transformer layers")->capture_default_str();
  train_cmd->add_option("--heads", ecfg_model.heads, "Attention heads")->capture_default_str();
  train_cmd->add_option("--o", ecfg_model.o, "Phrase vector size")->capture_default_str();
  train_cmd->add_option("--ffn", ecfg_model.ffn, "Feed-forward size (0 = 4*d)")->capture_default_str();
  train_cmd->add_flag("--no-align-hidden", no_align_hidden, "Use a linear alignment head");
  train_cmd->add_option("--steps", tcfg.steps, "Optimizer steps")->capture_default_str();
  train_cmd->add_option("--batch-size", tcfg.batch_size, "Sentence pairs per step")->capture_default_str();
  train_cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--dropout", tcfg.dropout, "Dropout rate")->capture_default_str();
  train_cmd->add_option("--beta", tcfg.beta, "Segmentation loss weight")->capture_default_str();
  train_cmd->add_option("--temperature", tcfg.temperature, "Contrastive temperature")->capture_default_str();
  train_cmd->add_option("--max-pairs", tcfg.max_pairs_per_sentence, "Phrase pairs drawn per sentence")
      ->capture_default_str();
  train_cmd->add_option("--max-phrase-len", tcfg.max_phrase_len, "Longest span used for segmentation")
      ->capture_default_str();
  train_cmd->add_flag("--literal-masks", tcfg.literal_denominator_masks,
                      "Target-side denominator phrases under z instead of z'");
  train_cmd->add_option("--seed", common.seed, "Seed for initialization, batching and dropout")
      ->capture_default_str();
  train_cmd->add_option("--metrics", metrics_out, "Per-step loss JSONL");
  train_cmd->add_option("--out", train_out, "Checkpoint directory (model.ckpt) or file")->required();
  train_cmd->callback([&] {
    subcommand = "train";
    out_path = train_out;
    out_is_dir = fs::path(train_out).extension() != ".ckpt";
    action = [&](RunManifest& m) {
      if (train_bitexts.size() != train_pairs.size()) {
        throw CLI::ValidationError("--pairs", "give one --pairs file per --bitext");
      }
      LoadOptions lopts;
      lopts.tokenize.lowercase = train_lowercase;
      std::vector<ParallelCorpus> corpora;
      std::vector<std::vector<PhrasePair>> pairs;
      m.stage("load", [&] {
        for (std::size_t k = 0; k < train_bitexts.size(); ++k) {
          m.input("bitext." + std::to_string(k), train_bitexts[k]);
          m.input("pairs." + std::to_string(k), train_pairs[k]);
          corpora.push_back(load_parallel_jsonl(train_bitexts[k], lopts));
          pairs.push_back(read_phrase_pairs(train_pairs[k], corpora.back().pairs));
        }
      });
      std::vector<SentencePair> all;
      for (const auto& c : corpora) all.insert(all.end(), c.pairs.begin(), c.pairs.end());
      PhraseModel model;
      model.lowercase = train_lowercase;
      model.vocab = make_encoder_vocab(all);
      ecfg_model.vocab_size = static_cast<std::uint32_t>(model.vocab.size());
      ecfg_model.dropout = tcfg.dropout;
      ecfg_model.align_hidden = !no_align_hidden;
      tcfg.seed = common.seed;
      tcfg.validate();
      model.params = init_params<float>(ecfg_model, common.seed);
      std::vector<TrainingSource> sources;
      for (std::size_t k = 0; k < corpora.size(); ++k) sources.push_back({corpora[k].pairs, pairs[k]});
      std::ofstream metrics;
      if (!metrics_out.empty()) {
        metrics.open(metrics_out, std::ios::trunc);
        if (!metrics) throw std::runtime_error("cannot write " + metrics_out);
        m.output("metrics", metrics_out);
      }
      const auto history = m.stage("train", [&] {
        return train(model, sources, tcfg, [&](const TrainMetrics& tm) {
          if (metrics.is_open()) write_metrics_line(metrics, tm);
          if (tm.step % 100 == 0) {
            std::cerr << "step " << tm.step << " l_align=" << tm.l_align << " l_seg=" << tm.l_seg << "\n";
          }
        });
      });
      fs::path ckpt = out_is_dir ? fs::path(train_out) / "model.ckpt" : fs::path(train_out);
      m.stage("save", [&] { save_checkpoint(ckpt, model); });
      m.output("checkpoint", ckpt.string());
      if (!history.empty()) {
        m.note("final_loss", {{"l_align", history.back().l_align},
                              {"l_seg", history.back().l_seg},
                              {"l_total", history.back().l_total}});
      }
    };
  });

  // ---- segment ----
  std::string seg_model, seg_input, seg_lang = "tgt", seg_out;
  SegmentConfig scfg;
  double seg_threshold = scfg.index_threshold;
  auto* seg = app.add_subcommand("segment", "Score and dump phrase spans of monolingual text");
  seg->add_option("--model", seg_model, "Checkpoint file or directory")->required()->check(CLI::ExistingPath);
  seg->add_option("--input", seg_input, "One sentence per line")->required()->check(CLI::ExistingFile);
  seg->add_option("--lang", seg_lang, "Language tag")->capture_default_str();
  seg->add_option("--threshold", seg_threshold, "Keep spans with probability above this")->capture_default_str();
  seg->add_option("--max-len", scfg.max_len, "Longest span in tokens")->capture_default_str();
  seg->add_option("--out", seg_out, "Segment JSONL (default stdout)");
  seg->callback([&] {
    subcommand = "segment";
    out_path = seg_out;
    action = [&](RunManifest& m) {
      scfg.index_threshold = seg_threshold;
      scfg.validate();
      m.input("model", seg_model);
      m.input("input", seg_input);
      const PhraseModel model = m.stage("load_model", [&] { return load_checkpoint(seg_model); });
      const auto mono = m.stage("load", [&] { return load_mono(seg_input, seg_lang, model); });
      std::ofstream file;
      std::ostream& out = open_out(seg_out, file);
      std::size_t spans = 0;
      m.stage("segment", [&] {
        for (const auto& s : mono.sentences) {
          for (const auto& sp : segment(s, model, seg_threshold, scfg.max_len)) {
            write_segment_line(out, s, sp);
            ++spans;
          }
        }
      });
      if (!seg_out.empty()) m.output("segments", seg_out);
      m.note("spans", spans);
    };
  });

  // ---- build-index ----
  std::string bi_model, bi_input, bi_lang = "tgt", bi_out;
  IndexBuildOptions bopts;
  bool bi_ngram = false, bi_cosine = false;
  auto* bi = app.add_subcommand("build-index", "Segment target-language text and build a phrase index");
  bi->add_option("--model", bi_model, "Checkpoint file or directory")->required()->check(CLI::ExistingPath);
  bi->add_option("--input", bi_input, "One sentence per line")->required()->check(CLI::ExistingFile);
  bi->add_option("--lang", bi_lang, "Language tag")->capture_default_str();
  bi->add_option("--threshold", bopts.threshold, "Index segmentation threshold")->capture_default_str();
  bi->add_option("--max-len", bopts.max_len, "Longest span in tokens")->capture_default_str();
  bi->add_flag("--ngram", bi_ngram, "Index all n-grams instead of learned segments");
  bi->add_option("--ngram-n", bopts.ngram, "n for --ngram")->capture_default_str();
  bi->add_flag("--cosine", bi_cosine, "Cosine similarity instead of inner product");
  bi->add_option("--out", bi_out, "Index directory")->required();
  bi->callback([&] {
    subcommand = "build-index";
    out_path = bi_out;
    out_is_dir = true;
    action = [&](RunManifest& m) {
      bopts.mode = bi_ngram ? SegmentMode::ngram : SegmentMode::learned;
      bopts.metric = bi_cosine ? Metric::cosine : Metric::inner_product;
      if (!bi_ngram) SegmentConfig{bopts.threshold, 0.9, bopts.max_len}.validate();
      m.input("model", bi_model);
      m.input("input", bi_input);
      const PhraseModel model = m.stage("load_model", [&] { return load_checkpoint(bi_model); });
      const auto mono = m.stage("load", [&] { return load_mono(bi_input, bi_lang, model); });
      const PhraseIndex index = m.stage("build", [&] { return build_phrase_index(mono.sentences, model, bopts); });
      m.stage("save", [&] { index.save(bi_out); });
      m.output("index", bi_out);
      m.note("entries", index.size());
      std::cerr << "indexed " << index.size() << " phrases from " << mono.sentences.size() << " sentences\n";
    };
  });

  // ---- search ----
  std::string se_model, se_index, se_text, se_input, se_out;
  std::size_t se_k = 32;
  SegmentConfig se_cfg;
  bool se_f64 = false;
  auto* se = app.add_subcommand("search", "Retrieve target phrases for source sentences");
  se->add_option("--model", se_model, "Checkpoint file or directory")->required()->check(CLI::ExistingPath);
  se->add_option("--index", se_index, "Index directory")->required()->check(CLI::ExistingDirectory);
  auto* se_text_opt = se->add_option("--text", se_text, "A single query sentence");
  auto* se_input_opt =
      se->add_option("--input", se_input, "Query sentences, one per line")->check(CLI::ExistingFile);
  se_text_opt->excludes(se_input_opt);
  se->add_option("--k", se_k, "Hits per query phrase")->capture_default_str()->check(CLI::PositiveNumber);
  se->add_option("--threshold", se_cfg.query_threshold, "Query segmentation threshold")->capture_default_str();
  se->add_option("--max-len", se_cfg.max_len, "Longest span in tokens")->capture_default_str();
  se->add_flag("--f64", se_f64, "Accumulate scores in 64-bit");
  se->add_option("--out", se_out, "Result JSONL (default stdout)");
  se->callback([&] {
    subcommand = "search";
    out_path = se_out;
    action = [&](RunManifest& m) {
      if (se_text.empty() && se_input.empty()) throw CLI::RequiredError("--text or --input");
      se_cfg.validate();
      m.input("model", se_model);
      m.input("index", se_index);
      const PhraseModel model = m.stage("load_model", [&] { return load_checkpoint(se_model); });
      const PhraseIndex index = m.stage("load_index", [&] { return PhraseIndex::load(se_index); });
      const auto lines = se_input.empty() ? std::vector<std::string>{se_text} : read_lines(se_input);
      if (!se_input.empty()) m.input("queries", se_input);
      std::ofstream file;
      std::ostream& out = open_out(se_out, file);
      m.stage("search", [&] {
        for (std::size_t i = 0; i < lines.size(); ++i) {
          const Sentence s = query_sentence(lines[i], static_cast<std::uint32_t>(i), model);
          const auto results =
              retrieve(s, model, index, se_cfg, se_k, se_f64 ? Precision::f64 : Precision::f32);
          out << results_to_json(results).dump() << '\n';
        }
      });
      if (!se_out.empty()) m.output("results", se_out);
    };
  });

  // ---- prompt ----
  std::string pr_model, pr_index, pr_input, pr_out, pr_delim = "====";
  PromptConfig pcfg;
  SegmentConfig pr_cfg;
  auto* pr = app.add_subcommand("prompt", "Build retrieval-augmented translation prompts");
  pr->add_option("--model", pr_model, "Checkpoint file or directory")->required()->check(CLI::ExistingPath);
  pr->add_option("--index", pr_index, "Index directory")->required()->check(CLI::ExistingDirectory);
  pr->add_option("--input", pr_input, "Source sentences, one per line")->required()->check(CLI::ExistingFile);
  pr->add_option("--src-name", pcfg.source_lang, "Source language display name")->capture_default_str();
  pr->add_option("--tgt-name", pcfg.target_lang, "Target language display name")->capture_default_str();
  pr->add_option("--max-context", pcfg.max_context_chars, "Context characters around each phrase")
      ->capture_default_str();
  pr->add_option("--max-phrases", pcfg.max_phrases, "Phrase blocks per prompt")->capture_default_str();
  pr->add_flag("--mark-source", pcfg.mark_source_phrases, "Mark retrieved phrases in the source sentence");
  pr->add_option("--threshold", pr_cfg.query_threshold, "Query segmentation threshold")->capture_default_str();
  pr->add_option("--max-len", pr_cfg.max_len, "Longest span in tokens")->capture_default_str();
  pr->add_option("--delimiter", pr_delim, "Line written between prompts")->capture_default_str();
  pr->add_option("--out", pr_out, "Prompt text output (default stdout)");
  pr->callback([&] {
    subcommand = "prompt";
    out_path = pr_out;
    action = [&](RunManifest& m) {
      pr_cfg.validate();
      m.input("model", pr_model);
      m.input("index", pr_index);
      m.input("input", pr_input);
      const PhraseModel model = m.stage("load_model", [&] { return load_checkpoint(pr_model); });
      const PhraseIndex index = m.stage("load_index", [&] { return PhraseIndex::load(pr_index); });
      const auto lines = read_lines(pr_input);
      std::ofstream file;
      std::ostream& out = open_out(pr_out, file);
      m.stage("prompt", [&] {
        for (std::size_t i = 0; i < lines.size(); ++i) {
          const Sentence s = query_sentence(lines[i], static_cast<std::uint32_t>(i), model);
          const auto results = retrieve(s, model, index, pr_cfg, 1);
          if (i > 0) out << pr_delim << '\n';
          out << build_prompt(s, results, pcfg);
        }
      });
      if (!pr_out.empty()) m.output("prompts", pr_out);
    };
  });

  // ---- eval ----
  std::string ev_gold, ev_model, ev_index, ev_mono, ev_lang = "tgt", ev_distractors;
  EvalOptions ev_opts;
  bool ev_f64 = false, ev_ngram = false;
  IndexBuildOptions ev_bopts;
  auto* ev = app.add_subcommand("eval", "Retrieval accuracy@1 against a gold set");
  ev->add_option("--gold", ev_gold, "Gold JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--model", ev_model, "Checkpoint file or directory")->required()->check(CLI::ExistingPath);
  auto* ev_i = ev->add_option("--index", ev_index, "Prebuilt index directory")->check(CLI::ExistingDirectory);
  auto* ev_m = ev->add_option("--mono", ev_mono, "Build the index from this text")->check(CLI::ExistingFile);
  auto* ev_d = ev->add_option("--distractors", ev_distractors,
                              "Index gold targets plus these occurrences (JSONL {context,s,e})")
                   ->check(CLI::ExistingFile);
  ev_i->excludes(ev_m)->excludes(ev_d);
  ev_m->excludes(ev_d);
  ev->add_option("--lang", ev_lang, "Language tag for --mono")->capture_default_str();
  ev->add_flag("--ngram", ev_ngram, "With --mono: index all n-grams instead of learned segments");
  ev->add_option("--ngram-n", ev_bopts.ngram, "n for --ngram")->capture_default_str();
  ev->add_option("--threshold", ev_bopts.threshold, "With --mono: index segmentation threshold")
      ->capture_default_str();
  ev->add_flag("--lenient", ev_opts.lenient, "Count string-equal phrases from any context as correct");
  ev->add_flag("--f64", ev_f64, "Accumulate scores in 64-bit");
  ev->callback([&] {
    subcommand = "eval";
    action = [&](RunManifest& m) {
      if (ev_index.empty() && ev_mono.empty() && ev_distractors.empty()) {
        throw CLI::RequiredError("--index, --mono or --distractors");
      }
      ev_opts.precision = ev_f64 ? Precision::f64 : Precision::f32;
      m.input("gold", ev_gold);
      m.input("model", ev_model);
      const PhraseModel model = m.stage("load_model", [&] { return load_checkpoint(ev_model); });
      const auto gold = m.stage("load_gold", [&] { return load_gold(ev_gold, {model.lowercase}); });
      EvalResult result;
      if (!ev_distractors.empty()) {
        m.input("distractors", ev_distractors);
        const auto distractors = load_occurrences(ev_distractors, {model.lowercase});
        result = m.stage("eval", [&] { return eval_with_distractors(gold, distractors, model, ev_opts); });
      } else {
        PhraseIndex index;
        if (!ev_index.empty()) {
          m.input("index", ev_index);
          index = m.stage("load_index", [&] { return PhraseIndex::load(ev_index); });
        } else {
          m.input("mono", ev_mono);
          ev_bopts.mode = ev_ngram ? SegmentMode::ngram : SegmentMode::learned;
          const auto mono = load_mono(ev_mono, ev_lang, model);
          index = m.stage("build_index", [&] { return build_phrase_index(mono.sentences, model, ev_bopts); });
        }
        result = m.stage("eval", [&] { return eval_acc_at_1(gold, model, index, ev_opts); });
      }
      m.note("acc_at_1", result.accuracy());
      m.note("correct", result.correct);
      m.note("total", result.total);
      std::cout << "acc@1=" << result.accuracy() << "\n";
      std::cout << "correct=" << result.correct << " total=" << result.total << "\n";
    };
  });

  // ---- serve ----
  std::string sv_model, sv_index, sv_host = "127.0.0.1";
  int sv_port = 8080;
  ServiceOptions sv_opts;
  auto* sv = app.add_subcommand("serve", "JSON-over-HTTP phrase search (POST /search, GET /healthz)");
  sv->add_option("--model", sv_model, "Checkpoint file or directory")->required()->check(CLI::ExistingPath);
  sv->add_option("--index", sv_index, "Index directory")->required()->check(CLI::ExistingDirectory);
  sv->add_option("--host", sv_host, "Bind address")->capture_default_str();
  sv->add_option("--port", sv_port, "Port (0 picks a free one)")->capture_default_str()->check(CLI::Range(0, 65535));
  sv->add_option("--threshold", sv_opts.segment.query_threshold, "Query segmentation threshold")
      ->capture_default_str();
  sv->add_option("--max-len", sv_opts.segment.max_len, "Longest span in tokens")->capture_default_str();
  sv->add_option("--k", sv_opts.default_k, "Default hits per phrase")->capture_default_str();
  sv->callback([&] {
    subcommand = "serve";
    action = [&](RunManifest& m) {
      m.input("model", sv_model);
      m.input("index", sv_index);
      auto model = m.stage("load_model", [&] { return load_checkpoint(sv_model); });
      auto index = m.stage("load_index", [&] { return PhraseIndex::load(sv_index); });
      SearchService service(std::move(model), std::move(index), sv_opts);
      httplib::Server server;
      service.mount(server);
      const int port = sv_port == 0 ? server.bind_to_any_port(sv_host) : (server.bind_to_port(sv_host, sv_port) ? sv_port : -1);
      if (port < 0) throw std::runtime_error("cannot bind " + sv_host + ":" + std::to_string(sv_port));
      g_server.store(&server);
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::thread listener([&] { server.listen_after_bind(); });
      std::cerr << "listening on " << sv_host << ":" << port << "\n";
      m.stage("warm_up", [&] { service.warm_up(); });
      std::cerr << "ready\n";
      listener.join();
      g_server.store(nullptr);
      m.note("port", port);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest(subcommand);
  manifest.set_seed(common.seed);
  manifest.set_config(snapshot(*sub), app.get_config_ptr() && app.get_config_ptr()->count()
                                          ? app.get_config_ptr()->as<std::string>()
                                          : std::string());
  const fs::path mpath = manifest_path(common, subcommand, out_path, out_is_dir);
  int code = kExitOk;
  std::string error;
  try {
    action(manifest);
  } catch (const CLI::Error& e) {
    std::cerr << "phrasal " << subcommand << ": " << e.what() << "\n";
    error = e.what();
    code = kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "phrasal " << subcommand << ": error: " << e.what() << "\n";
    error = e.what();
    code = kExitFailure;
  }
  try {
    manifest.write(mpath, code == kExitOk ? "ok" : "error", error);
  } catch (const std::exception& e) {
    std::cerr << "phrasal: cannot write manifest: " << e.what() << "\n";
    if (code == kExitOk) code = kExitFailure;
  }
  return code;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"phrasal"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace phrasal::cli
