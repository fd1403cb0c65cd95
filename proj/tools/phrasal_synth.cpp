// Writes the synthetic cipher corpus used by the end-to-end checks.
#include <iostream>

#include <CLI11.hpp>

#include "phrasal/synthetic.h"

int main(int argc, char** argv) {
  phrasal::SyntheticConfig cfg;
  std::string out;
  CLI::App app{"Synthetic cipher bitext generator", "phrasal-synth"};
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
  app.add_option("--train-pairs", cfg.train_pairs, "Training sentence pairs")->capture_default_str();
  app.add_option("--heldout-pairs", cfg.heldout_pairs, "Held-out pairs (one gold query each)")->capture_default_str();
  app.add_option("--mono", cfg.mono_sentences, "Monolingual target sentences")->capture_default_str();
  app.add_option("--distractors", cfg.distractors, "Distractor phrase occurrences")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    const auto corpus = phrasal::make_synthetic(cfg);
    phrasal::write_synthetic(out, corpus);
    std::cerr << "wrote " << corpus.train.size() << " training pairs, " << corpus.gold.size() << " gold items, "
              << corpus.distractors.size() << " distractors to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "phrasal-synth: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
