// Command-line entry point: corpus generation, training, evaluation, parsing
// and inspection tools.
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "wagparse/corpus.hpp"
#include "wagparse/decode.hpp"
#include "wagparse/errors.hpp"
#include "wagparse/grammar.hpp"
#include "wagparse/linearize.hpp"
#include "wagparse/smatch.hpp"
#include "wagparse/training.hpp"
#include "wagparse/wag.hpp"

namespace {

using namespace wagparse;

constexpr const char* kSeedEnv = "WAGPARSE_SEED";

std::uint64_t default_seed() {
  if (const char* s = std::getenv(kSeedEnv); s != nullptr && *s != '\0') {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      fail(ErrorCategory::kConfig, std::string(kSeedEnv) + " is not an unsigned integer");
    }
  }
  return 7;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCategory::kIo, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kInput, path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(out.good(), ErrorCategory::kIo, "cannot write " + path);
  out << j.dump(2) << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Seq2seq graph parser with word-aligned graph leakage and self-distillation"};
  app.require_subcommand(1);

  // generate-corpus
  std::string spec_path, out_path;
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  bool seed_given = false;
  auto* gen = app.add_subcommand("generate-corpus", "Write a synthetic JSONL corpus with gold alignments");
  gen->add_option("--spec", spec_path, "Grammar spec JSON (default: built-in grammar)");
  gen->add_option("--n", n, "Number of records")->check(CLI::PositiveNumber);
  gen->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { seed = v; seed_given = true; },
                                          std::string("Seed (default: $") + kSeedEnv + " or 7)");
  gen->add_option("--out", out_path, "Output JSONL")->required();

  // train
  std::string regime, corpus_path, config_path, ckpt_dir, teacher_dir, dev_path;
  bool resume = false;
  auto* tr = app.add_subcommand("train", "Train one regime and keep the best dev checkpoint");
  tr->add_option("--regime", regime, "baseline | glm | kd | leakdistill")->required();
  tr->add_option("--corpus", corpus_path, "Training corpus JSONL (dev split held out unless --dev)")->required();
  tr->add_option("--config", config_path, "Training config JSON (default: built-in defaults)");
  tr->add_option("--out", ckpt_dir, "Checkpoint directory")->required();
  tr->add_option("--teacher", teacher_dir, "GLM checkpoint directory (kd only)");
  tr->add_option("--dev", dev_path, "Separate dev corpus JSONL");
  tr->add_flag("--resume", resume, "Continue from the state saved in --out");

  // evaluate
  std::string model_dir, report_path, predictions_path;
  int beam = 4;
  std::size_t bucket_size = 50;
  bool leak = false;
  auto* ev = app.add_subcommand("evaluate", "Decode a corpus and write a SMATCH report");
  ev->add_option("--model", model_dir, "Checkpoint directory");
  ev->add_option("--corpus", corpus_path, "Gold corpus JSONL")->required();
  ev->add_option("--beam", beam, "Beam size (1 = greedy)")->check(CLI::PositiveNumber);
  ev->add_option("--report", report_path, "Report JSON path (default: stdout)");
  ev->add_option("--predictions", predictions_path, "Score graphs from this JSONL instead of decoding");
  ev->add_option("--bucket-size", bucket_size, "Pairs per length bucket")->check(CLI::PositiveNumber);
  ev->add_flag("--leak", leak, "Feed gold WAGs to the encoder (GLM upper bound only)");

  // parse
  std::string sentence;
  auto* pa = app.add_subcommand("parse", "Parse one sentence");
  pa->add_option("--model", model_dir, "Checkpoint directory")->required();
  pa->add_option("--sentence", sentence, "Whitespace-tokenized sentence")->required();
  pa->add_option("--beam", beam, "Beam size (1 = greedy)")->check(CLI::PositiveNumber);

  // grad-check
  std::size_t samples = 6;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the four training losses");
  gc->add_option("--config", config_path, "Training config JSON (default: built-in defaults)");
  gc->add_option("--samples", samples, "Coordinates sampled per parameter")->check(CLI::PositiveNumber);

  // wag
  std::string record_path, variant = "full";
  auto* wg = app.add_subcommand("wag", "Dump the word-aligned graph of one record");
  wg->add_option("--record", record_path, "Record JSON (one corpus line)")->required();
  wg->add_option("--variant", variant, "full | contracted")->check(CLI::IsMember({"full", "contracted"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 2;
  }

  if (*gen) {
    const auto spec = spec_path.empty() ? GrammarSpec::builtin() : GrammarSpec::load(spec_path);
    const auto records = generate(spec, n, seed_given ? seed : default_seed());
    write_corpus(out_path, records);
    std::cout << "wrote " << records.size() << " records to " << out_path << '\n';
    return 0;
  }

  if (*tr) {
    TrainRequest req;
    req.regime = parse_regime(regime);
    req.config = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
    if (config_path.empty()) req.config.seed = default_seed();
    auto corpus = read_corpus(corpus_path);
    if (dev_path.empty()) {
      auto [train_set, dev_set] = split_dev(corpus, req.config.dev_fraction);
      req.train = std::move(train_set);
      req.dev = std::move(dev_set);
    } else {
      req.train = std::move(corpus);
      req.dev = read_corpus(dev_path);
    }
    req.out_dir = ckpt_dir;
    req.teacher_dir = teacher_dir;
    req.resume = resume;
    const auto start = std::chrono::steady_clock::now();
    req.on_epoch = [&](const EpochMetrics& m) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "[" << regime << "] " << m.to_json().dump() << " (" << static_cast<int>(secs) << "s)\n";
    };
    const auto result = train(req);
    std::cout << nlohmann::json{{"regime", regime},
                                {"best_dev_smatch", result.best_dev_smatch},
                                {"best_epoch", result.best_epoch},
                                {"steps", result.steps}}
                     .dump()
              << '\n';
    return 0;
  }

  if (*ev) {
    const auto gold = read_corpus(corpus_path);
    SmatchReport report;
    if (!predictions_path.empty()) {
      const auto predicted = read_corpus(predictions_path);
      require(predicted.size() == gold.size(), ErrorCategory::kInput, "prediction and gold corpora differ in length");
      std::vector<AmrGraph> preds, golds;
      std::vector<std::size_t> words;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        preds.push_back(predicted[i].graph);
        golds.push_back(gold[i].graph);
        words.push_back(gold[i].tokens.size());
      }
      report = evaluate_graphs(preds, golds, words, bucket_size, SmatchOptions{10, default_seed()});
    } else {
      require(!model_dir.empty(), ErrorCategory::kConfig, "evaluate needs --model or --predictions");
      const auto model = Seq2SeqModel::load(model_dir);
      EvalOptions options;
      options.decode.beam = beam;
      options.decode.mode = leak ? LeakMode::kLeak : LeakMode::kOff;
      options.bucket_size = bucket_size;
      options.smatch.seed = default_seed();
      report = evaluate_model(*model, gold, options).report;
    }
    if (report_path.empty()) {
      std::cout << report.to_json().dump(2) << '\n';
    } else {
      write_json_file(report_path, report.to_json());
      std::cout << "corpus_f1 " << report.corpus.f1() << '\n';
    }
    return 0;
  }

  if (*pa) {
    const auto model = Seq2SeqModel::load(model_dir);
    DecodeOptions options;
    options.beam = beam;
    const auto result = parse_sentence(*model, split_words(sentence), options);
    if (result.graph.empty()) {
      std::cout << "(empty graph)\n";
    } else {
      std::cout << linearize(result.graph).to_string() << "\n\n" << pretty_print(result.graph) << '\n';
    }
    for (const auto& action : result.report.actions) std::cerr << "repair: " << action << '\n';
    return 0;
  }

  if (*gc) {
    const auto config = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
    nn::GradCheckOptions options;
    options.samples_per_parameter = samples;
    options.seed = config.seed;
    bool ok = true;
    for (const auto& r : grad_check_losses(config, options)) {
      const bool pass = r.result.max_relative_error < 1e-4;
      ok = ok && pass;
      std::cout << r.loss << " max_rel_err=" << r.result.max_relative_error << " coords=" << r.result.coordinates
                << " worst=" << r.result.worst_parameter << (pass ? " ok" : " FAIL") << '\n';
    }
    if (!ok) fail(ErrorCategory::kNumeric, "gradient check above tolerance");
    return 0;
  }

  if (*wg) {
    const auto record = record_from_json(read_json_file(record_path));
    const auto wag = build_wag(record.graph, record.alignment, parse_wag_variant(variant));
    std::cout << wag_to_json(wag, record.tokens).dump(2) << '\n';
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const wagparse::Error& e) {
    std::cerr << "error: " << wagparse::category_name(e.category()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
}
