#include "wagparse/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "wagparse/errors.hpp"
#include "wagparse/grammar.hpp"
#include "wagparse/linearize.hpp"

namespace wagparse {

using nn::Var;

void LossWeights::check() const {
  require(alpha >= 0.0 && beta >= 0.0 && tau > 0.0, ErrorCategory::kConfig, "loss weights need alpha, beta >= 0 and tau > 0");
}

double beta_at(const BetaSchedule& schedule, std::int64_t step) {
  require(step >= 0, ErrorCategory::kConfig, "beta schedule step must be non-negative");
  if (schedule.steps <= 0 || step >= schedule.steps) return schedule.end;
  if (step == 0) return schedule.start;
  const double frac = static_cast<double>(step) / static_cast<double>(schedule.steps);
  return schedule.start + (schedule.end - schedule.start) * frac;
}

void MaskingAugmenter::check() const {
  require(lo >= 0.0 && lo <= hi && hi <= 1.0, ErrorCategory::kConfig, "masking range must satisfy 0 <= lo <= hi <= 1");
}

Batch mask_batch(const MaskingAugmenter& augmenter, const Batch& batch, nn::Rng& rng, double* drawn) {
  augmenter.check();
  const double p = rng.uniform(augmenter.lo, augmenter.hi);
  if (drawn != nullptr) *drawn = p;
  Batch out = batch;
  for (auto& ex : out.examples) {
    for (auto& id : ex.source) {
      if (id >= Vocabulary::kFirstVariable && rng.bernoulli(p)) id = Vocabulary::kMask;
    }
  }
  return out;
}

Var l_leak(const Seq2SeqModel& model, const Batch& batch, RunContext& ctx) {
  require(batch.has_wags(), ErrorCategory::kInput, "l_leak needs a WAG for every example");
  const auto r = model.forward(batch, LeakMode::kLeak, ctx);
  return nll_loss(r.log_probs(), r);
}

Var kl_div(const Var& student_logits, const Var& teacher_logits, double tau, const std::vector<double>& weights,
           std::size_t batch_size) {
  require(tau > 0.0, ErrorCategory::kConfig, "temperature must be positive");
  require(batch_size > 0, ErrorCategory::kInput, "empty batch");
  auto temper = [tau](const Var& x) { return nn::log_softmax(tau == 1.0 ? x : nn::scale(x, 1.0 / tau)); };
  return nn::scale(nn::kl_rows(temper(student_logits), temper(teacher_logits), weights), 1.0 / static_cast<double>(batch_size));
}

namespace {

Var weighted_total(const Var& nll, const Var& leak, double beta, const Var& kl, double alpha, StepLosses& losses) {
  losses.l_nll = nll.scalar();
  losses.beta = beta;
  losses.alpha = alpha;
  Var total = nll;
  if (leak.defined()) {
    losses.l_leak = leak.scalar();
    total = nn::add(total, nn::scale(leak, beta));
  }
  if (kl.defined()) {
    losses.l_kl = kl.scalar();
    total = nn::add(total, nn::scale(kl, alpha));
  }
  losses.total = total.scalar();
  return total;
}

}  // namespace

StepResult kd_step(const Seq2SeqModel& teacher, Seq2SeqModel& student, const Batch& batch, double alpha, double tau,
                   RunContext& ctx) {
  for (const auto* p : student.decoder_parameters()) {
    require(!p->trainable, ErrorCategory::kConfig, "KD student decoder parameter " + p->name + " is not frozen");
  }
  require(alpha >= 0.0, ErrorCategory::kConfig, "alpha must be non-negative");
  Var teacher_logits;
  {
    nn::NoGradGuard guard;
    RunContext frozen;  // the teacher runs deterministically, without dropout
    teacher_logits = nn::constant(teacher.forward(batch, LeakMode::kLeak, frozen).logits.value());
  }
  const auto r = student.forward(batch, LeakMode::kOff, ctx);
  const Var nll = nll_loss(r.log_probs(), r);
  const Var kl = kl_div(r.logits, teacher_logits, tau, r.weights, r.batch_size);
  StepResult out;
  out.loss = weighted_total(nll, Var(), 0.0, kl, alpha, out.losses);
  return out;
}

StepResult leakdistill_step(const Seq2SeqModel& model, const Batch& batch, const LossWeights& weights,
                            bool detach_teacher, RunContext& ctx) {
  weights.check();
  const auto off = model.forward(batch, LeakMode::kOff, ctx);
  const auto leak = model.forward(batch, LeakMode::kLeak, ctx);
  const Var nll = nll_loss(off.log_probs(), off);
  const Var leak_nll = nll_loss(leak.log_probs(), leak);
  const Var q_logits = detach_teacher ? nn::constant(leak.logits.value()) : leak.logits;
  const Var kl = kl_div(off.logits, q_logits, weights.tau, off.weights, off.batch_size);
  StepResult out;
  out.loss = weighted_total(nll, leak_nll, weights.beta, kl, weights.alpha, out.losses);
  return out;
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::kBaseline:
      return "baseline";
    case Regime::kGlm:
      return "glm";
    case Regime::kKd:
      return "kd";
    case Regime::kLeakDistill:
      return "leakdistill";
  }
  return "?";
}

Regime parse_regime(const std::string& text) {
  if (text == "baseline") return Regime::kBaseline;
  if (text == "glm") return Regime::kGlm;
  if (text == "kd") return Regime::kKd;
  if (text == "leakdistill") return Regime::kLeakDistill;
  fail(ErrorCategory::kConfig, "unknown regime '" + text + "'");
}

void TrainConfig::check() const {
  require(epochs >= 1, ErrorCategory::kConfig, "epochs must be at least 1");
  require(dev_fraction > 0.0 && dev_fraction < 1.0, ErrorCategory::kConfig, "dev_fraction must lie in (0, 1)");
  require(batch_size >= 1 && grad_accum >= 1, ErrorCategory::kConfig, "batch_size and grad_accum must be positive");
  require(optimizer == "adam", ErrorCategory::kConfig, "only the adam optimizer is available");
  require(lr > 0.0, ErrorCategory::kConfig, "lr must be positive");
  require(lr_sched == "const" || lr_sched == "linear", ErrorCategory::kConfig, "lr_sched must be const or linear");
  require(weight_decay >= 0.0, ErrorCategory::kConfig, "weight_decay must be non-negative");
  mask_range.check();
  require(beamsize >= 1, ErrorCategory::kConfig, "beamsize must be at least 1");
  require(kd_alpha >= 0.0 && alpha >= 0.0 && beta >= 0.0, ErrorCategory::kConfig, "alpha and beta must be non-negative");
  require(kl_temp > 0.0, ErrorCategory::kConfig, "kl_temp must be positive");
  require(beta_schedule.start >= 0.0 && beta_schedule.end >= 0.0 && beta_schedule.steps >= 0, ErrorCategory::kConfig,
          "beta schedule needs non-negative values");
  require(bucket_size >= 1 && smatch_restarts >= 0 && eval_every >= 1, ErrorCategory::kConfig, "bad evaluation settings");
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), ErrorCategory::kConfig, where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    require(known.count(k) > 0, ErrorCategory::kConfig, "unknown key '" + k + "' in " + where);
  }
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json model_json = model.to_json();
  model_json.erase("vocab_size");
  model_json.erase("dropout");
  model_json.erase("adapter_dropout");
  model_json.erase("adapter_layers");
  nlohmann::json beta_json;
  if (beta_sched) {
    beta_json = "sched";
  } else {
    beta_json = beta;
  }
  return {
      {"seed", seed},
      {"epochs", epochs},
      {"dev_fraction", dev_fraction},
      {"optimizer", optimizer},
      {"batch_size", batch_size},
      {"dropout", model.dropout},
      {"grad_accum", grad_accum},
      {"weight_decay", weight_decay},
      {"grad_clip", grad_clip},
      {"lr", lr},
      {"lr_sched", lr_sched},
      {"mask_range", {mask_range.lo, mask_range.hi}},
      {"beamsize", beamsize},
      {"wag", wagparse::to_string(wag)},
      {"adapter", {{"encoder_layers", model.adapter_layers}, {"activation", "GELU"}, {"dropout", model.adapter_dropout}}},
      {"kd", {{"alpha", kd_alpha}, {"decoder", "freeze"}}},
      {"leakdistill",
       {{"kl_temp", kl_temp},
        {"alpha", alpha},
        {"beta", beta_json},
        {"beta_schedule", {{"start", beta_schedule.start}, {"end", beta_schedule.end}, {"steps", beta_schedule.steps}}},
        {"detach_teacher", detach_teacher}}},
      {"eval",
       {{"bucket_size", bucket_size}, {"smatch_restarts", smatch_restarts}, {"eval_every", eval_every}, {"dev_limit", dev_limit}}},
      {"model", model_json},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  try {
    reject_unknown(j,
                   {"seed", "epochs", "dev_fraction", "optimizer", "batch_size", "dropout", "grad_accum", "weight_decay",
                    "grad_clip", "lr", "lr_sched", "mask_range", "beamsize", "wag", "adapter", "kd", "leakdistill", "eval",
                    "model"},
                   "config");
    TrainConfig c;
    c.seed = j.value("seed", c.seed);
    c.epochs = j.value("epochs", c.epochs);
    c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.grad_accum = j.value("grad_accum", c.grad_accum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.lr = j.value("lr", c.lr);
    c.lr_sched = j.value("lr_sched", c.lr_sched);
    if (j.contains("mask_range")) {
      const auto& m = j.at("mask_range");
      require(m.is_array() && m.size() == 2, ErrorCategory::kConfig, "mask_range must be [lo, hi]");
      c.mask_range = {m[0].get<double>(), m[1].get<double>()};
    }
    c.beamsize = j.value("beamsize", c.beamsize);
    if (j.contains("wag")) c.wag = parse_wag_variant(j.at("wag").get<std::string>());
    if (j.contains("model")) {
      reject_unknown(j.at("model"),
                     {"hidden", "heads", "encoder_layers", "decoder_layers", "ffn", "max_positions", "init_seed"}, "model");
      c.model = ModelConfig::from_json(j.at("model"));
    }
    c.model.dropout = j.value("dropout", c.model.dropout);
    if (j.contains("adapter")) {
      const auto& a = j.at("adapter");
      reject_unknown(a, {"encoder_layers", "activation", "dropout"}, "adapter");
      require(a.value("activation", std::string("GELU")) == "GELU", ErrorCategory::kConfig, "adapter activation must be GELU");
      c.model.adapter_layers = a.value("encoder_layers", c.model.adapter_layers);
      c.model.adapter_dropout = a.value("dropout", c.model.adapter_dropout);
    }
    if (j.contains("kd")) {
      const auto& k = j.at("kd");
      reject_unknown(k, {"alpha", "decoder"}, "kd");
      c.kd_alpha = k.value("alpha", c.kd_alpha);
      require(k.value("decoder", std::string("freeze")) == "freeze", ErrorCategory::kConfig,
              "kd.decoder must be freeze: the student decoder is always frozen");
    }
    if (j.contains("leakdistill")) {
      const auto& l = j.at("leakdistill");
      reject_unknown(l, {"kl_temp", "alpha", "beta", "beta_schedule", "detach_teacher"}, "leakdistill");
      c.kl_temp = l.value("kl_temp", c.kl_temp);
      c.alpha = l.value("alpha", c.alpha);
      if (l.contains("beta")) {
        const auto& b = l.at("beta");
        if (b.is_string()) {
          require(b.get<std::string>() == "sched", ErrorCategory::kConfig, "leakdistill.beta must be a number or \"sched\"");
          c.beta_sched = true;
        } else {
          c.beta_sched = false;
          c.beta = b.get<double>();
        }
      }
      if (l.contains("beta_schedule")) {
        const auto& s = l.at("beta_schedule");
        reject_unknown(s, {"start", "end", "steps"}, "leakdistill.beta_schedule");
        c.beta_schedule.start = s.value("start", c.beta_schedule.start);
        c.beta_schedule.end = s.value("end", c.beta_schedule.end);
        c.beta_schedule.steps = s.value("steps", c.beta_schedule.steps);
      }
      c.detach_teacher = l.value("detach_teacher", c.detach_teacher);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown(e, {"bucket_size", "smatch_restarts", "eval_every", "dev_limit"}, "eval");
      c.bucket_size = e.value("bucket_size", c.bucket_size);
      c.smatch_restarts = e.value("smatch_restarts", c.smatch_restarts);
      c.eval_every = e.value("eval_every", c.eval_every);
      c.dev_limit = e.value("dev_limit", c.dev_limit);
    }
    c.check();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kConfig, std::string("bad config value: ") + e.what());
  }
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCategory::kIo, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

Vocabulary build_vocabulary(const std::vector<CorpusRecord>& records) {
  std::vector<std::string> symbols;
  for (const auto& r : records) {
    symbols.insert(symbols.end(), r.tokens.begin(), r.tokens.end());
    for (const auto& n : r.graph.nodes) symbols.push_back(n.concept_name);
    for (const auto& e : r.graph.edges) symbols.push_back(e.relation);
  }
  return Vocabulary::build(symbols);
}

std::pair<std::vector<CorpusRecord>, std::vector<CorpusRecord>> split_dev(const std::vector<CorpusRecord>& records,
                                                                          double fraction) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCategory::kConfig, "dev fraction must lie in (0, 1)");
  require(records.size() >= 2, ErrorCategory::kInput, "corpus too small to split");
  auto dev_n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(records.size())));
  dev_n = std::clamp<std::size_t>(dev_n, 1, records.size() - 1);
  const auto cut = records.begin() + static_cast<std::ptrdiff_t>(records.size() - dev_n);
  return {{records.begin(), cut}, {cut, records.end()}};
}

std::vector<Example> make_examples(const std::vector<CorpusRecord>& records, const Vocabulary& vocab,
                                   std::optional<WagVariant> variant) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(make_example(r, vocab, variant));
  return out;
}

EvalResult evaluate_model(const Seq2SeqModel& model, const std::vector<CorpusRecord>& records, const EvalOptions& options,
                          WagVariant variant) {
  const std::size_t n = options.limit > 0 ? std::min(options.limit, records.size()) : records.size();
  EvalResult result;
  std::vector<AmrGraph> golds;
  std::vector<std::size_t> words;
  const bool leak = options.decode.mode == LeakMode::kLeak;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    const Example ex = make_example(r, model.vocab(), leak ? std::optional<WagVariant>(variant) : std::nullopt);
    const auto hyp = options.decode.beam > 1 ? beam_decode(model, ex, options.decode.beam, options.decode)
                                             : greedy_decode(model, ex, options.decode);
    result.predictions.push_back(delinearize(to_linearized(model.vocab(), hyp.tokens)).graph);
    golds.push_back(r.graph);
    words.push_back(r.tokens.size());
  }
  result.report = evaluate_graphs(result.predictions, golds, words, options.bucket_size, options.smatch);
  return result;
}

nlohmann::json EpochMetrics::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"step", step},  {"l_nll", l_nll},           {"l_leak", l_leak},
                      {"l_kl", l_kl},   {"beta", beta},  {"lr", lr}};
  j["dev_smatch"] = evaluated ? nlohmann::json(dev_smatch) : nlohmann::json(nullptr);
  return j;
}

EpochMetrics EpochMetrics::from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.step = j.at("step").get<std::int64_t>();
  m.l_nll = j.at("l_nll").get<double>();
  m.l_leak = j.at("l_leak").get<double>();
  m.l_kl = j.at("l_kl").get<double>();
  m.beta = j.at("beta").get<double>();
  m.lr = j.at("lr").get<double>();
  m.evaluated = !j.at("dev_smatch").is_null();
  if (m.evaluated) m.dev_smatch = j.at("dev_smatch").get<double>();
  return m;
}

namespace {

void check_regime_inputs(const TrainRequest& req) {
  require(!req.train.empty(), ErrorCategory::kInput, "empty training corpus");
  require(!req.dev.empty(), ErrorCategory::kInput, "empty dev corpus");
  require(!req.out_dir.empty(), ErrorCategory::kConfig, "no output directory");
  if (req.regime != Regime::kBaseline) {
    for (const auto* set : {&req.train, &req.dev}) {
      for (const auto& r : *set) {
        require(!r.alignment.nodes.empty(), ErrorCategory::kConfig,
                "regime " + to_string(req.regime) + " needs aligned records; record " + r.id + " has no alignment");
      }
    }
  }
  if (req.regime == Regime::kKd) {
    require(!req.teacher_dir.empty(), ErrorCategory::kConfig, "kd needs a teacher checkpoint");
  } else {
    require(req.teacher_dir.empty(), ErrorCategory::kConfig, "only kd takes a teacher checkpoint");
  }
}

void write_metrics(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path);
  require(out.good(), ErrorCategory::kIo, "cannot write " + path.string());
  for (const auto& m : history) out << m.to_json().dump() << '\n';
}

void save_state(const std::filesystem::path& dir, const TrainState& state, const Seq2SeqModel& model, const nn::Adam& opt) {
  nn::save_parameters(dir / "last.bin", model.params());
  {
    std::ofstream out(dir / "optimizer.bin", std::ios::binary);
    require(out.good(), ErrorCategory::kIo, "cannot write optimizer state");
    opt.save(out);
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& m : state.history) history.push_back(m.to_json());
  nlohmann::json j = {{"epoch", state.epoch},         {"step", state.step},           {"rng_state", state.rng_state},
                      {"best_dev", state.best_dev},   {"best_epoch", state.best_epoch}, {"history", history}};
  std::ofstream(dir / "train_state.json") << j.dump() << '\n';
}

bool load_state(const std::filesystem::path& dir, TrainState& state, Seq2SeqModel& model, nn::Adam& opt) {
  std::ifstream in(dir / "train_state.json");
  if (!in.good()) return false;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kInput, std::string("corrupt train_state.json: ") + e.what());
  }
  state.epoch = j.at("epoch").get<int>();
  state.step = j.at("step").get<std::int64_t>();
  state.rng_state = j.at("rng_state").get<std::string>();
  state.best_dev = j.at("best_dev").get<double>();
  state.best_epoch = j.at("best_epoch").get<int>();
  state.history.clear();
  for (const auto& m : j.at("history")) state.history.push_back(EpochMetrics::from_json(m));
  nn::load_parameters(dir / "last.bin", model.params());
  std::ifstream opt_in(dir / "optimizer.bin", std::ios::binary);
  require(opt_in.good(), ErrorCategory::kIo, "missing optimizer.bin next to train_state.json");
  opt.load(opt_in);
  return true;
}

}  // namespace

TrainResult train(const TrainRequest& req) {
  const TrainConfig& cfg = req.config;
  cfg.check();
  check_regime_inputs(req);
  std::filesystem::create_directories(req.out_dir);

  std::unique_ptr<Seq2SeqModel> teacher;
  std::unique_ptr<Seq2SeqModel> model;
  if (req.regime == Regime::kKd) {
    teacher = Seq2SeqModel::load(req.teacher_dir);
    teacher->set_decoder_trainable(false);
    teacher->set_adapters_trainable(false);
    for (auto* p : teacher->params().all()) p->trainable = false;
    ModelConfig student_config = teacher->config();
    student_config.dropout = cfg.model.dropout;
    model = std::make_unique<Seq2SeqModel>(student_config, teacher->vocab());
    // Full copy of the teacher minus its adapters.
    for (auto* p : model->params().all()) {
      if (p->name.rfind("adapter.", 0) == 0) continue;
      p->value = teacher->params().get(p->name).value;
    }
  } else {
    model = std::make_unique<Seq2SeqModel>(cfg.model, build_vocabulary(req.train));
  }
  switch (req.regime) {
    case Regime::kBaseline:
      model->set_adapters_trainable(false);
      break;
    case Regime::kKd:
      model->set_adapters_trainable(false);
      model->set_decoder_trainable(false);
      break;
    case Regime::kGlm:
    case Regime::kLeakDistill:
      break;
  }

  const bool needs_wag = req.regime != Regime::kBaseline;
  const auto examples = make_examples(req.train, model->vocab(), needs_wag ? std::optional(cfg.wag) : std::nullopt);

  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  adam.grad_clip = cfg.grad_clip;
  nn::Adam opt(adam);

  const std::size_t batches_per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t updates_per_epoch =
      static_cast<std::int64_t>((batches_per_epoch + static_cast<std::size_t>(cfg.grad_accum) - 1) /
                                static_cast<std::size_t>(cfg.grad_accum));
  const std::int64_t total_steps = updates_per_epoch * cfg.epochs;
  BetaSchedule schedule = cfg.beta_schedule;
  if (schedule.steps == 0) schedule.steps = total_steps;

  nn::Rng rng(cfg.seed);
  TrainState state;
  if (req.resume && load_state(req.out_dir, state, *model, opt)) rng.set_state(state.rng_state);

  {
    nlohmann::json config_json;
    config_json["training"] = cfg.to_json();
    config_json["regime"] = to_string(req.regime);
    std::ofstream(req.out_dir / "config.json") << config_json.dump(2) << '\n';
  }

  EvalOptions eval;
  eval.decode.beam = 1;
  eval.decode.mode = req.regime == Regime::kGlm ? LeakMode::kLeak : LeakMode::kOff;
  eval.bucket_size = cfg.bucket_size;
  eval.smatch.restarts = cfg.smatch_restarts;
  eval.smatch.seed = cfg.seed;
  eval.limit = cfg.dev_limit;

  int run_epochs = 0;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    if (req.max_epochs_this_run > 0 && run_epochs >= req.max_epochs_this_run) break;
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    EpochMetrics metrics;
    metrics.epoch = epoch + 1;
    double sum_nll = 0.0, sum_leak = 0.0, sum_kl = 0.0, sum_beta = 0.0, sum_lr = 0.0;
    std::size_t accumulated = 0;
    model->params().zero_grad();
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      Batch batch;
      const std::size_t end = std::min(examples.size(), (b + 1) * cfg.batch_size);
      for (std::size_t k = b * cfg.batch_size; k < end; ++k) batch.examples.push_back(examples[order[k]]);
      const Batch masked = mask_batch(cfg.mask_range, batch, rng);

      RunContext ctx{true, &rng};
      StepResult step;
      const double beta_now = cfg.beta_sched ? beta_at(schedule, state.step) : cfg.beta;
      switch (req.regime) {
        case Regime::kBaseline: {
          const auto r = model->forward(masked, LeakMode::kOff, ctx);
          step.loss = nll_loss(r.log_probs(), r);
          step.losses.l_nll = step.losses.total = step.loss.scalar();
          break;
        }
        case Regime::kGlm:
          step.loss = l_leak(*model, masked, ctx);
          step.losses.l_leak = step.losses.total = step.loss.scalar();
          break;
        case Regime::kKd:
          step = kd_step(*teacher, *model, masked, cfg.kd_alpha, cfg.kl_temp, ctx);
          break;
        case Regime::kLeakDistill:
          step = leakdistill_step(*model, masked, LossWeights{cfg.alpha, beta_now, cfg.kl_temp}, cfg.detach_teacher, ctx);
          break;
      }
      sum_nll += step.losses.l_nll;
      sum_leak += step.losses.l_leak;
      sum_kl += step.losses.l_kl;
      sum_beta += step.losses.beta;
      nn::backward(cfg.grad_accum > 1 ? nn::scale(step.loss, 1.0 / cfg.grad_accum) : step.loss);
      ++accumulated;
      if (accumulated == static_cast<std::size_t>(cfg.grad_accum) || b + 1 == batches_per_epoch) {
        const double progress = static_cast<double>(state.step) / static_cast<double>(std::max<std::int64_t>(1, total_steps));
        const double lr_now = cfg.lr_sched == "linear" ? cfg.lr * std::max(0.0, 1.0 - progress) : cfg.lr;
        opt.step(model->params(), lr_now);
        model->params().zero_grad();
        sum_lr += lr_now;
        ++state.step;
        accumulated = 0;
      }
    }
    const double nb = static_cast<double>(batches_per_epoch);
    metrics.l_nll = sum_nll / nb;
    metrics.l_leak = sum_leak / nb;
    metrics.l_kl = sum_kl / nb;
    metrics.beta = sum_beta / nb;
    metrics.lr = sum_lr / static_cast<double>(updates_per_epoch);
    metrics.step = state.step;

    const bool last = epoch + 1 == cfg.epochs;
    if (last || (epoch + 1) % cfg.eval_every == 0) {
      metrics.dev_smatch = evaluate_model(*model, req.dev, eval, cfg.wag).report.corpus.f1();
      metrics.evaluated = true;
      if (metrics.dev_smatch > state.best_dev) {
        state.best_dev = metrics.dev_smatch;
        state.best_epoch = metrics.epoch;
        model->save(req.out_dir);
      }
    }
    state.history.push_back(metrics);
    state.epoch = epoch + 1;
    state.rng_state = rng.state();
    write_metrics(req.out_dir / "metrics.jsonl", state.history);
    save_state(req.out_dir, state, *model, opt);
    if (req.on_epoch) req.on_epoch(metrics);
    ++run_epochs;
  }

  TrainResult result;
  result.best_dev_smatch = std::max(0.0, state.best_dev);
  result.best_epoch = state.best_epoch;
  result.steps = state.step;
  result.history = state.history;
  return result;
}

std::vector<GradCheckReport> grad_check_losses(const TrainConfig& config, const nn::GradCheckOptions& options) {
  const auto records = generate(GrammarSpec::builtin(), 2, config.seed);
  const auto vocab = build_vocabulary(records);
  Seq2SeqModel model(config.model, vocab);
  ModelConfig teacher_config = config.model;
  teacher_config.init_seed += 1;
  Seq2SeqModel teacher(teacher_config, vocab);
  Seq2SeqModel student(config.model, vocab);
  student.set_decoder_trainable(false);
  student.set_adapters_trainable(false);
  for (auto* p : teacher.params().all()) p->trainable = false;

  Batch batch;
  batch.examples = make_examples(records, vocab, config.wag);
  // Fresh rng per evaluation: the dropout masks are part of the function.
  auto ctx_for = [&](nn::Rng& rng) { return RunContext{true, &rng}; };

  std::vector<GradCheckReport> out;
  auto run = [&](const std::string& name, Seq2SeqModel& m, const std::function<Var()>& loss) {
    out.push_back({name, nn::grad_check(loss, m.params().all(), options)});
  };
  run("l_nll", model, [&] {
    nn::Rng rng(config.seed);
    auto ctx = ctx_for(rng);
    const auto r = model.forward(batch, LeakMode::kOff, ctx);
    return nll_loss(r.log_probs(), r);
  });
  run("l_leak", model, [&] {
    nn::Rng rng(config.seed);
    auto ctx = ctx_for(rng);
    return l_leak(model, batch, ctx);
  });
  run("l_kd", student, [&] {
    nn::Rng rng(config.seed);
    auto ctx = ctx_for(rng);
    return kd_step(teacher, student, batch, config.kd_alpha, config.kl_temp, ctx).loss;
  });
  run("l_leakdistill", model, [&] {
    nn::Rng rng(config.seed);
    auto ctx = ctx_for(rng);
    const LossWeights w{config.alpha, config.beta_schedule.start, config.kl_temp};
    return leakdistill_step(model, batch, w, config.detach_teacher, ctx).loss;
  });
  return out;
}

}  // namespace wagparse
