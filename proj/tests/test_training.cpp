#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "wagparse/errors.hpp"
#include "wagparse/nn/ops.hpp"
#include "wagparse/training.hpp"

using namespace wagparse;
using nn::Matrix;
using nn::Var;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.hidden = 16;
  c.heads = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.ffn = 32;
  return c;
}

struct Setup {
  std::vector<CorpusRecord> records = generate(GrammarSpec::builtin(), 24, 5);
  Vocabulary vocab = build_vocabulary(records);
  std::unique_ptr<Seq2SeqModel> model;
  Batch batch;

  Setup() {
    auto c = tiny_model();
    c.vocab_size = static_cast<int>(vocab.size());
    model = std::make_unique<Seq2SeqModel>(c, vocab);
    for (std::size_t i = 0; i < 6; ++i) batch.examples.push_back(make_example(records[i], vocab, WagVariant::kFull));
  }
};

// Reference KL(p || q) from raw logits, written independently of the tape.
double reference_kl(const std::vector<double>& lp, const std::vector<double>& lq) {
  auto normalize = [](const std::vector<double>& l) {
    double m = l[0];
    for (double v : l) m = std::max(m, v);
    double z = 0.0;
    for (double v : l) z += std::exp(v - m);
    std::vector<double> out;
    for (double v : l) out.push_back(v - m - std::log(z));
    return out;
  };
  const auto a = normalize(lp), b = normalize(lq);
  double kl = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) kl += std::exp(a[k]) * (a[k] - b[k]);
  return kl;
}

Matrix row(const std::vector<double>& v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("beta schedule") {
  const BetaSchedule s;
  CHECK(beta_at(s, 0) == 90.0);
  CHECK(beta_at(s, 21000) == 10.0);
  CHECK(beta_at(s, 10500) == 50.0);
  CHECK(beta_at(s, 30000) == 10.0);
  double prev = beta_at(s, 0);
  for (std::int64_t step = 1; step <= 22000; step += 97) {
    const double b = beta_at(s, step);
    CHECK(b <= prev);
    prev = b;
  }
}

TEST_CASE("KL divergence") {
  const std::vector<double> w{1.0};
  SUBCASE("hand pair") {
    const double kl = kl_div(nn::constant(row({std::log(0.5), std::log(0.5)})), nn::constant(row({std::log(0.9), std::log(0.1)})),
                             1.0, w, 1)
                          .scalar();
    const double hand = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    CHECK(std::abs(kl - 0.5108) < 1e-4);
    CHECK(kl == doctest::Approx(hand).epsilon(1e-14));
  }
  SUBCASE("random pairs") {
    nn::Rng rng(17);
    for (int trial = 0; trial < 10000; ++trial) {
      const std::size_t c = 2 + rng.below(6);
      std::vector<double> a(c), b(c);
      for (auto& v : a) v = 3.0 * rng.normal();
      for (auto& v : b) v = 3.0 * rng.normal();
      const double tau = trial % 2 ? 1.0 : 2.0;
      const double kl = kl_div(nn::constant(row(a)), nn::constant(row(b)), tau, w, 1).scalar();
      std::vector<double> at(a), bt(b);
      for (auto& v : at) v /= tau;
      for (auto& v : bt) v /= tau;
      CHECK(kl >= 0.0);
      CHECK(kl == doctest::Approx(reference_kl(at, bt)).epsilon(1e-9));
      CHECK(kl_div(nn::constant(row(a)), nn::constant(row(a)), tau, w, 1).scalar() == 0.0);
    }
  }
  SUBCASE("direction matters") {
    const Matrix p = row({0.1, 2.0, -1.0}), q = row({1.0, 0.0, 0.5});
    const double pq = kl_div(nn::constant(p), nn::constant(q), 1.0, w, 1).scalar();
    const double qp = kl_div(nn::constant(q), nn::constant(p), 1.0, w, 1).scalar();
    CHECK(pq == doctest::Approx(reference_kl({0.1, 2.0, -1.0}, {1.0, 0.0, 0.5})).epsilon(1e-12));
    CHECK(std::abs(pq - qp) > 1e-3);
  }
  SUBCASE("padding rows and batch averaging") {
    Matrix p(2, 2), q(2, 2);
    p << 0.0, 0.0, 5.0, -5.0;
    q << std::log(0.9), std::log(0.1), -5.0, 5.0;
    const double kl = kl_div(nn::constant(p), nn::constant(q), 1.0, {1.0, 0.0}, 2).scalar();
    CHECK(kl == doctest::Approx(reference_kl({0.0, 0.0}, {std::log(0.9), std::log(0.1)}) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("masking augmentation") {
  Setup s;
  nn::Rng rng(3);
  CHECK(mask_batch(MaskingAugmenter{0.0, 0.0}, s.batch, rng).examples[0].source == s.batch.examples[0].source);

  Batch big;
  Example e;
  e.source.push_back(Vocabulary::kBos);
  for (int i = 0; i < 10000; ++i) e.source.push_back(Vocabulary::kFirstFree + i % 50);
  e.source.push_back(Vocabulary::kEos);
  e.target = {Vocabulary::kOpen};
  big.examples.push_back(e);
  double drawn = -1.0;
  const auto masked = mask_batch(MaskingAugmenter{0.15, 0.15}, big, rng, &drawn);
  CHECK(drawn == doctest::Approx(0.15).epsilon(1e-15));
  std::size_t count = 0;
  for (int id : masked.examples[0].source) count += id == Vocabulary::kMask ? 1 : 0;
  CHECK(std::abs(static_cast<double>(count) / 10000.0 - 0.15) < 0.01);
  CHECK(masked.examples[0].source.front() == Vocabulary::kBos);
  CHECK(masked.examples[0].source.back() == Vocabulary::kEos);
  CHECK(masked.examples[0].target == e.target);

  for (int trial = 0; trial < 100; ++trial) {
    mask_batch(MaskingAugmenter{0.02, 0.08}, s.batch, rng, &drawn);
    CHECK(drawn >= 0.02);
    CHECK(drawn <= 0.08);
  }
  CHECK_THROWS_AS(mask_batch(MaskingAugmenter{0.5, 0.1}, s.batch, rng), Error);
}

TEST_CASE("l_leak") {
  Setup s;
  RunContext ctx;
  for (auto* p : s.model->adapter_parameters()) {
    if (p->name.ends_with(".wa")) p->value.matrix().setZero();
  }
  const auto off = s.model->forward(s.batch, LeakMode::kOff, ctx);
  CHECK(l_leak(*s.model, s.batch, ctx).scalar() == nll_loss(off.log_probs(), off).scalar());
  auto bare = s.batch;
  bare.examples[0].wag.reset();
  CHECK_THROWS_AS(l_leak(*s.model, bare, ctx), Error);
}

TEST_CASE("leakdistill accounting") {
  Setup s;
  nn::Rng rng(1);
  RunContext ctx{true, &rng};
  const LossWeights w{20.0, 37.5, 1.0};
  const auto r = leakdistill_step(*s.model, s.batch, w, false, ctx);
  const auto& l = r.losses;
  CHECK(std::isfinite(l.l_nll));
  CHECK(std::isfinite(l.l_leak));
  CHECK(std::isfinite(l.l_kl));
  CHECK(std::abs(r.loss.scalar() - (l.l_nll + l.beta * l.l_leak + l.alpha * l.l_kl)) <= 1e-12);
  CHECK(l.total == r.loss.scalar());
  CHECK(l.l_kl > 0.0);

  SUBCASE("neutral adapters make both passes equal") {
    for (auto* p : s.model->adapter_parameters()) {
      if (p->name.ends_with(".wa")) p->value.matrix().setZero();
    }
    s.model->set_adapters_trainable(false);
    RunContext plain;
    CHECK(leakdistill_step(*s.model, s.batch, w, false, plain).losses.l_kl == 0.0);
  }
  SUBCASE("alpha = beta = 0 is plain training") {
    RunContext plain;
    const auto ld = leakdistill_step(*s.model, s.batch, LossWeights{0.0, 0.0, 1.0}, false, plain);
    s.model->params().zero_grad();
    nn::backward(ld.loss);
    std::vector<Matrix> g1;
    for (auto* p : s.model->params().all()) g1.push_back(p->grad.matrix());
    const auto off = s.model->forward(s.batch, LeakMode::kOff, plain);
    s.model->params().zero_grad();
    nn::backward(nll_loss(off.log_probs(), off));
    std::size_t i = 0;
    for (auto* p : s.model->params().all()) CHECK(p->grad.matrix() == g1[i++]);
  }
}

TEST_CASE("kd step") {
  Setup s;
  auto student_config = s.model->config();
  Seq2SeqModel student(student_config, s.vocab);
  RunContext ctx;
  CHECK_THROWS_AS(kd_step(*s.model, student, s.batch, 10.0, 1.0, ctx), Error);
  student.set_decoder_trainable(false);
  const auto alpha0 = kd_step(*s.model, student, s.batch, 0.0, 1.0, ctx);
  const auto off = student.forward(s.batch, LeakMode::kOff, ctx);
  CHECK(alpha0.loss.scalar() == nll_loss(off.log_probs(), off).scalar());

  const auto r = kd_step(*s.model, student, s.batch, 10.0, 1.0, ctx);
  s.model->params().zero_grad();
  student.params().zero_grad();
  nn::backward(r.loss);
  for (const auto* p : s.model->params().all()) CHECK(p->grad.matrix().isZero());
  for (const auto* p : student.decoder_parameters()) CHECK(p->grad.matrix().isZero());
  bool encoder_moves = false;
  for (auto* p : student.params().with_prefix("enc.")) encoder_moves = encoder_moves || !p->grad.matrix().isZero();
  CHECK(encoder_moves);
}

TEST_CASE("gradient checks of the four losses") {
  nn::GradCheckOptions options;
  options.samples_per_parameter = 2;
  const auto reports = grad_check_losses(TrainConfig{}, options);
  REQUIRE(reports.size() == 4);
  for (const auto& r : reports) {
    INFO(r.loss);
    CHECK(r.result.max_relative_error < 1e-4);
    CHECK(r.result.coordinates > 0);
  }
}

TEST_CASE("train config") {
  TrainConfig c;
  c.epochs = 3;
  c.beta_sched = false;
  c.beta = 12.5;
  c.model.hidden = 32;
  const auto j = c.to_json();
  CHECK(TrainConfig::from_json(j).to_json() == j);
  auto bad = j;
  bad["leakdistill"]["alhpa"] = 3;
  try {
    TrainConfig::from_json(bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kConfig);
  }
  bad = j;
  bad["optimizer"] = "radam";
  CHECK_THROWS_AS(TrainConfig::from_json(bad), Error);
  CHECK(parse_regime("leakdistill") == Regime::kLeakDistill);
  CHECK_THROWS_AS(parse_regime("glm2"), Error);
}

TEST_CASE("split dev") {
  const auto records = generate(GrammarSpec::builtin(), 25, 1);
  const auto [train, dev] = split_dev(records, 0.1);
  CHECK(dev.size() == 3);
  CHECK(train.size() == 22);
  CHECK(dev.front() == records[22]);
}

namespace {

TrainRequest small_request(Regime regime, const std::filesystem::path& out) {
  const auto records = generate(GrammarSpec::builtin(), 72, 13);
  TrainRequest req;
  req.regime = regime;
  req.config.epochs = 4;
  req.config.batch_size = 8;
  req.config.model = tiny_model();
  req.config.dev_limit = 8;
  auto [train, dev] = split_dev(records, 0.1);
  req.train = train;
  req.dev = dev;
  req.out_dir = out;
  return req;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("training is reproducible and resumable") {
  const auto a = fresh_dir("wagparse_train_a");
  const auto b = fresh_dir("wagparse_train_b");
  const auto r1 = train(small_request(Regime::kLeakDistill, a));
  CHECK(r1.steps == 4 * 8);  // 64 training records in batches of 8
  CHECK(std::filesystem::exists(a / "model.bin"));
  CHECK(std::filesystem::exists(a / "vocab.json"));
  CHECK(std::filesystem::exists(a / "config.json"));

  auto first = small_request(Regime::kLeakDistill, b);
  first.max_epochs_this_run = 2;
  train(first);
  auto rest = small_request(Regime::kLeakDistill, b);
  rest.resume = true;
  const auto r2 = train(rest);
  CHECK(r2.steps == r1.steps);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "model.bin") == slurp(b / "model.bin"));

  std::istringstream lines(slurp(a / "metrics.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "l_nll", "l_leak", "l_kl", "beta", "dev_smatch"}) CHECK(j.contains(key));
    ++n;
  }
  CHECK(n == 4);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("regime and corpus mismatches are config errors") {
  const auto dir = fresh_dir("wagparse_train_kd");
  auto req = small_request(Regime::kKd, dir);
  try {
    train(req);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kConfig);
  }
  auto glm = small_request(Regime::kGlm, dir);
  glm.train[0].alignment = Alignment{};
  CHECK_THROWS_AS(train(glm), Error);
  std::filesystem::remove_all(dir);
}
