#include <doctest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "wagparse/decode.hpp"
#include "wagparse/errors.hpp"
#include "wagparse/linearize.hpp"
#include "wagparse/model.hpp"
#include "wagparse/nn/params.hpp"
#include "wagparse/training.hpp"

using namespace wagparse;
using nn::Matrix;
using nn::Var;

namespace {

ModelConfig tiny_config(const Vocabulary& vocab) {
  ModelConfig c;
  c.hidden = 16;
  c.heads = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.ffn = 32;
  c.vocab_size = static_cast<int>(vocab.size());
  return c;
}

struct Fixture {
  std::vector<CorpusRecord> records = generate(GrammarSpec::builtin(), 40, 21);
  Vocabulary vocab = build_vocabulary(records);
  Seq2SeqModel model{tiny_config(vocab), vocab};

  Batch batch(std::size_t from, std::size_t n, std::optional<WagVariant> variant = WagVariant::kFull) const {
    Batch b;
    for (std::size_t i = from; i < from + n; ++i) b.examples.push_back(make_example(records[i], vocab, variant));
    return b;
  }
};

Matrix encode(const Seq2SeqModel& m, const Batch& b, LeakMode mode) {
  nn::NoGradGuard guard;
  RunContext ctx;
  std::vector<std::vector<int>> sources;
  for (const auto& e : b.examples) sources.push_back(e.source);
  const auto packed = pack(sources);
  if (mode == LeakMode::kOff) return m.encoder().encode(packed, nullptr, ctx).hidden.value();
  const auto binding = bind_nodes(b, packed, m.vocab().size());
  return m.encoder().encode(packed, &binding, ctx).hidden.value();
}

void set_all(const std::vector<nn::Parameter*>& params, const std::string& suffix, double value) {
  for (auto* p : params) {
    if (p->name.size() >= suffix.size() && p->name.compare(p->name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      p->value.matrix().setConstant(value);
    }
  }
}

}  // namespace

TEST_CASE("graph conv hand values") {
  const Matrix eye = Matrix::Identity(2, 2);
  SUBCASE("isolated node") {
    const auto adj = normalized_adjacency(1, {});
    Matrix h(1, 2);
    h << 0.3, -1.2;
    CHECK(graph_conv(nn::constant(h), adj, nn::constant(eye)).value() == h);
  }
  SUBCASE("two connected nodes") {
    const auto adj = normalized_adjacency(2, {{0, 1}});
    const Matrix out = graph_conv(nn::constant(eye), adj, nn::constant(eye)).value();
    CHECK((out.array() - 0.5).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("permutation equivariance") {
    nn::Rng rng(3);
    Matrix h(4, 3), w(3, 3);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {1, 3}};
    const std::vector<int> perm{2, 0, 3, 1};  // old index -> new index
    std::vector<std::pair<int, int>> permuted;
    Matrix hp(4, 3);
    for (auto [a, b] : edges) permuted.emplace_back(perm[a], perm[b]);
    for (int i = 0; i < 4; ++i) hp.row(perm[i]) = h.row(i);
    const Matrix out = graph_conv(nn::constant(h), normalized_adjacency(4, edges), nn::constant(w)).value();
    const Matrix outp = graph_conv(nn::constant(hp), normalized_adjacency(4, permuted), nn::constant(w)).value();
    for (int i = 0; i < 4; ++i) CHECK((outp.row(perm[i]) - out.row(i)).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK_THROWS_AS(normalized_adjacency(2, {{0, 2}}), Error);
}

TEST_CASE("adapter identities and gradient") {
  nn::Rng rng(5);
  Matrix h(3, 4);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal();
  nn::Parameter wg("wg", nn::Tensor(Matrix::Zero(4, 4)));
  nn::Parameter wa("wa", nn::Tensor(Matrix::Zero(4, 4)));
  for (Eigen::Index i = 0; i < 16; ++i) wg.value.matrix().data()[i] = rng.normal();
  const StructuralAdapter adapter(wg, wa, 0.0);
  const auto adj = normalized_adjacency(3, {{0, 1}, {1, 2}});
  RunContext ctx;
  CHECK(adapter.forward(nn::constant(h), adj, ctx).value() == h);
  for (Eigen::Index i = 0; i < 16; ++i) wa.value.matrix().data()[i] = rng.normal();
  wg.value.matrix().setZero();
  CHECK(adapter.forward(nn::constant(h), adj, ctx).value() == h);
  for (Eigen::Index i = 0; i < 16; ++i) wg.value.matrix().data()[i] = rng.normal();
  const Matrix probe = Matrix::Random(3, 4);
  auto loss = [&] { return nn::sum(nn::matmul(adapter.forward(nn::constant(h), adj, ctx), nn::constant(probe.transpose()))); };
  nn::GradCheckOptions options;
  options.samples_per_parameter = 16;
  CHECK(nn::grad_check(loss, {&wg, &wa}, options).max_relative_error < 1e-4);
}

TEST_CASE("virtual state initialization") {
  Fixture f;
  const auto& vocab = f.vocab;
  CHECK(label_token_ids(":location", vocab) == std::vector<int>{vocab.id(":location")});
  CHECK(label_token_ids("teach-01", vocab) == std::vector<int>{vocab.id("teach-01")});
  const auto pieces = label_token_ids("dog-zz", vocab);
  CHECK(pieces == std::vector<int>{vocab.id("dog"), Vocabulary::kUnk});

  // Two-piece label: S^0 row is the mean of the two embedding rows.
  CorpusRecord r;
  r.tokens = {"the", "dog", "ran"};
  r.graph = test::make_graph({{"r", "run-02"}, {"d", "dog"}, {"x", "big boy"}}, {{"r", ":ARG0", "d"}, {"d", ":mod", "x"}});
  r.alignment.nodes = {{"r", {2}}, {"d", {1}}};
  Batch b;
  b.examples.push_back(make_example(r, vocab, WagVariant::kFull));
  const auto packed = pack({b.examples[0].source});
  const auto binding = bind_nodes(b, packed, vocab.size());
  const Matrix s0 = f.model.encoder().init_virtual_states(binding).value();
  const Matrix& table = f.model.encoder().base().embedding().value.matrix();
  // Virtual nodes in order: "big boy", ":ARG0", ":mod".
  REQUIRE(s0.rows() == 3);
  const Matrix mean = 0.5 * (table.row(vocab.id("big")) + table.row(vocab.id("boy")));
  CHECK((s0.row(0) - mean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(s0.row(1) == table.row(vocab.id(":ARG0")));
}

TEST_CASE("encode Off equals a plain encoder") {
  Fixture f;
  nn::ParameterStore plain_store;
  nn::Rng init(99);
  const TransformerEncoder plain(plain_store, f.model.config(), init);
  CHECK(plain_store.copy_values_from(f.model.params()) == plain_store.all().size());
  for (std::size_t i = 0; i + 4 <= f.records.size(); i += 4) {
    const auto b = f.batch(i, 4);
    std::vector<std::vector<int>> sources;
    for (const auto& e : b.examples) sources.push_back(e.source);
    RunContext ctx;
    nn::NoGradGuard guard;
    CHECK(plain.forward(pack(sources), ctx).value() == encode(f.model, b, LeakMode::kOff));
  }
}

TEST_CASE("Leak encoding with neutral adapters equals Off") {
  Fixture f;
  const auto b = f.batch(0, 8);
  const Matrix off = encode(f.model, b, LeakMode::kOff);
  CHECK((encode(f.model, b, LeakMode::kLeak) - off).cwiseAbs().maxCoeff() > 1e-6);
  const auto adapters = f.model.adapter_parameters();
  std::vector<Matrix> saved;
  for (auto* p : adapters) saved.push_back(p->value.matrix());
  set_all(adapters, ".wa", 0.0);
  CHECK((encode(f.model, b, LeakMode::kLeak) - off).cwiseAbs().maxCoeff() <= 1e-12);
  for (std::size_t i = 0; i < adapters.size(); ++i) adapters[i]->value.matrix() = saved[i];
  set_all(adapters, ".wg", 0.0);
  CHECK((encode(f.model, b, LeakMode::kLeak) - off).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("CWAG and FWAG agree on fully aligned input") {
  Fixture f;
  CorpusRecord r;
  r.tokens = {"the", "dog", "ran"};
  r.graph = test::make_graph({{"r", "run-02"}, {"d", "dog"}}, {{"r", ":ARG0", "d"}});
  r.alignment.nodes = {{"r", {2}}, {"d", {1}}};
  r.alignment.edges = {{0, {0}}};
  Batch full, cont;
  full.examples.push_back(make_example(r, f.vocab, WagVariant::kFull));
  cont.examples.push_back(make_example(r, f.vocab, WagVariant::kContracted));
  CHECK(encode(f.model, full, LeakMode::kLeak) == encode(f.model, cont, LeakMode::kLeak));
}

TEST_CASE("adapter leaves unbound tokens alone and keeps shapes") {
  Fixture f;
  const auto b = f.batch(0, 3);
  std::vector<std::vector<int>> sources;
  for (const auto& e : b.examples) sources.push_back(e.source);
  const auto packed = pack(sources);
  const auto binding = bind_nodes(b, packed, f.vocab.size());
  nn::NoGradGuard guard;
  RunContext ctx;
  const auto off = f.model.encoder().encode(packed, nullptr, ctx);
  const auto leak = f.model.encoder().encode(packed, &binding, ctx);
  const std::set<int> bound(binding.aligned_rows.begin(), binding.aligned_rows.end());
  const Matrix first_off = off.layer_states[0].value();
  const Matrix first_leak = leak.layer_states[0].value();
  CHECK(first_leak.rows() == static_cast<Eigen::Index>(packed.ids.size()));
  for (Eigen::Index r = 0; r < first_off.rows(); ++r) {
    if (!bound.count(static_cast<int>(r))) CHECK(first_leak.row(r) == first_off.row(r));
  }
  for (const auto& s : leak.virtual_states) CHECK(s.rows() == static_cast<Eigen::Index>(binding.virtual_nodes.size()));
  CHECK(leak.virtual_states.size() == static_cast<std::size_t>(f.model.config().encoder_layers + 1));
}

TEST_CASE("adapters receive gradient under Leak") {
  Fixture f;
  const auto b = f.batch(0, 4);
  RunContext ctx;
  const auto result = f.model.forward(b, LeakMode::kLeak, ctx);
  f.model.params().zero_grad();
  nn::backward(nll_loss(result.log_probs(), result));
  for (auto* p : f.model.adapter_parameters()) CHECK(p->grad.matrix().cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("forward rows are normalized and the Off pass ignores WAGs") {
  Fixture f;
  const auto b = f.batch(0, 5);
  RunContext ctx;
  nn::NoGradGuard guard;
  const auto r = f.model.forward(b, LeakMode::kOff, ctx);
  const Matrix lp = r.log_probs().value();
  for (Eigen::Index i = 0; i < lp.rows(); ++i) CHECK(std::abs(lp.row(i).array().exp().sum() - 1.0) < 1e-9);
  auto stripped = b;
  for (auto& e : stripped.examples) e.wag.reset();
  CHECK(f.model.forward(stripped, LeakMode::kOff, ctx).logits.value() == r.logits.value());
  CHECK_THROWS_AS(f.model.forward(stripped, LeakMode::kLeak, ctx), Error);
}

TEST_CASE("nll loss") {
  Fixture f;
  const auto b = f.batch(0, 3);
  RunContext ctx;
  nn::NoGradGuard guard;
  const auto r = f.model.forward(b, LeakMode::kOff, ctx);
  // Uniform logits give ln C per target token.
  const Var uniform = nn::log_softmax(nn::constant(Matrix::Zero(r.logits.rows(), r.logits.cols())));
  std::size_t tokens = 0;
  for (const auto& e : b.examples) tokens += e.target.size() + 1;
  CHECK(nll_loss(uniform, r).scalar() ==
        doctest::Approx(static_cast<double>(tokens) * std::log(static_cast<double>(f.vocab.size())) / 3.0).epsilon(1e-12));
  CHECK(nll_loss(r.log_probs(), r).scalar() ==
        doctest::Approx(nn::cross_entropy(r.logits, r.targets, r.weights).scalar() / 3.0).epsilon(1e-12));
}

TEST_CASE("decoder causality") {
  Fixture f;
  auto b = f.batch(0, 1);
  RunContext ctx;
  nn::NoGradGuard guard;
  const Matrix base = f.model.forward(b, LeakMode::kOff, ctx).logits.value();
  const std::size_t t = 4;
  b.examples[0].target[t] = Vocabulary::kClose;
  const Matrix changed = f.model.forward(b, LeakMode::kOff, ctx).logits.value();
  // Row k predicts target k from inputs <s> e_1 .. e_k, so rows 0..t see no change.
  CHECK(changed.topRows(t + 1) == base.topRows(t + 1));
  CHECK(changed.row(t + 1) != base.row(t + 1));
}

TEST_CASE("incremental decoding matches teacher forcing") {
  Fixture f;
  const auto b = f.batch(2, 1);
  RunContext ctx;
  nn::NoGradGuard guard;
  const Matrix lp = f.model.forward(b, LeakMode::kOff, ctx).log_probs().value();
  auto state = f.model.decoder().start(f.model.encode_source(b.examples[0], LeakMode::kOff));
  int prev = Vocabulary::kBos;
  for (std::size_t t = 0; t <= b.examples[0].target.size(); ++t) {
    const nn::RowVector step = f.model.decoder().step(state, prev);
    CHECK((step - lp.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() < 1e-10);
    if (t < b.examples[0].target.size()) prev = b.examples[0].target[t];
  }
}

TEST_CASE("beam search") {
  Fixture f;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto e = make_example(f.records[i], f.vocab, std::nullopt);
    DecodeOptions options;
    options.max_length = 30;
    const auto greedy = greedy_decode(f.model, e, options);
    const auto one = beam_decode(f.model, e, 1, options);
    CHECK(one.tokens == greedy.tokens);
    CHECK(one.score == greedy.score);
    const auto four = beam_decode(f.model, e, 4, options);
    CHECK(four.score >= greedy.score - 1e-12);
    if (four.finished) {
      CHECK(sequence_score(f.model, e, four.tokens) == doctest::Approx(four.score).epsilon(1e-9));
    }
  }
}

TEST_CASE("a single pair can be memorized") {
  Fixture f;
  Seq2SeqModel& model = f.model;
  const auto b = f.batch(5, 1, std::nullopt);
  nn::Adam adam(nn::AdamConfig{});
  nn::Rng rng(1);
  double loss = 0.0;
  for (int step = 0; step < 300; ++step) {
    RunContext ctx{true, &rng};
    const auto r = model.forward(b, LeakMode::kOff, ctx);
    const Var l = nll_loss(r.log_probs(), r);
    loss = l.scalar();
    model.params().zero_grad();
    nn::backward(l);
    adam.step(model.params(), 3e-3);
  }
  RunContext eval;
  nn::NoGradGuard guard;
  const auto r = model.forward(b, LeakMode::kOff, eval);
  CHECK(nll_loss(r.log_probs(), r).scalar() < 0.01);
  (void)loss;
  const auto greedy = greedy_decode(model, b.examples[0]);
  CHECK(greedy.tokens == b.examples[0].target);
  const auto parsed = parse_sentence(model, f.records[5].tokens);
  CHECK(isomorphic(parsed.graph, f.records[5].graph));
}

TEST_CASE("checkpoint round trip") {
  Fixture f;
  const auto dir = std::filesystem::temp_directory_path() / "wagparse_model_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  f.model.save(dir);
  const auto loaded = Seq2SeqModel::load(dir);
  CHECK(loaded->vocab() == f.vocab);
  for (const auto* p : f.model.params().all()) CHECK(loaded->params().get(p->name).value.matrix() == p->value.matrix());
  std::filesystem::remove_all(dir);
}

TEST_CASE("over-long input is an input error") {
  Fixture f;
  auto b = f.batch(0, 1);
  b.examples[0].target.assign(200, Vocabulary::kOpen);
  RunContext ctx;
  try {
    f.model.forward(b, LeakMode::kOff, ctx);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kInput);
  }
}
