#include "wagparse/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "wagparse/errors.hpp"
#include "wagparse/linearize.hpp"

namespace wagparse {

using nn::AttentionMask;
using nn::AttentionSegment;
using nn::Matrix;
using nn::Parameter;
using nn::ParameterStore;
using nn::Tensor;
using nn::Var;

void ModelConfig::check() const {
  require(hidden > 0 && heads > 0 && hidden % heads == 0, ErrorCategory::kConfig, "hidden size must be divisible by heads");
  require(encoder_layers > 0 && decoder_layers > 0 && ffn > 0, ErrorCategory::kConfig, "layer counts must be positive");
  require(max_positions > 2, ErrorCategory::kConfig, "max_positions too small");
  require(adapter_layers >= -1 && adapter_layers <= encoder_layers, ErrorCategory::kConfig,
          "adapter_layers must lie in [-1, encoder_layers]");
  require(vocab_size > Vocabulary::kFirstFree - 1, ErrorCategory::kConfig, "vocabulary size not set");
  require(dropout >= 0 && dropout < 1 && adapter_dropout >= 0 && adapter_dropout < 1, ErrorCategory::kConfig,
          "dropout rates must lie in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"hidden", hidden},       {"heads", heads},           {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers}, {"ffn", ffn},     {"max_positions", max_positions}, {"adapter_layers", adapter_layers},
          {"vocab_size", vocab_size}, {"dropout", dropout},     {"adapter_dropout", adapter_dropout},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.ffn = j.value("ffn", c.ffn);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.adapter_layers = j.value("adapter_layers", c.adapter_layers);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.dropout = j.value("dropout", c.dropout);
  c.adapter_dropout = j.value("adapter_dropout", c.adapter_dropout);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

bool Batch::has_wags() const {
  for (const auto& e : examples) {
    if (!e.wag) return false;
  }
  return !examples.empty();
}

namespace {

std::vector<std::vector<int>> pad(const std::vector<std::vector<int>>& rows) {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  std::vector<std::vector<int>> out;
  for (const auto& r : rows) {
    auto padded = r;
    padded.resize(width, Vocabulary::kPad);
    out.push_back(std::move(padded));
  }
  return out;
}

std::vector<std::vector<bool>> mask_of(const std::vector<std::vector<int>>& rows) {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  std::vector<std::vector<bool>> out;
  for (const auto& r : rows) {
    std::vector<bool> m(width, false);
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(r.size()), true);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<std::vector<int>> decoder_inputs(const Batch& batch) {
  std::vector<std::vector<int>> out;
  for (const auto& e : batch.examples) {
    std::vector<int> in{Vocabulary::kBos};
    in.insert(in.end(), e.target.begin(), e.target.end());
    out.push_back(std::move(in));
  }
  return out;
}

std::vector<std::vector<int>> sources(const Batch& batch) {
  std::vector<std::vector<int>> out;
  for (const auto& e : batch.examples) out.push_back(e.source);
  return out;
}

}  // namespace

std::vector<std::vector<int>> Batch::padded_source() const { return pad(sources(*this)); }
std::vector<std::vector<int>> Batch::padded_target() const {
  std::vector<std::vector<int>> t;
  for (const auto& e : examples) t.push_back(e.target);
  return pad(t);
}
std::vector<std::vector<bool>> Batch::source_mask() const { return mask_of(sources(*this)); }
std::vector<std::vector<bool>> Batch::target_mask() const {
  std::vector<std::vector<int>> t;
  for (const auto& e : examples) t.push_back(e.target);
  return mask_of(t);
}

std::vector<int> label_token_ids(const std::string& label, const Vocabulary& vocab) {
  if (auto id = vocab.find(label)) return {*id};
  std::vector<int> out;
  for (const auto& word : split_words(label)) {
    if (auto id = vocab.find(word)) {
      out.push_back(*id);
      continue;
    }
    std::string piece;
    auto flush = [&] {
      if (!piece.empty()) out.push_back(vocab.id(piece));
      piece.clear();
    };
    for (char c : word) {
      if (c == '-' || c == '_') {
        flush();
      } else {
        piece += c;
      }
    }
    flush();
  }
  require(!out.empty(), ErrorCategory::kInput, "label '" + label + "' tokenizes to nothing");
  return out;
}

Example make_example(const CorpusRecord& record, const Vocabulary& vocab, std::optional<WagVariant> variant) {
  Example ex;
  ex.source.push_back(Vocabulary::kBos);
  for (const auto& w : record.tokens) ex.source.push_back(vocab.id(w));
  ex.source.push_back(Vocabulary::kEos);
  ex.target = vocab.encode(linearize(record.graph).tokens);
  ex.word_count = record.tokens.size();
  if (variant) {
    ex.wag = build_wag(record.graph, record.alignment, *variant);
    for (const auto& node : ex.wag->nodes) {
      if (!node.aligned()) ex.virtual_labels.push_back(label_token_ids(node.label, vocab));
    }
  }
  return ex;
}

PackedSequences pack(const std::vector<std::vector<int>>& sequences) {
  PackedSequences p;
  Eigen::Index offset = 0;
  for (const auto& seq : sequences) {
    const auto len = static_cast<Eigen::Index>(seq.size());
    p.offsets.push_back(offset);
    p.lengths.push_back(len);
    p.self_segments.push_back({offset, len, offset, len});
    for (std::size_t i = 0; i < seq.size(); ++i) {
      p.ids.push_back(seq[i]);
      p.positions.push_back(static_cast<int>(i));
    }
    offset += len;
  }
  return p;
}

nn::SparseMatrix normalized_adjacency(std::size_t node_count, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::set<int>> neighbours(node_count);
  for (const auto& [a, b] : edges) {
    require(a >= 0 && b >= 0 && static_cast<std::size_t>(a) < node_count && static_cast<std::size_t>(b) < node_count,
            ErrorCategory::kStructural, "graph edge references a node out of range");
    if (a == b) continue;
    neighbours[static_cast<std::size_t>(a)].insert(b);
    neighbours[static_cast<std::size_t>(b)].insert(a);
  }
  std::vector<double> degree(node_count);
  for (std::size_t v = 0; v < node_count; ++v) degree[v] = static_cast<double>(neighbours[v].size() + 1);
  std::vector<Eigen::Triplet<double>> entries;
  for (std::size_t v = 0; v < node_count; ++v) {
    const auto iv = static_cast<int>(v);
    entries.emplace_back(iv, iv, 1.0 / degree[v]);
    for (int u : neighbours[v]) {
      entries.emplace_back(iv, u, 1.0 / std::sqrt(degree[v] * degree[static_cast<std::size_t>(u)]));
    }
  }
  nn::SparseMatrix s(static_cast<Eigen::Index>(node_count), static_cast<Eigen::Index>(node_count));
  s.setFromTriplets(entries.begin(), entries.end());
  return s;
}

Var graph_conv(const Var& h, const nn::SparseMatrix& adjacency, const Var& w_g) {
  return nn::matmul(nn::sparse_matmul(adjacency, h), w_g);
}

namespace {

double xavier(std::size_t in, std::size_t out) { return std::sqrt(2.0 / static_cast<double>(in + out)); }

Parameter* weight(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, nn::Rng& rng,
                  double gain = 1.0) {
  return &store.add(name, nn::normal_init(in, out, gain * xavier(in, out), rng));
}

Parameter* zeros(ParameterStore& store, const std::string& name, std::size_t cols) {
  return &store.add(name, Tensor(1, cols));
}

Parameter* ones(ParameterStore& store, const std::string& name, std::size_t cols) {
  Tensor t(1, cols);
  t.matrix().setOnes();
  return &store.add(name, std::move(t));
}

constexpr double kEmbeddingStd = 0.1;

Var drop(const Var& x, double rate, RunContext& ctx) {
  if (!ctx.training || rate == 0.0) return x;
  require(ctx.rng != nullptr, ErrorCategory::kConfig, "training pass without an rng");
  return nn::dropout(x, rate, *ctx.rng);
}

}  // namespace

TransformerEncoder::TransformerEncoder(ParameterStore& store, const ModelConfig& config, nn::Rng& init)
    : config_(config) {
  const auto b = static_cast<std::size_t>(config.hidden);
  const auto f = static_cast<std::size_t>(config.ffn);
  embed_ = &store.add("enc.embed", nn::normal_init(static_cast<std::size_t>(config.vocab_size), b, kEmbeddingStd, init));
  pos_ = &store.add("enc.pos", nn::normal_init(static_cast<std::size_t>(config.max_positions), b, kEmbeddingStd, init));
  for (int l = 0; l < config.encoder_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l) + ".";
    Layer layer{};
    layer.ln1_g = ones(store, p + "ln1.g", b);
    layer.ln1_b = zeros(store, p + "ln1.b", b);
    layer.wq = weight(store, p + "attn.wq", b, b, init);
    layer.bq = zeros(store, p + "attn.bq", b);
    layer.wk = weight(store, p + "attn.wk", b, b, init);
    layer.bk = zeros(store, p + "attn.bk", b);
    layer.wv = weight(store, p + "attn.wv", b, b, init);
    layer.bv = zeros(store, p + "attn.bv", b);
    layer.wo = weight(store, p + "attn.wo", b, b, init);
    layer.bo = zeros(store, p + "attn.bo", b);
    layer.ln2_g = ones(store, p + "ln2.g", b);
    layer.ln2_b = zeros(store, p + "ln2.b", b);
    layer.w1 = weight(store, p + "ffn.w1", b, f, init);
    layer.b1 = zeros(store, p + "ffn.b1", f);
    layer.w2 = weight(store, p + "ffn.w2", f, b, init);
    layer.b2 = zeros(store, p + "ffn.b2", b);
    layers_.push_back(layer);
  }
  lnf_g_ = ones(store, "enc.lnf.g", b);
  lnf_b_ = zeros(store, "enc.lnf.b", b);
}

Var TransformerEncoder::embed(const PackedSequences& input) const {
  return nn::add(nn::embedding(input.ids, nn::param(*embed_)), nn::embedding(input.positions, nn::param(*pos_)));
}

Var TransformerEncoder::layer(int l, const Var& h, const std::vector<AttentionSegment>& segments, RunContext& ctx) const {
  const auto& L = layers_[static_cast<std::size_t>(l)];
  using nn::param;
  Var x = nn::layer_norm(h, param(*L.ln1_g), param(*L.ln1_b));
  Var q = nn::linear(x, param(*L.wq), param(*L.bq));
  Var k = nn::linear(x, param(*L.wk), param(*L.bk));
  Var v = nn::linear(x, param(*L.wv), param(*L.bv));
  Var a = nn::linear(nn::attention(q, k, v, segments, AttentionMask{}, config_.heads), param(*L.wo), param(*L.bo));
  Var out = nn::add(h, drop(a, config_.dropout, ctx));
  x = nn::layer_norm(out, param(*L.ln2_g), param(*L.ln2_b));
  Var f = nn::linear(nn::gelu(nn::linear(x, param(*L.w1), param(*L.b1))), param(*L.w2), param(*L.b2));
  return nn::add(out, drop(f, config_.dropout, ctx));
}

Var TransformerEncoder::final_norm(const Var& h) const {
  return nn::layer_norm(h, nn::param(*lnf_g_), nn::param(*lnf_b_));
}

Var TransformerEncoder::forward(const PackedSequences& input, RunContext& ctx) const {
  Var h = embed(input);
  for (int l = 0; l < layers(); ++l) h = layer(l, h, input.self_segments, ctx);
  return final_norm(h);
}

Var StructuralAdapter::forward(const Var& h, const nn::SparseMatrix& adjacency, RunContext& ctx) const {
  Var g = graph_conv(h, adjacency, nn::param(*w_g_));
  Var act = drop(nn::gelu(g), dropout_, ctx);
  return nn::add(h, nn::matmul(act, nn::param(*w_a_)));
}

NodeBinding bind_nodes(const Batch& batch, const PackedSequences& packed, std::size_t vocab_size) {
  NodeBinding binding;
  binding.token_rows = packed.ids.size();
  std::vector<std::pair<int, int>> edges;
  std::vector<Eigen::Triplet<double>> init_entries;
  int node_base = 0;
  int virtual_count = 0;
  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    const auto& ex = batch.examples[i];
    require(ex.wag.has_value(), ErrorCategory::kInput, "Leak mode requires a WAG for every example");
    const auto& wag = *ex.wag;
    const auto offset = packed.offsets[i];
    const auto length = packed.lengths[i];
    std::size_t next_virtual_label = 0;
    for (std::size_t v = 0; v < wag.nodes.size(); ++v) {
      const auto& node = wag.nodes[v];
      const int global = node_base + static_cast<int>(v);
      if (node.aligned()) {
        // Row 0 of every source is <s>, the last row </s>.
        require(node.token() >= 0 && node.token() + 2 < length, ErrorCategory::kStructural,
                "WAG token position outside its sentence");
        const int row = static_cast<int>(offset) + 1 + node.token();
        binding.node_rows.push_back(row);
        binding.aligned_nodes.push_back(global);
        binding.aligned_rows.push_back(row);
      } else {
        require(next_virtual_label < ex.virtual_labels.size(), ErrorCategory::kStructural,
                "missing label ids for a virtual node");
        const auto& label = ex.virtual_labels[next_virtual_label++];
        for (int id : label) {
          require(id >= 0 && static_cast<std::size_t>(id) < vocab_size, ErrorCategory::kStructural,
                  "virtual label id out of range");
          init_entries.emplace_back(virtual_count, id, 1.0 / static_cast<double>(label.size()));
        }
        binding.node_rows.push_back(static_cast<int>(binding.token_rows) + virtual_count);
        binding.virtual_nodes.push_back(global);
        ++virtual_count;
      }
    }
    for (const auto& [a, b] : wag.arcs) edges.emplace_back(node_base + a, node_base + b);
    node_base += static_cast<int>(wag.nodes.size());
  }
  binding.adjacency = normalized_adjacency(static_cast<std::size_t>(node_base), edges);
  binding.virtual_init = nn::SparseMatrix(virtual_count, static_cast<Eigen::Index>(vocab_size));
  binding.virtual_init.setFromTriplets(init_entries.begin(), init_entries.end());
  return binding;
}

AdapterEncoder::AdapterEncoder(ParameterStore& store, const ModelConfig& config, nn::Rng& init)
    : base_(store, config, init) {
  const auto b = static_cast<std::size_t>(config.hidden);
  for (int l = 0; l < config.adapted_layers(); ++l) {
    const std::string p = "adapter.l" + std::to_string(l) + ".";
    auto* wg = weight(store, p + "wg", b, b, init);
    auto* wa = weight(store, p + "wa", b, b, init, 0.1);
    adapters_.emplace_back(*wg, *wa, config.adapter_dropout);
  }
}

Var AdapterEncoder::init_virtual_states(const NodeBinding& binding) const {
  return nn::sparse_matmul(binding.virtual_init, nn::param(base_.embedding()));
}

EncoderOutput AdapterEncoder::encode(const PackedSequences& input, const NodeBinding* binding, RunContext& ctx) const {
  EncoderOutput out;
  Var h = base_.embed(input);
  const bool leak = binding != nullptr && !binding->node_rows.empty();
  const bool has_virtual = leak && !binding->virtual_nodes.empty();
  Var s;
  if (has_virtual) {
    s = init_virtual_states(*binding);
    out.virtual_states.push_back(s);
  }
  for (int l = 0; l < base_.layers(); ++l) {
    h = base_.layer(l, h, input.self_segments, ctx);
    if (leak && l < adapter_count()) {
      Var g = has_virtual ? nn::concat_rows({h, s}) : h;
      Var z = adapters_[static_cast<std::size_t>(l)].forward(nn::gather_rows(g, binding->node_rows), binding->adjacency, ctx);
      h = nn::overwrite_rows(h, binding->aligned_rows, nn::gather_rows(z, binding->aligned_nodes));
      if (has_virtual) {
        s = nn::gather_rows(z, binding->virtual_nodes);
        out.virtual_states.push_back(s);
      }
    }
    out.layer_states.push_back(h);
  }
  out.hidden = base_.final_norm(h);
  return out;
}

TransformerDecoder::TransformerDecoder(ParameterStore& store, const ModelConfig& config, nn::Rng& init)
    : config_(config) {
  const auto b = static_cast<std::size_t>(config.hidden);
  const auto f = static_cast<std::size_t>(config.ffn);
  embed_ = &store.add("dec.embed", nn::normal_init(static_cast<std::size_t>(config.vocab_size), b, kEmbeddingStd, init));
  pos_ = &store.add("dec.pos", nn::normal_init(static_cast<std::size_t>(config.max_positions), b, kEmbeddingStd, init));
  for (int l = 0; l < config.decoder_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    Layer layer{};
    layer.ln1_g = ones(store, p + "ln1.g", b);
    layer.ln1_b = zeros(store, p + "ln1.b", b);
    layer.sq = weight(store, p + "self.wq", b, b, init);
    layer.sbq = zeros(store, p + "self.bq", b);
    layer.sk = weight(store, p + "self.wk", b, b, init);
    layer.sbk = zeros(store, p + "self.bk", b);
    layer.sv = weight(store, p + "self.wv", b, b, init);
    layer.sbv = zeros(store, p + "self.bv", b);
    layer.so = weight(store, p + "self.wo", b, b, init);
    layer.sbo = zeros(store, p + "self.bo", b);
    layer.ln2_g = ones(store, p + "ln2.g", b);
    layer.ln2_b = zeros(store, p + "ln2.b", b);
    layer.cq = weight(store, p + "cross.wq", b, b, init);
    layer.cbq = zeros(store, p + "cross.bq", b);
    layer.ck = weight(store, p + "cross.wk", b, b, init);
    layer.cbk = zeros(store, p + "cross.bk", b);
    layer.cv = weight(store, p + "cross.wv", b, b, init);
    layer.cbv = zeros(store, p + "cross.bv", b);
    layer.co = weight(store, p + "cross.wo", b, b, init);
    layer.cbo = zeros(store, p + "cross.bo", b);
    layer.ln3_g = ones(store, p + "ln3.g", b);
    layer.ln3_b = zeros(store, p + "ln3.b", b);
    layer.w1 = weight(store, p + "ffn.w1", b, f, init);
    layer.b1 = zeros(store, p + "ffn.b1", f);
    layer.w2 = weight(store, p + "ffn.w2", f, b, init);
    layer.b2 = zeros(store, p + "ffn.b2", b);
    layers_.push_back(layer);
  }
  lnf_g_ = ones(store, "dec.lnf.g", b);
  lnf_b_ = zeros(store, "dec.lnf.b", b);
  out_bias_ = zeros(store, "dec.out_bias", static_cast<std::size_t>(config.vocab_size));
}

Var TransformerDecoder::logits(const Var& h) const {
  Var x = nn::layer_norm(h, nn::param(*lnf_g_), nn::param(*lnf_b_));
  return nn::add_row(nn::matmul_nt(x, nn::param(*embed_)), nn::param(*out_bias_));
}

Var TransformerDecoder::forward(const PackedSequences& input, const Var& memory, const PackedSequences& source,
                                RunContext& ctx) const {
  using nn::param;
  std::vector<AttentionSegment> cross;
  for (std::size_t i = 0; i < input.offsets.size(); ++i) {
    cross.push_back({input.offsets[i], input.lengths[i], source.offsets[i], source.lengths[i]});
  }
  AttentionMask causal;
  causal.causal = true;

  Var h = nn::add(nn::embedding(input.ids, param(*embed_)), nn::embedding(input.positions, param(*pos_)));
  for (const auto& L : layers_) {
    Var x = nn::layer_norm(h, param(*L.ln1_g), param(*L.ln1_b));
    Var a = nn::attention(nn::linear(x, param(*L.sq), param(*L.sbq)), nn::linear(x, param(*L.sk), param(*L.sbk)),
                          nn::linear(x, param(*L.sv), param(*L.sbv)), input.self_segments, causal, config_.heads);
    h = nn::add(h, drop(nn::linear(a, param(*L.so), param(*L.sbo)), config_.dropout, ctx));

    x = nn::layer_norm(h, param(*L.ln2_g), param(*L.ln2_b));
    Var c = nn::attention(nn::linear(x, param(*L.cq), param(*L.cbq)), nn::linear(memory, param(*L.ck), param(*L.cbk)),
                          nn::linear(memory, param(*L.cv), param(*L.cbv)), cross, AttentionMask{}, config_.heads);
    h = nn::add(h, drop(nn::linear(c, param(*L.co), param(*L.cbo)), config_.dropout, ctx));

    x = nn::layer_norm(h, param(*L.ln3_g), param(*L.ln3_b));
    Var f = nn::linear(nn::gelu(nn::linear(x, param(*L.w1), param(*L.b1))), param(*L.w2), param(*L.b2));
    h = nn::add(h, drop(f, config_.dropout, ctx));
  }
  return logits(h);
}

DecoderState TransformerDecoder::start(const Matrix& memory) const {
  nn::NoGradGuard guard;
  DecoderState state;
  const Var mem = nn::constant(memory);
  for (const auto& L : layers_) {
    state.cross_k.push_back(nn::linear(mem, nn::param(*L.ck), nn::param(*L.cbk)).value());
    state.cross_v.push_back(nn::linear(mem, nn::param(*L.cv), nn::param(*L.cbv)).value());
    state.self_k.emplace_back(0, config_.hidden);
    state.self_v.emplace_back(0, config_.hidden);
  }
  return state;
}

nn::RowVector TransformerDecoder::step(DecoderState& state, int token) const {
  using nn::param;
  nn::NoGradGuard guard;
  require(state.position < config_.max_positions, ErrorCategory::kInput, "decoder ran past max positions");
  RunContext eval;
  Var h = nn::add(nn::embedding({token}, param(*embed_)), nn::embedding({state.position}, param(*pos_)));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    Var x = nn::layer_norm(h, param(*L.ln1_g), param(*L.ln1_b));
    Var q = nn::linear(x, param(*L.sq), param(*L.sbq));
    auto& K = state.self_k[l];
    auto& V = state.self_v[l];
    K.conservativeResize(K.rows() + 1, Eigen::NoChange);
    V.conservativeResize(V.rows() + 1, Eigen::NoChange);
    K.row(K.rows() - 1) = nn::linear(x, param(*L.sk), param(*L.sbk)).value().row(0);
    V.row(V.rows() - 1) = nn::linear(x, param(*L.sv), param(*L.sbv)).value().row(0);
    Var a = nn::attention(q, nn::constant(K), nn::constant(V), {{0, 1, 0, K.rows()}}, AttentionMask{}, config_.heads);
    h = nn::add(h, nn::linear(a, param(*L.so), param(*L.sbo)));

    x = nn::layer_norm(h, param(*L.ln2_g), param(*L.ln2_b));
    const auto& CK = state.cross_k[l];
    Var c = nn::attention(nn::linear(x, param(*L.cq), param(*L.cbq)), nn::constant(CK), nn::constant(state.cross_v[l]),
                          {{0, 1, 0, CK.rows()}}, AttentionMask{}, config_.heads);
    h = nn::add(h, nn::linear(c, param(*L.co), param(*L.cbo)));

    x = nn::layer_norm(h, param(*L.ln3_g), param(*L.ln3_b));
    Var f = nn::linear(nn::gelu(nn::linear(x, param(*L.w1), param(*L.b1))), param(*L.w2), param(*L.b2));
    h = nn::add(h, f);
  }
  ++state.position;
  return nn::log_softmax(logits(h)).value().row(0);
}

Var ForwardResult::log_probs(double temperature) const {
  require(temperature > 0.0, ErrorCategory::kConfig, "temperature must be positive");
  return nn::log_softmax(temperature == 1.0 ? logits : nn::scale(logits, 1.0 / temperature));
}

Var nll_loss(const Var& logp, const ForwardResult& result) {
  return nn::scale(nn::nll_pick(logp, result.targets, result.weights), 1.0 / static_cast<double>(result.batch_size));
}

Seq2SeqModel::Seq2SeqModel(ModelConfig config, Vocabulary vocab)
    : config_((config.vocab_size = static_cast<int>(vocab.size()), config)),
      vocab_(std::move(vocab)),
      init_rng_(config_.init_seed),
      encoder_((config_.check(), store_), config_, init_rng_),
      decoder_(store_, config_, init_rng_) {}

ForwardResult Seq2SeqModel::forward(const Batch& batch, LeakMode mode, RunContext& ctx) const {
  require(batch.size() > 0, ErrorCategory::kInput, "empty batch");
  for (const auto& ex : batch.examples) {
    require(ex.source.size() <= static_cast<std::size_t>(config_.max_positions) &&
                ex.target.size() + 1 <= static_cast<std::size_t>(config_.max_positions),
            ErrorCategory::kInput, "sequence exceeds max positions");
  }
  const auto src = pack(sources(batch));
  std::optional<NodeBinding> binding;
  if (mode == LeakMode::kLeak) {
    require(batch.has_wags(), ErrorCategory::kInput, "Leak mode requires WAGs");
    binding = bind_nodes(batch, src, vocab_.size());
  }
  const auto enc = encoder_.encode(src, binding ? &*binding : nullptr, ctx);
  const auto dst = pack(decoder_inputs(batch));

  ForwardResult result;
  result.batch_size = batch.size();
  result.logits = decoder_.forward(dst, enc.hidden, src, ctx);
  for (const auto& ex : batch.examples) {
    result.targets.insert(result.targets.end(), ex.target.begin(), ex.target.end());
    result.targets.push_back(Vocabulary::kEos);
  }
  result.weights.assign(result.targets.size(), 1.0);
  return result;
}

Matrix Seq2SeqModel::encode_source(const Example& example, LeakMode mode) const {
  nn::NoGradGuard guard;
  require(example.source.size() <= static_cast<std::size_t>(config_.max_positions), ErrorCategory::kInput,
          "sequence exceeds max positions");
  Batch single;
  single.examples.push_back(example);
  const auto src = pack({example.source});
  std::optional<NodeBinding> binding;
  if (mode == LeakMode::kLeak) {
    require(example.wag.has_value(), ErrorCategory::kInput, "Leak mode requires a WAG");
    binding = bind_nodes(single, src, vocab_.size());
  }
  RunContext eval;
  return encoder_.encode(src, binding ? &*binding : nullptr, eval).hidden.value();
}

std::vector<Parameter*> Seq2SeqModel::decoder_parameters() { return store_.with_prefix("dec."); }
std::vector<Parameter*> Seq2SeqModel::adapter_parameters() { return store_.with_prefix("adapter."); }

void Seq2SeqModel::set_decoder_trainable(bool trainable) {
  for (auto* p : decoder_parameters()) p->trainable = trainable;
}

void Seq2SeqModel::set_adapters_trainable(bool trainable) {
  for (auto* p : adapter_parameters()) p->trainable = trainable;
}

void Seq2SeqModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nn::save_parameters(dir / "model.bin", store_);
  std::ofstream(dir / "vocab.json") << vocab_.to_json().dump() << '\n';
  nlohmann::json config;
  if (std::ifstream existing(dir / "config.json"); existing.good()) {
    try {
      config = nlohmann::json::parse(existing);
    } catch (const nlohmann::json::exception&) {
      config = nlohmann::json::object();
    }
  }
  config["model"] = config_.to_json();
  std::ofstream(dir / "config.json") << config.dump(2) << '\n';
}

std::unique_ptr<Seq2SeqModel> Seq2SeqModel::load(const std::filesystem::path& dir) {
  auto read_json = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    require(in.good(), ErrorCategory::kIo, "cannot open " + p.string());
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::kInput, p.string() + ": " + e.what());
    }
  };
  auto vocab = Vocabulary::from_json(read_json(dir / "vocab.json"));
  const auto config_json = read_json(dir / "config.json");
  require(config_json.contains("model"), ErrorCategory::kInput, "config.json has no model section");
  auto model = std::make_unique<Seq2SeqModel>(ModelConfig::from_json(config_json.at("model")), std::move(vocab));
  nn::load_parameters(dir / "model.bin", model->params());
  return model;
}

}  // namespace wagparse
