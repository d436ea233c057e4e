#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wagparse/corpus.hpp"
#include "wagparse/nn/ops.hpp"
#include "wagparse/nn/params.hpp"
#include "wagparse/vocab.hpp"
#include "wagparse/wag.hpp"

namespace wagparse {

struct ModelConfig {
  int hidden = 64;
  int heads = 4;
  int encoder_layers = 3;
  int decoder_layers = 3;
  int ffn = 128;
  int max_positions = 128;
  /// Encoder layers (counted from the bottom) that carry an adapter; -1 = all.
  int adapter_layers = -1;
  int vocab_size = 0;
  double dropout = 0.1;
  double adapter_dropout = 0.01;
  std::uint64_t init_seed = 7;

  void check() const;
  int adapted_layers() const { return adapter_layers < 0 ? encoder_layers : adapter_layers; }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class LeakMode { kOff, kLeak };

/// One training pair in id space. `wag` is required for Leak-mode passes.
struct Example {
  std::vector<int> source;  // <s> words </s>
  std::vector<int> target;  // linearized graph, without <s> / </s>
  std::optional<Wag> wag;
  /// Token ids of each Virtual node's label, in node order.
  std::vector<std::vector<int>> virtual_labels;
  std::size_t word_count = 0;
};

struct Batch {
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool has_wags() const;
  /// Right-padded id matrices and their validity masks (true = real token).
  std::vector<std::vector<int>> padded_source() const;
  std::vector<std::vector<int>> padded_target() const;
  std::vector<std::vector<bool>> source_mask() const;
  std::vector<std::vector<bool>> target_mask() const;
};

/// Splits a Virtual node label into vocabulary ids: a known symbol maps to
/// itself (relations like ":location" use their own embedding), otherwise
/// whitespace pieces, then '-' / '_' pieces, unknown pieces to <unk>.
std::vector<int> label_token_ids(const std::string& label, const Vocabulary& vocab);

Example make_example(const CorpusRecord& record, const Vocabulary& vocab, std::optional<WagVariant> variant);

/// Training-time switches for one forward pass.
struct RunContext {
  bool training = false;
  nn::Rng* rng = nullptr;
};

/// Row-packed view of a batch: every example occupies a contiguous block of
/// rows, so linear layers run once over the whole batch and attention runs
/// per block.
struct PackedSequences {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<nn::AttentionSegment> self_segments;
  std::vector<Eigen::Index> offsets;
  std::vector<Eigen::Index> lengths;
};

PackedSequences pack(const std::vector<std::vector<int>>& sequences);

/// Symmetric normalization D^-1/2 (A + I) D^-1/2 over `node_count` nodes.
/// Throws Error(kStructural) on an out-of-range endpoint.
nn::SparseMatrix normalized_adjacency(std::size_t node_count, const std::vector<std::pair<int, int>>& edges);

/// GraphConv: row v of the result is sum_{u in N(v) + v} h_u W_g / sqrt(d_u d_v).
/// Row-vector convention, so W_g multiplies from the right.
nn::Var graph_conv(const nn::Var& h, const nn::SparseMatrix& adjacency, const nn::Var& w_g);

/// Pre-layer-norm transformer encoder without any graph machinery.
class TransformerEncoder {
 public:
  TransformerEncoder(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& init);

  nn::Var embed(const PackedSequences& input) const;
  nn::Var layer(int l, const nn::Var& h, const std::vector<nn::AttentionSegment>& segments, RunContext& ctx) const;
  nn::Var final_norm(const nn::Var& h) const;
  nn::Var forward(const PackedSequences& input, RunContext& ctx) const;

  nn::Parameter& embedding() const { return *embed_; }
  int layers() const { return static_cast<int>(layers_.size()); }

 private:
  struct Layer {
    nn::Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    nn::Parameter *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };
  const ModelConfig& config_;
  nn::Parameter* embed_;
  nn::Parameter* pos_;
  std::vector<Layer> layers_;
  nn::Parameter *lnf_g_, *lnf_b_;
};

/// Graph-conv + feed-forward block with a residual path and no layer norm:
/// z = h + GELU(GraphConv(h)) W_a (dropout on the GELU output).
class StructuralAdapter {
 public:
  StructuralAdapter(nn::Parameter& w_g, nn::Parameter& w_a, double dropout) : w_g_(&w_g), w_a_(&w_a), dropout_(dropout) {}

  nn::Var forward(const nn::Var& h, const nn::SparseMatrix& adjacency, RunContext& ctx) const;

  nn::Parameter& w_g() const { return *w_g_; }
  nn::Parameter& w_a() const { return *w_a_; }

 private:
  nn::Parameter* w_g_;
  nn::Parameter* w_a_;
  double dropout_;
};

/// WAG nodes of a whole batch mapped onto rows of concat(H, S).
struct NodeBinding {
  std::vector<int> node_rows;          // per WAG node: row in concat(H, S)
  std::vector<int> aligned_nodes;      // WAG node indices that sit on tokens
  std::vector<int> aligned_rows;       // their rows in H
  std::vector<int> virtual_nodes;      // WAG node indices in S order
  nn::SparseMatrix adjacency;          // normalized, block diagonal over examples
  nn::SparseMatrix virtual_init;       // averaging matrix: S^0 = virtual_init * E
  std::size_t token_rows = 0;
};

/// Builds the binding for a packed batch; throws Error(kStructural) when a
/// WAG token falls outside its sentence.
NodeBinding bind_nodes(const Batch& batch, const PackedSequences& packed, std::size_t vocab_size);

struct EncoderOutput {
  nn::Var hidden;                      // H^L after the final norm
  std::vector<nn::Var> layer_states;   // H^l per layer (after the adapter, if any)
  std::vector<nn::Var> virtual_states; // S^0 .. S^L (empty when Off or contracted)
};

class AdapterEncoder {
 public:
  AdapterEncoder(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& init);

  /// Modified encoder loop: transformer layer, then (Leak only) the adapter
  /// over the WAG nodes, splitting results back into token and virtual rows.
  EncoderOutput encode(const PackedSequences& input, const NodeBinding* binding, RunContext& ctx) const;

  const TransformerEncoder& base() const { return base_; }
  const StructuralAdapter& adapter(int l) const { return adapters_[static_cast<std::size_t>(l)]; }
  int adapter_count() const { return static_cast<int>(adapters_.size()); }
  /// S^0 from the label embeddings of the Virtual nodes.
  nn::Var init_virtual_states(const NodeBinding& binding) const;

 private:
  TransformerEncoder base_;
  std::vector<StructuralAdapter> adapters_;
};

/// Key/value caches of one hypothesis during incremental decoding.
struct DecoderState {
  std::vector<nn::Matrix> self_k, self_v;
  std::vector<nn::Matrix> cross_k, cross_v;
  int position = 0;
};

class TransformerDecoder {
 public:
  TransformerDecoder(nn::ParameterStore& store, const ModelConfig& config, nn::Rng& init);

  /// Teacher-forced logits for packed decoder inputs.
  nn::Var forward(const PackedSequences& input, const nn::Var& memory, const PackedSequences& source,
                  RunContext& ctx) const;

  DecoderState start(const nn::Matrix& memory) const;
  /// Log-probabilities (1 x C) of the next token after feeding `token`.
  nn::RowVector step(DecoderState& state, int token) const;

 private:
  struct Layer {
    nn::Parameter *ln1_g, *ln1_b, *sq, *sbq, *sk, *sbk, *sv, *sbv, *so, *sbo;
    nn::Parameter *ln2_g, *ln2_b, *cq, *cbq, *ck, *cbk, *cv, *cbv, *co, *cbo;
    nn::Parameter *ln3_g, *ln3_b, *w1, *b1, *w2, *b2;
  };
  nn::Var logits(const nn::Var& h) const;

  const ModelConfig& config_;
  nn::Parameter* embed_;
  nn::Parameter* pos_;
  std::vector<Layer> layers_;
  nn::Parameter *lnf_g_, *lnf_b_, *out_bias_;
};

struct ForwardResult {
  nn::Var logits;                 // (sum of target lengths + 1 per example) x C
  std::vector<int> targets;       // gold next token per row
  std::vector<double> weights;    // 1 for real steps, 0 for padding
  std::size_t batch_size = 0;

  /// Row-wise log-softmax of logits / temperature.
  nn::Var log_probs(double temperature = 1.0) const;
};

/// Encoder-decoder parser over a joint vocabulary. The decoder embedding is
/// tied to the output projection; encoder and decoder embeddings are separate
/// so the decoder can be frozen on its own.
class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig config, Vocabulary vocab);
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  const AdapterEncoder& encoder() const { return encoder_; }
  const TransformerDecoder& decoder() const { return decoder_; }

  /// Throws Error(kInput) when a sequence exceeds max positions or Leak is
  /// requested without WAGs.
  ForwardResult forward(const Batch& batch, LeakMode mode, RunContext& ctx) const;

  /// Encodes one source without recording; returns H^L as a plain matrix.
  nn::Matrix encode_source(const Example& example, LeakMode mode) const;

  std::vector<nn::Parameter*> decoder_parameters();
  std::vector<nn::Parameter*> adapter_parameters();
  void set_decoder_trainable(bool trainable);
  void set_adapters_trainable(bool trainable);

  void save(const std::filesystem::path& dir) const;
  static std::unique_ptr<Seq2SeqModel> load(const std::filesystem::path& dir);

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  nn::ParameterStore store_;
  nn::Rng init_rng_;
  AdapterEncoder encoder_;
  TransformerDecoder decoder_;
};

/// Mean over the batch of the summed token NLL.
nn::Var nll_loss(const nn::Var& logp, const ForwardResult& result);

}  // namespace wagparse
