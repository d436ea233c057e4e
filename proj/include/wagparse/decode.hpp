#pragma once

#include <string>
#include <vector>

#include "wagparse/linearize.hpp"
#include "wagparse/model.hpp"

namespace wagparse {

struct DecodeOptions {
  int beam = 4;
  /// Upper bound on generated tokens before </s>; 0 means max_positions - 1.
  int max_length = 0;
  /// Off for real inference. Leak is only for scoring a GLM with gold WAGs.
  LeakMode mode = LeakMode::kOff;
  /// Rank finished beam hypotheses by mean per-token log-prob instead of the sum.
  bool length_normalize = false;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated ids, without </s>
  double score = 0.0;       // summed log-prob, </s> included when finished
  bool finished = false;
};

Hypothesis greedy_decode(const Seq2SeqModel& model, const Example& example, const DecodeOptions& options = {});

/// Standard beam search; beam 1 reproduces greedy decoding token for token.
/// The greedy hypothesis always competes, so the result never scores below it.
Hypothesis beam_decode(const Seq2SeqModel& model, const Example& example, int beam, const DecodeOptions& options = {});

/// Teacher-forced summed log-prob of `tokens` followed by </s>.
double sequence_score(const Seq2SeqModel& model, const Example& example, const std::vector<int>& tokens,
                      LeakMode mode = LeakMode::kOff);

LinearizedGraph to_linearized(const Vocabulary& vocab, const std::vector<int>& tokens);

/// Sentence in, repaired graph out. Uses beam search when options.beam > 1.
DelinearizeResult parse_sentence(const Seq2SeqModel& model, const std::vector<std::string>& words,
                                 const DecodeOptions& options = {});

}  // namespace wagparse
