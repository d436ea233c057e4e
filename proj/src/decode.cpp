#include "wagparse/decode.hpp"

#include <algorithm>

#include "wagparse/errors.hpp"

namespace wagparse {

namespace {

int resolve_max_length(const Seq2SeqModel& model, const DecodeOptions& options) {
  const int cap = model.config().max_positions - 1;
  return options.max_length > 0 ? std::min(options.max_length, cap) : cap;
}

// Lowest id wins ties, matching Eigen's maxCoeff.
int argmax(const nn::RowVector& logp) {
  Eigen::Index best = 0;
  logp.maxCoeff(&best);
  return static_cast<int>(best);
}

double rank_score(const Hypothesis& h, bool normalize) {
  if (!normalize) return h.score;
  return h.score / static_cast<double>(h.tokens.size() + (h.finished ? 1 : 0));
}

struct Live {
  Hypothesis hyp;
  DecoderState state;
  nn::RowVector next;  // log-probs for the following token
};

}  // namespace

Hypothesis greedy_decode(const Seq2SeqModel& model, const Example& example, const DecodeOptions& options) {
  const auto memory = model.encode_source(example, options.mode);
  const auto& decoder = model.decoder();
  auto state = decoder.start(memory);
  const int max_length = resolve_max_length(model, options);
  Hypothesis out;
  nn::RowVector logp = decoder.step(state, Vocabulary::kBos);
  while (true) {
    const int token = argmax(logp);
    out.score += logp(token);
    if (token == Vocabulary::kEos) {
      out.finished = true;
      break;
    }
    out.tokens.push_back(token);
    if (static_cast<int>(out.tokens.size()) >= max_length) break;
    logp = decoder.step(state, token);
  }
  return out;
}

Hypothesis beam_decode(const Seq2SeqModel& model, const Example& example, int beam, const DecodeOptions& options) {
  require(beam >= 1, ErrorCategory::kConfig, "beam size must be at least 1");
  const auto memory = model.encode_source(example, options.mode);
  const auto& decoder = model.decoder();
  const int max_length = resolve_max_length(model, options);

  std::vector<Live> alive(1);
  alive[0].state = decoder.start(memory);
  alive[0].next = decoder.step(alive[0].state, Vocabulary::kBos);
  std::vector<Hypothesis> finished;

  struct Candidate {
    std::size_t parent;
    int token;
    double score;
  };
  while (!alive.empty()) {
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      const auto& next = alive[i].next;
      // Only the top `beam` tokens of each parent can survive the cut.
      std::vector<int> order(static_cast<std::size_t>(next.size()));
      for (std::size_t t = 0; t < order.size(); ++t) order[t] = static_cast<int>(t);
      const auto keep = std::min<std::size_t>(static_cast<std::size_t>(beam), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](int a, int b) { return next(a) > next(b) || (next(a) == next(b) && a < b); });
      for (std::size_t t = 0; t < keep; ++t) {
        candidates.push_back({i, order[t], alive[i].hyp.score + next(order[t])});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      return a.score > b.score || (a.score == b.score && (a.parent < b.parent || (a.parent == b.parent && a.token < b.token)));
    });

    std::vector<Live> next_alive;
    for (const auto& c : candidates) {
      if (static_cast<int>(next_alive.size()) >= beam) break;
      const auto& parent = alive[c.parent];
      Hypothesis h = parent.hyp;
      h.score = c.score;
      if (c.token == Vocabulary::kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(c.token);
      if (static_cast<int>(h.tokens.size()) >= max_length) {
        finished.push_back(std::move(h));  // truncated, left unfinished
        continue;
      }
      Live live{std::move(h), parent.state, {}};
      live.next = decoder.step(live.state, c.token);
      next_alive.push_back(std::move(live));
    }
    alive = std::move(next_alive);

    // Summed log-probs only decrease, so a finished hypothesis that beats every
    // live one cannot be overtaken.
    if (!options.length_normalize && !finished.empty() && !alive.empty()) {
      double best_finished = finished.front().score;
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      double best_alive = alive.front().hyp.score;
      for (const auto& a : alive) best_alive = std::max(best_alive, a.hyp.score);
      if (best_finished >= best_alive && static_cast<int>(finished.size()) >= beam) break;
    }
    if (static_cast<int>(finished.size()) >= beam && options.length_normalize) break;
  }

  Hypothesis greedy = greedy_decode(model, example, options);
  const Hypothesis* best = &greedy;
  for (const auto& f : finished) {
    const bool better_status = f.finished && !best->finished;
    const bool same_status = f.finished == best->finished;
    if (better_status || (same_status && rank_score(f, options.length_normalize) > rank_score(*best, options.length_normalize))) {
      best = &f;
    }
  }
  return *best;
}

double sequence_score(const Seq2SeqModel& model, const Example& example, const std::vector<int>& tokens, LeakMode mode) {
  const auto memory = model.encode_source(example, mode);
  const auto& decoder = model.decoder();
  auto state = decoder.start(memory);
  double score = 0.0;
  int previous = Vocabulary::kBos;
  for (int t : tokens) {
    score += decoder.step(state, previous)(t);
    previous = t;
  }
  return score + decoder.step(state, previous)(Vocabulary::kEos);
}

LinearizedGraph to_linearized(const Vocabulary& vocab, const std::vector<int>& tokens) {
  return LinearizedGraph{vocab.decode(tokens)};
}

DelinearizeResult parse_sentence(const Seq2SeqModel& model, const std::vector<std::string>& words,
                                 const DecodeOptions& options) {
  require(options.mode == LeakMode::kOff, ErrorCategory::kConfig, "sentence parsing never uses a WAG");
  Example ex;
  ex.source.push_back(Vocabulary::kBos);
  for (const auto& w : words) ex.source.push_back(model.vocab().id(w));
  ex.source.push_back(Vocabulary::kEos);
  ex.word_count = words.size();
  const auto hyp = options.beam > 1 ? beam_decode(model, ex, options.beam, options) : greedy_decode(model, ex, options);
  return delinearize(to_linearized(model.vocab(), hyp.tokens));
}

}  // namespace wagparse
