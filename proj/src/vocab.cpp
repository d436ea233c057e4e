#include "wagparse/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "wagparse/errors.hpp"

namespace wagparse {

namespace {
constexpr const char* kReserved[] = {"<pad>", "<s>", "</s>", "<mask>", "<unk>", "(", ")"};
}

Vocabulary::Vocabulary() {
  for (const char* s : kReserved) push(s);
  for (int k = 0; k < kMaxVariables; ++k) push(variable_token(k));
}

void Vocabulary::push(std::string symbol) {
  index_.emplace(symbol, static_cast<int>(symbols_.size()));
  symbols_.push_back(std::move(symbol));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& symbols) {
  Vocabulary vocab;
  std::set<std::string> relations, others;
  for (const auto& s : symbols) {
    if (s.empty() || vocab.index_.count(s)) continue;
    if (s.front() == ':' && s.size() > 1) {
      relations.insert(s);
    } else {
      others.insert(s);
    }
  }
  for (const auto& s : relations) vocab.push(s);
  for (const auto& s : others) vocab.push(s);
  return vocab;
}

int Vocabulary::id(std::string_view symbol) const { return find(symbol).value_or(kUnk); }

std::optional<int> Vocabulary::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::symbol(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < symbols_.size(), ErrorCategory::kStructural,
          "vocabulary id out of range: " + std::to_string(id));
  return symbols_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_relation(int id) const {
  if (id < kFirstFree || static_cast<std::size_t>(id) >= symbols_.size()) return false;
  const auto& s = symbols_[static_cast<std::size_t>(id)];
  return s.size() > 1 && s.front() == ':';
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& symbols) const {
  std::vector<int> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(id(s));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(symbol(i));
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return nlohmann::json{{"version", 1}, {"symbols", symbols_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  require(j.value("version", 0) == 1, ErrorCategory::kInput, "unsupported vocabulary version");
  const auto symbols = j.at("symbols").get<std::vector<std::string>>();
  Vocabulary vocab;
  require(symbols.size() >= vocab.symbols_.size(), ErrorCategory::kInput, "vocabulary too short");
  for (std::size_t i = 0; i < vocab.symbols_.size(); ++i) {
    require(symbols[i] == vocab.symbols_[i], ErrorCategory::kInput,
            "reserved vocabulary symbol mismatch at id " + std::to_string(i));
  }
  for (std::size_t i = vocab.symbols_.size(); i < symbols.size(); ++i) {
    require(!vocab.index_.count(symbols[i]), ErrorCategory::kInput,
            "duplicate vocabulary symbol " + symbols[i]);
    vocab.push(symbols[i]);
  }
  return vocab;
}

std::string Vocabulary::variable_token(int k) { return "<R" + std::to_string(k) + ">"; }

std::optional<int> Vocabulary::parse_variable(std::string_view token) {
  if (token.size() < 4 || token.substr(0, 2) != "<R" || token.back() != '>') return std::nullopt;
  int k = 0;
  auto digits = token.substr(2, token.size() - 3);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || k < 0 || k >= kMaxVariables) {
    return std::nullopt;
  }
  return k;
}

}  // namespace wagparse
