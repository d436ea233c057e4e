#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace wagparse {

/// Joint symbol table over sentence words, concepts, relations and the
/// structural tokens of the linearization. Reserved ids never move.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kMask = 3;
  static constexpr int kUnk = 4;
  static constexpr int kOpen = 5;
  static constexpr int kClose = 6;
  static constexpr int kFirstVariable = 7;
  static constexpr int kMaxVariables = 64;  // <R0> .. <R63>
  static constexpr int kFirstFree = kFirstVariable + kMaxVariables;

  Vocabulary();

  /// Reserved symbols followed by relations (sorted) and every other symbol
  /// (sorted). Duplicates and reserved spellings in `symbols` are ignored.
  static Vocabulary build(const std::vector<std::string>& symbols);

  int id(std::string_view symbol) const;  // kUnk when absent
  std::optional<int> find(std::string_view symbol) const;
  const std::string& symbol(int id) const;
  std::size_t size() const { return symbols_.size(); }

  bool is_special(int id) const { return id >= 0 && id < kFirstVariable; }
  bool is_variable(int id) const { return id >= kFirstVariable && id < kFirstFree; }
  bool is_relation(int id) const;

  std::vector<int> encode(const std::vector<std::string>& symbols) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

  static std::string variable_token(int k);
  /// Index k for "<Rk>", nullopt for anything else.
  static std::optional<int> parse_variable(std::string_view token);

 private:
  void push(std::string symbol);

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace wagparse
