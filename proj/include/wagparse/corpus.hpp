#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wagparse/graph.hpp"
#include "wagparse/wag.hpp"

namespace wagparse {

/// One sentence/graph pair with its gold alignment.
struct CorpusRecord {
  std::string id;
  std::vector<std::string> tokens;
  AmrGraph graph;
  Alignment alignment;

  std::string sentence() const;

  bool operator==(const CorpusRecord&) const = default;
};

nlohmann::json graph_to_json(const AmrGraph& graph);
AmrGraph graph_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const CorpusRecord& record);
/// Parses and checks a record (graph invariants and alignment bounds).
CorpusRecord record_from_json(const nlohmann::json& j);

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records);

std::vector<std::string> split_words(const std::string& text);

}  // namespace wagparse
