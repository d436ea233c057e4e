#include "wagparse/corpus.hpp"

#include <fstream>
#include <sstream>

#include "wagparse/errors.hpp"

namespace wagparse {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string CorpusRecord::sentence() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

nlohmann::json graph_to_json(const AmrGraph& graph) {
  auto nodes = nlohmann::json::array();
  for (const auto& n : graph.nodes) nodes.push_back({{"id", n.id}, {"concept", n.concept_name}});
  auto edges = nlohmann::json::array();
  for (const auto& e : graph.edges) {
    edges.push_back({{"source", e.source}, {"relation", e.relation}, {"target", e.target}});
  }
  return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}, {"root", graph.root}};
}

AmrGraph graph_from_json(const nlohmann::json& j) {
  AmrGraph g;
  for (const auto& n : j.at("nodes")) {
    g.nodes.push_back({n.at("id").get<std::string>(), n.at("concept").get<std::string>()});
  }
  for (const auto& e : j.at("edges")) {
    g.edges.push_back({e.at("source").get<std::string>(), e.at("relation").get<std::string>(),
                       e.at("target").get<std::string>()});
  }
  g.root = j.at("root").get<std::string>();
  return g;
}

nlohmann::json record_to_json(const CorpusRecord& record) {
  return {{"id", record.id},
          {"sentence", record.sentence()},
          {"graph", graph_to_json(record.graph)},
          {"alignment", alignment_to_json(record.alignment)}};
}

CorpusRecord record_from_json(const nlohmann::json& j) {
  CorpusRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.tokens = split_words(j.at("sentence").get<std::string>());
    r.graph = graph_from_json(j.at("graph"));
    r.alignment = j.contains("alignment") ? alignment_from_json(j.at("alignment")) : Alignment{};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kInput, std::string("record schema violation: ") + e.what());
  }
  const auto violations = validate(r.graph);
  require(violations.empty(), ErrorCategory::kInput,
          "record " + r.id + " has an invalid graph: " + (violations.empty() ? "" : violations.front().detail));
  check_alignment(r.graph, r.alignment, r.tokens.size());
  return r;
}

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCategory::kIo, "cannot open corpus " + path.string());
  std::vector<CorpusRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::kInput, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(record_from_json(j));
  }
  return records;
}

void write_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records) {
  std::ofstream out(path);
  require(out.good(), ErrorCategory::kIo, "cannot write corpus " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

}  // namespace wagparse
