// JSON Lines n-best corpus: one object per utterance with fields
//   id, candidates (score-descending strings), scores, transcript, reference,
//   units (optional array of integers).
#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcst/core.hpp"

namespace mcst {

struct Corpus {
  std::vector<CandidateSet> utterances;
  std::vector<std::string> warnings;
};

inline nlohmann::ordered_json to_json(const CandidateSet& c) {
  nlohmann::ordered_json j;
  j["id"] = c.utterance_id;
  auto& cands = j["candidates"] = nlohmann::ordered_json::array();
  for (const auto& s : c.candidates) cands.push_back(join_words(s));
  j["scores"] = c.scores;
  j["transcript"] = join_words(c.transcript);
  j["reference"] = join_words(c.reference);
  if (c.units) j["units"] = c.units->ids;
  return j;
}

inline void write_corpus(std::ostream& out, const std::vector<CandidateSet>& corpus) {
  for (const auto& c : corpus) out << to_json(c).dump() << '\n';
}

inline void write_corpus_file(const std::string& path, const std::vector<CandidateSet>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_corpus(out, corpus);
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end())
    throw Error("line " + std::to_string(line) + ": missing field '" + key + "'");
  return *it;
}

inline std::string require_string(const nlohmann::json& j, const char* key, std::size_t line) {
  const auto& v = require(j, key, line);
  if (!v.is_string())
    throw Error("line " + std::to_string(line) + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace detail

/// Parses one JSONL record. `line` is only used in diagnostics.
inline CandidateSet parse_candidate_set(const std::string& text, std::size_t line,
                                        std::vector<std::string>* warnings = nullptr) {
  const std::string where = "line " + std::to_string(line) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw Error(where + "record must be a JSON object");

  CandidateSet c;
  c.utterance_id = detail::require_string(j, "id", line);
  const auto& cands = detail::require(j, "candidates", line);
  if (!cands.is_array()) throw Error(where + "field 'candidates' must be an array");
  for (const auto& s : cands) {
    if (!s.is_string()) throw Error(where + "candidates must be strings");
    c.candidates.push_back(split_words(s.get<std::string>()));
  }
  const auto& scores = detail::require(j, "scores", line);
  if (!scores.is_array()) throw Error(where + "field 'scores' must be an array");
  for (const auto& s : scores) {
    if (!s.is_number()) throw Error(where + "scores must be numbers");
    c.scores.push_back(s.get<double>());
  }
  c.transcript = split_words(detail::require_string(j, "transcript", line));
  c.reference = split_words(detail::require_string(j, "reference", line));
  if (auto it = j.find("units"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(where + "field 'units' must be an array");
    UnitSequence u;
    for (const auto& x : *it) {
      if (!x.is_number_integer() || x.get<long long>() < 0)
        throw Error(where + "units must be non-negative integers");
      u.ids.push_back(x.get<int>());
    }
    u.deduplicated = std::adjacent_find(u.ids.begin(), u.ids.end()) == u.ids.end();
    c.units = std::move(u);
  }

  if (auto bad = check_candidate_set(c, /*allow_unk_words=*/true)) throw Error(where + *bad);
  if (warnings) {
    for (const auto& cand : c.candidates)
      if (std::find(cand.begin(), cand.end(), std::string(kUnkSurface)) != cand.end()) {
        warnings->push_back(where + "candidate contains a literal 'unk' word");
        break;
      }
  }
  return c;
}

/// Validating reader. Blank lines are skipped; the first schema violation
/// throws with its line number.
inline Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    corpus.utterances.push_back(parse_candidate_set(text, line, &corpus.warnings));
  }
  if (corpus.utterances.empty()) corpus.warnings.push_back("corpus is empty");
  return corpus;
}

inline Corpus ingest_external_nbest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_corpus(in);
}

}  // namespace mcst
