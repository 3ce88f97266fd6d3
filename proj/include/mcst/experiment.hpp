// End-to-end experiment runner: synthetic corpus -> simulated n-best lists ->
// optional speech units -> one model per setting -> pooled beam search ->
// corpus BLEU, alongside the n-best overlap and best-index analyses.
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcst/align.hpp"
#include "mcst/corpus_io.hpp"
#include "mcst/decode.hpp"
#include "mcst/eval.hpp"
#include "mcst/model.hpp"
#include "mcst/speechsim.hpp"
#include "mcst/train.hpp"
#include "mcst/units.hpp"

#ifndef MCST_VERSION
#define MCST_VERSION "unknown"
#endif

namespace mcst {

inline constexpr const char* kVersion = MCST_VERSION;

/// Input flags of one system configuration.
struct SettingFlags {
  std::string name;
  bool use_mc = false;
  bool use_alignment = false;
  bool use_units = false;
};

/// Presets (4) baseline, (5) +MC, (6) +MC+alignment, (7) +MC+alignment+units.
inline SettingFlags preset_setting(int id) {
  switch (id) {
    case 4: return {"(4) baseline", false, false, false};
    case 5: return {"(5) +MC", true, false, false};
    case 6: return {"(6) +MC+Alignment", true, true, false};
    case 7: return {"(7) +MC+Alignment+Units", true, true, true};
    default: throw Error("unknown setting " + std::to_string(id) + " (expected 4, 5, 6 or 7)");
  }
}

inline void validate(const SettingFlags& f) {
  if (f.use_alignment && !f.use_mc) throw Error("setting " + f.name + ": use_alignment requires use_mc");
}

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::vector<SettingFlags> settings;

  std::size_t grammar_size = 24;
  std::size_t train_sentences = 600;
  std::size_t test_sentences = 200;
  GrammarOptions grammar;

  ConfusionModel confusion;
  std::size_t n_best = 20;
  std::size_t n_candidates = 5;

  std::size_t unit_k = 32;
  FeatureSpec features{16, 4, 0.05, 0.5};
  std::size_t kmeans_iters = 50;

  ModelDims dims{32, 2, 2, 2, 2};
  TrainConfig train{0.1, 10};
  BeamConfig beam;
  std::size_t max_len_extra = 3;

  std::vector<std::size_t> overlap_ns{1, 5, 10, 20};
};

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    std::istringstream one(item);
    T v;
    if (!(one >> v)) throw Error("config: bad list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

/// Reads typed keys from an INI tree and remembers which ones were used.
class ConfigReader {
 public:
  explicit ConfigReader(const boost::property_tree::ptree& t) : tree_(t) {}

  template <class T>
  void get(const std::string& key, T& value) {
    used_.insert(key);
    if (auto v = tree_.get_optional<std::string>(key)) {
      if constexpr (std::is_same_v<T, bool>) {
        const auto s = lowercase(*v);
        if (s == "true" || s == "1" || s == "yes") value = true;
        else if (s == "false" || s == "0" || s == "no") value = false;
        else throw Error("config: key " + key + " expects a boolean, got '" + *v + "'");
      } else {
        std::istringstream in(*v);
        T parsed;
        if (!(in >> parsed) || !(in >> std::ws).eof())
          throw Error("config: key " + key + " has invalid value '" + *v + "'");
        value = parsed;
      }
    }
  }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (auto v = tree_.get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) throw Error("config: key '" + section + "' outside any section");
      for (const auto& [key, value] : body)
        if (!used_.count(section + "." + key)) throw Error("config: unknown key " + section + "." + key);
    }
  }

 private:
  const boost::property_tree::ptree& tree_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Parses the INI experiment format; every key is optional and unknown
/// keys are rejected.
inline ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  detail::ConfigReader r(tree);
  r.get("experiment.seed", c.seed);
  if (auto s = r.raw("experiment.settings")) {
    for (int id : detail::parse_list<int>(*s)) c.settings.push_back(preset_setting(id));
  }
  SettingFlags custom{"custom"};
  bool has_custom = false;
  for (auto [key, flag] : {std::pair{"experiment.use_mc", &custom.use_mc},
                           std::pair{"experiment.use_alignment", &custom.use_alignment},
                           std::pair{"experiment.use_units", &custom.use_units}}) {
    if (tree.get_optional<std::string>(key)) has_custom = true;
    r.get(key, *flag);
  }
  if (has_custom) c.settings.push_back(custom);
  if (c.settings.empty()) throw Error("config: no settings requested (experiment.settings or use_* flags)");

  r.get("corpus.grammar_size", c.grammar_size);
  r.get("corpus.train_sentences", c.train_sentences);
  r.get("corpus.test_sentences", c.test_sentences);
  r.get("corpus.min_len", c.grammar.min_len);
  r.get("corpus.max_len", c.grammar.max_len);
  r.get("corpus.branching", c.grammar.branching);
  r.get("corpus.homophone_fraction", c.grammar.homophone_fraction);
  r.get("corpus.max_group", c.grammar.max_group);

  r.get("asr.p_confuse", c.confusion.p_confuse);
  r.get("asr.p_elide", c.confusion.p_elide);
  r.get("asr.score_temperature", c.confusion.score_temperature);
  r.get("asr.sample_attempts", c.confusion.sample_attempts);
  r.get("asr.n_best", c.n_best);

  r.get("units.k", c.unit_k);
  r.get("units.d_feat", c.features.d_feat);
  r.get("units.frames_per_word", c.features.frames_per_word);
  r.get("units.noise", c.features.noise);
  r.get("units.homophone_spread", c.features.homophone_spread);
  r.get("units.kmeans_iters", c.kmeans_iters);

  r.get("model.d_model", c.dims.d_model);
  r.get("model.n_heads", c.dims.n_heads);
  r.get("model.enc_layers", c.dims.n_enc_layers);
  r.get("model.dec_layers", c.dims.n_dec_layers);
  r.get("model.ffn_mult", c.dims.ffn_mult);
  r.get("model.mask_pad_in_encoder", c.dims.mask_pad_in_encoder);
  r.get("model.mask_pad_in_cross", c.dims.mask_pad_in_cross);

  r.get("train.lr", c.train.lr);
  r.get("train.epochs", c.train.epochs);
  r.get("train.batch", c.train.batch);
  r.get("train.clip_norm", c.train.clip_norm);

  r.get("decode.beam", c.beam.beam);
  r.get("decode.alpha", c.beam.alpha);
  r.get("decode.max_len_extra", c.max_len_extra);
  r.get("decode.n_candidates", c.n_candidates);

  if (auto s = r.raw("report.overlap_ns")) c.overlap_ns = detail::parse_list<std::size_t>(*s);
  r.reject_unknown();

  for (const auto& s : c.settings) validate(s);
  validate(c.confusion);
  if (c.train_sentences < 1 || c.test_sentences < 1) throw Error("config: corpus splits must be nonempty");
  if (c.n_candidates < 1 || c.n_candidates > c.n_best) throw Error("config: need 1 <= n_candidates <= n_best");
  if (c.beam.beam < 1) throw Error("config: beam must be positive");
  if (c.overlap_ns.empty()) throw Error("config: report.overlap_ns must not be empty");
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

// ---------------------------------------------------------------- inputs

/// Turns an n-best list into model input according to the model's input
/// mode: the first n candidates, aligned or raw. An empty raw candidate
/// becomes a single padded unk so that every stream has a memory.
inline SourceBatch make_source(const SeqModel& m, const CandidateSet& c) {
  if (c.candidates.empty()) throw Error("utterance " + c.utterance_id + " has no candidates");
  const std::size_t n = std::min(m.input.n_candidates, c.candidates.size());
  SourceBatch src;
  if (m.input.aligned) {
    const auto al = align_candidates(c, n);
    for (std::size_t i = 0; i < al.rows.size(); ++i) {
      src.rows.push_back(tokenize_words(al.rows[i], m.src_vocab));
      src.pad_mask.push_back(al.pad_mask[i]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      src.rows.push_back(tokenize_words(c.candidates[i], m.src_vocab));
      src.pad_mask.emplace_back(src.rows.back().size(), false);
    }
  }
  for (std::size_t i = 0; i < src.rows.size(); ++i)
    if (src.rows[i].empty()) {
      src.rows[i] = {kUnk};
      src.pad_mask[i] = {true};
    }
  if (m.dims.use_units) {
    if (!c.units || c.units->ids.empty()) throw Error("utterance " + c.utterance_id + " has no speech units");
    src.units = c.units->ids;
  }
  return src;
}

inline Example make_example(const SeqModel& m, const CandidateSet& c) {
  return {make_source(m, c), frame_target(c.reference, m.tgt_vocab)};
}

struct Translation {
  Sentence words;
  double score = 0.0;
  std::size_t n_candidates_used = 0;
};

inline Translation translate(const SeqModel& m, const CandidateSet& c, BeamConfig cfg, std::size_t max_len_extra) {
  const SourceBatch src = make_source(m, c);
  std::size_t longest = 0;
  for (const auto& r : src.rows) longest = std::max(longest, r.size());
  cfg.max_len = longest + max_len_extra;
  const auto hyps = beam_search(m, src, cfg);
  Translation t;
  t.words = detokenize_words(best_tokens(hyps), m.tgt_vocab);
  t.score = hyps.empty() ? 0.0 : length_normalized_score(hyps.front(), cfg.alpha);
  t.n_candidates_used = src.rows.size();
  return t;
}

// ------------------------------------------------------------ experiment

struct SettingResult {
  SettingFlags flags;
  std::size_t n_candidates_used = 0;
  double corpus_bleu = 0.0;
  std::vector<double> loss_curve;
  std::size_t parameters = 0;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::size_t train_size = 0, test_size = 0;
  double top1_wer = 0.0;
  double final_inertia = 0.0;
  OverlapReport overlap;
  BestIndexReport best_index;
  std::vector<SettingResult> settings;
};

struct ExperimentData {
  ToyParallelCorpus parallel;
  std::vector<CandidateSet> train, test;
  std::optional<KMeansResult> kmeans;
};

/// Builds the corpus, n-best lists and (when any setting needs them) speech
/// units. Quantizer training uses transcript features of the training split.
inline ExperimentData build_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  const std::size_t total = cfg.train_sentences + cfg.test_sentences;
  d.parallel = gen_corpus(cfg.grammar_size, total, derive_seed(cfg.seed, "corpus"), cfg.grammar);
  ConfusionModel cm = cfg.confusion;
  cm.homophone_groups = d.parallel.homophone_groups;

  std::vector<CandidateSet> all;
  for (std::size_t i = 0; i < total; ++i) {
    auto sim = simulate_nbest(d.parallel.pairs[i].first, cm, cfg.n_best, derive_seed(cfg.seed, "asr/" + std::to_string(i)));
    char id[32];
    std::snprintf(id, sizeof id, "utt-%06zu", i);
    sim.set.utterance_id = id;
    sim.set.reference = d.parallel.pairs[i].second;
    all.push_back(std::move(sim.set));
  }

  const bool need_units = std::any_of(cfg.settings.begin(), cfg.settings.end(), [](const auto& s) { return s.use_units; });
  if (need_units) {
    const Pronunciation pron(d.parallel.homophone_groups);
    std::vector<Eigen::MatrixXd> feats;
    Eigen::Index train_frames = 0;
    for (std::size_t i = 0; i < total; ++i) {
      feats.push_back(synth_features(all[i].transcript, pron, cfg.features, derive_seed(cfg.seed, "features/" + std::to_string(i))));
      if (i < cfg.train_sentences) train_frames += feats.back().rows();
    }
    Eigen::MatrixXd stacked(train_frames, static_cast<Eigen::Index>(cfg.features.d_feat));
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < cfg.train_sentences; ++i) {
      stacked.middleRows(r, feats[i].rows()) = feats[i];
      r += feats[i].rows();
    }
    d.kmeans = kmeans_fit(stacked, cfg.unit_k, derive_seed(cfg.seed, "kmeans"), cfg.kmeans_iters);
    for (std::size_t i = 0; i < total; ++i) all[i].units = dedup(quantize(d.kmeans->quantizer, feats[i]));
  }
  d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.train_sentences));
  d.test.assign(all.begin() + static_cast<std::ptrdiff_t>(cfg.train_sentences), all.end());
  return d;
}

/// Vocabularies from the training split only.
inline std::pair<Vocabulary, Vocabulary> build_vocabularies(const std::vector<CandidateSet>& train) {
  Vocabulary src(VocabKind::SourceText), tgt(VocabKind::TargetText);
  for (const auto& c : train) {
    for (const auto& w : c.transcript) if (!is_reserved_surface(w)) src.add(w);
    for (const auto& cand : c.candidates)
      for (const auto& w : cand) if (!is_reserved_surface(w)) src.add(w);
    for (const auto& w : c.reference) if (!is_reserved_surface(w)) tgt.add(w);
  }
  return {std::move(src), std::move(tgt)};
}

struct TrainedSetting {
  SeqModel model;
  std::vector<double> loss_curve;
};

inline TrainedSetting train_setting(const ExperimentConfig& cfg, const SettingFlags& flags,
                                    const std::vector<CandidateSet>& train_set, std::size_t unit_k) {
  validate(flags);
  auto [src, tgt] = build_vocabularies(train_set);
  ModelDims dims = cfg.dims;
  dims.use_units = flags.use_units;
  SeqModel model = make_model(dims, std::move(src), std::move(tgt), unit_k, derive_seed(cfg.seed, "model"));
  model.input = {flags.use_mc ? cfg.n_candidates : 1, flags.use_alignment};
  std::vector<Example> examples;
  examples.reserve(train_set.size());
  for (const auto& c : train_set) examples.push_back(make_example(model, c));
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");
  auto res = train(std::move(model), examples, tc);
  return {std::move(res.model), std::move(res.loss_curve)};
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.seed = cfg.seed;
  const ExperimentData data = build_data(cfg);
  rep.train_size = data.train.size();
  rep.test_size = data.test.size();
  if (data.kmeans) rep.final_inertia = data.kmeans->inertia.back();
  for (const auto& c : data.test) rep.top1_wer += wer(c.candidates.front(), c.transcript);
  rep.top1_wer /= static_cast<double>(data.test.size());

  rep.overlap = overlap_report(data.test, cfg.overlap_ns);
  const auto& lexicon = data.parallel.lexicon;
  rep.best_index = best_index_analysis(
      data.test, [&](const Sentence& s) { return lexicon_translate(lexicon, s); }, cfg.n_candidates);

  std::vector<Sentence> refs;
  for (const auto& c : data.test) refs.push_back(c.reference);
  for (const auto& flags : cfg.settings) {
    auto trained = train_setting(cfg, flags, data.train, cfg.unit_k);
    std::vector<Sentence> hyps;
    std::size_t used = 0;
    for (const auto& c : data.test) {
      auto t = translate(trained.model, c, cfg.beam, cfg.max_len_extra);
      used = std::max(used, t.n_candidates_used);
      hyps.push_back(std::move(t.words));
    }
    rep.settings.push_back({flags, used, corpus_bleu(hyps, refs), std::move(trained.loss_curve),
                            trained.model.parameter_count()});
  }
  return rep;
}

// --------------------------------------------------------------- reports

inline nlohmann::ordered_json to_json(const OverlapReport& r) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"n", row.n}, {"average_overlap", row.average_overlap}, {"cumulative_overlap", row.cumulative_overlap}});
  return rows;
}

inline nlohmann::ordered_json to_json(const BestIndexReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["counts"] = r.counts;
  j["percentages"] = r.percentages;
  j["first_candidate_bleu"] = r.first_candidate_bleu;
  j["oracle_candidate_bleu"] = r.oracle_candidate_bleu;
  j["utterances"] = r.utterances;
  return j;
}

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["seed"] = r.seed;
  auto& seeds = j["derived_seeds"];
  for (const char* tag : {"corpus", "kmeans", "model", "train"}) seeds[tag] = derive_seed(r.seed, tag);
  seeds["asr"] = "derive_seed(seed, \"asr/<index>\")";
  seeds["features"] = "derive_seed(seed, \"features/<index>\")";
  j["train_size"] = r.train_size;
  j["test_size"] = r.test_size;
  j["top1_wer"] = r.top1_wer;
  j["kmeans_final_inertia"] = r.final_inertia;
  j["lexical_overlap"] = to_json(r.overlap);
  j["best_index"] = to_json(r.best_index);
  auto& settings = j["settings"] = nlohmann::ordered_json::array();
  for (const auto& s : r.settings)
    settings.push_back({{"name", s.flags.name},
                        {"use_mc", s.flags.use_mc},
                        {"use_alignment", s.flags.use_alignment},
                        {"use_units", s.flags.use_units},
                        {"n_candidates_used", s.n_candidates_used},
                        {"parameters", s.parameters},
                        {"corpus_bleu", s.corpus_bleu},
                        {"loss_curve", s.loss_curve}});
  return j;
}

inline std::string render_settings_table(const ExperimentReport& r) {
  std::string out = "Corpus BLEU per setting\n";
  out += "+------------------------------+-------+------------+\n";
  out += "| Setting                      | n     | BLEU score |\n";
  out += "+------------------------------+-------+------------+\n";
  for (const auto& s : r.settings) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "| %-28s | %5zu | %10.2f |\n", s.flags.name.c_str(), s.n_candidates_used, s.corpus_bleu);
    out += buf;
  }
  out += "+------------------------------+-------+------------+\n";
  return out;
}

inline std::string render_report(const ExperimentReport& r) {
  char head[256];
  std::snprintf(head, sizeof head, "mcst %s  seed %llu  train %zu  test %zu  top-1 WER %.4f\n\n", kVersion,
                static_cast<unsigned long long>(r.seed), r.train_size, r.test_size, r.top1_wer);
  return head + render_overlap_table(r.overlap) + "\n" + render_best_index_table(r.best_index) + "\n" +
         render_settings_table(r);
}

/// Writes config.ini (verbatim copy), report.json and report.txt into `dir`.
inline void write_run_dir(const std::filesystem::path& dir, const std::string& config_text, const ExperimentReport& r) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << body;
  };
  put("config.ini", config_text);
  put("report.json", to_json(r).dump(2) + "\n");
  put("report.txt", render_report(r));
}

}  // namespace mcst
