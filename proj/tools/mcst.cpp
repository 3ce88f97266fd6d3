// mcst command-line driver.
#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "mcst/checkpoint.hpp"
#include "mcst/experiment.hpp"

namespace {

using namespace mcst;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  return out;
}

void print_warnings(const std::vector<std::string>& ws) {
  for (const auto& w : ws) std::cerr << "warning: " << w << '\n';
}

// Parallel corpus lines: {"id": ..., "source": "...", "target": "..."}
struct ParallelLine {
  std::string id;
  Sentence source, target;
};

std::vector<ParallelLine> read_parallel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<ParallelLine> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      out.push_back({j.at("id").get<std::string>(), split_words(j.at("source").get<std::string>()),
                     split_words(j.at("target").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw Error(path + ": line " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, std::string> read_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::map<std::string, std::string> lex;
  std::string line;
  while (std::getline(in, line)) {
    auto w = split_words(line);
    if (w.empty()) continue;
    if (w.size() != 2) throw Error(path + ": lexicon lines need exactly two words");
    lex[w[0]] = w[1];
  }
  return lex;
}

SettingFlags setting_from_config(const ExperimentConfig& cfg, int setting) {
  return setting ? preset_setting(setting) : cfg.settings.front();
}

// ------------------------------------------------------------- commands

struct GenCorpusArgs {
  std::size_t grammar_size = 24, sentences = 800;
  std::uint64_t seed = 1;
  std::string out_dir;
};

int gen_corpus_cmd(const GenCorpusArgs& a) {
  const auto c = gen_corpus(a.grammar_size, a.sentences, a.seed);
  std::filesystem::create_directories(a.out_dir);
  const std::filesystem::path dir(a.out_dir);
  auto par = open_out((dir / "parallel.jsonl").string());
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt-%06zu", i);
    nlohmann::ordered_json j{{"id", id}, {"source", join_words(c.pairs[i].first)}, {"target", join_words(c.pairs[i].second)}};
    par << j.dump() << '\n';
  }
  auto hom = open_out((dir / "homophones.txt").string());
  write_homophone_groups(hom, c.homophone_groups);
  auto lex = open_out((dir / "lexicon.txt").string());
  for (const auto& [s, t] : c.lexicon) lex << s << ' ' << t << '\n';
  std::cout << "wrote " << c.pairs.size() << " pairs, " << c.homophone_groups.size() << " homophone groups to "
            << a.out_dir << '\n';
  return 0;
}

struct SimulateArgs {
  std::string corpus, homophones, out, quantizer_out;
  std::size_t n = 20, units = 0;
  std::uint64_t seed = 1;
  double p_confuse = 0.3, p_elide = 0.05, temperature = 1.0, spread = 0.5;
};

int simulate_cmd(const SimulateArgs& a) {
  const auto lines = read_parallel(a.corpus);
  ConfusionModel cm;
  cm.homophone_groups = read_homophone_groups_file(a.homophones);
  cm.p_confuse = a.p_confuse;
  cm.p_elide = a.p_elide;
  cm.score_temperature = a.temperature;
  std::vector<CandidateSet> sets;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto sim = simulate_nbest(lines[i].source, cm, a.n, derive_seed(a.seed, "asr/" + std::to_string(i)));
    for (const auto& w : sim.warnings) std::cerr << "warning: " << lines[i].id << ": " << w << '\n';
    sim.set.utterance_id = lines[i].id;
    sim.set.reference = lines[i].target;
    sets.push_back(std::move(sim.set));
  }
  if (a.units > 0) {
    FeatureSpec spec;
    spec.homophone_spread = a.spread;
    const Pronunciation pron(cm.homophone_groups);
    std::vector<Eigen::MatrixXd> feats;
    Eigen::Index rows = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      feats.push_back(synth_features(sets[i].transcript, pron, spec, derive_seed(a.seed, "features/" + std::to_string(i))));
      rows += feats.back().rows();
    }
    Eigen::MatrixXd all(rows, static_cast<Eigen::Index>(spec.d_feat));
    Eigen::Index r = 0;
    for (const auto& f : feats) {
      all.middleRows(r, f.rows()) = f;
      r += f.rows();
    }
    const auto km = kmeans_fit(all, a.units, derive_seed(a.seed, "kmeans"), 50);
    for (std::size_t i = 0; i < sets.size(); ++i) sets[i].units = dedup(quantize(km.quantizer, feats[i]));
    if (!a.quantizer_out.empty()) save_quantizer(a.quantizer_out, km.quantizer);
  }
  write_corpus_file(a.out, sets);
  std::cout << "wrote " << sets.size() << " n-best lists to " << a.out << '\n';
  return 0;
}

int align_cmd(const std::string& input, std::size_t n, const std::string& out_path) {
  const auto corpus = ingest_external_nbest(input);
  print_warnings(corpus.warnings);
  auto out = open_out(out_path);
  for (const auto& c : corpus.utterances) {
    const auto al = align_candidates(c, std::min(n, c.candidates.size()));
    nlohmann::ordered_json j;
    j["id"] = al.utterance_id;
    auto& rows = j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : al.rows) rows.push_back(join_words(r));
    j["pad_mask"] = al.pad_mask;
    j["provenance"] = al.provenance;
    out << j.dump() << '\n';
  }
  return 0;
}

int train_cmd(const std::string& config_path, int setting, const std::string& data, const std::string& model_out) {
  const auto cfg = parse_config_text(read_text(config_path));
  const auto corpus = ingest_external_nbest(data);
  print_warnings(corpus.warnings);
  if (corpus.utterances.empty()) throw Error("no training data in " + data);
  const auto flags = setting_from_config(cfg, setting);
  std::size_t unit_k = 0;
  if (flags.use_units) {
    for (const auto& c : corpus.utterances) {
      if (!c.units) throw Error("setting " + flags.name + " needs speech units but " + c.utterance_id + " has none");
      for (int u : c.units->ids) unit_k = std::max(unit_k, static_cast<std::size_t>(u) + 1);
    }
    unit_k = std::max(unit_k, cfg.unit_k);
  }
  auto trained = train_setting(cfg, flags, corpus.utterances, unit_k);
  for (std::size_t e = 0; e < trained.loss_curve.size(); ++e)
    std::cout << "epoch " << e + 1 << " loss " << trained.loss_curve[e] << '\n';
  save_model_file(model_out, trained.model);
  return 0;
}

int translate_cmd(const std::string& model_path, const std::string& input, const std::string& out_path,
                  BeamConfig beam, std::size_t max_len_extra) {
  const auto model = load_model_file(model_path);
  const auto corpus = ingest_external_nbest(input);
  print_warnings(corpus.warnings);
  std::ofstream file;
  if (!out_path.empty()) file = open_out(out_path);
  std::ostream& out = out_path.empty() ? std::cout : file;
  std::vector<Sentence> hyps, refs;
  for (const auto& c : corpus.utterances) {
    auto t = translate(model, c, beam, max_len_extra);
    nlohmann::ordered_json j{{"id", c.utterance_id},
                             {"hypothesis", join_words(t.words)},
                             {"score", t.score},
                             {"n_candidates_used", t.n_candidates_used},
                             {"beam", beam.beam}};
    out << j.dump() << '\n';
    hyps.push_back(std::move(t.words));
    refs.push_back(c.reference);
  }
  if (!hyps.empty()) std::cerr << "corpus BLEU " << corpus_bleu(hyps, refs) << '\n';
  return 0;
}

struct ReportArgs {
  std::string input, model, lexicon, json_out;
  std::size_t n = 5;
  std::vector<std::size_t> ns{1, 5, 10, 20};
};

int report_cmd(const ReportArgs& a) {
  const auto corpus = ingest_external_nbest(a.input);
  print_warnings(corpus.warnings);
  if (corpus.utterances.empty()) throw Error("nothing to report on");
  const auto overlap = overlap_report(corpus.utterances, a.ns);
  BestIndexReport best;
  if (!a.model.empty()) {
    const auto model = load_model_file(a.model);
    auto single = model;
    single.input = {1, false};
    single.dims.use_units = false;
    best = best_index_analysis(
        corpus.utterances,
        [&](const Sentence& s) {
          CandidateSet c;
          c.candidates = {s};
          c.scores = {0.0};
          return translate(single, c, BeamConfig{}, 3).words;
        },
        a.n);
  } else if (!a.lexicon.empty()) {
    const auto lex = read_lexicon(a.lexicon);
    best = best_index_analysis(corpus.utterances, [&](const Sentence& s) { return lexicon_translate(lex, s); }, a.n);
  } else {
    best = best_index_analysis(corpus.utterances, [](const Sentence& s) { return s; }, a.n, true);
  }
  std::cout << render_overlap_table(overlap) << '\n' << render_best_index_table(best);
  if (!a.json_out.empty()) {
    nlohmann::ordered_json j{{"lexical_overlap", to_json(overlap)}, {"best_index", to_json(best)}};
    open_out(a.json_out) << j.dump(2) << '\n';
  }
  return 0;
}

int experiment_cmd(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  const std::string text = read_text(config_path);
  auto cfg = parse_config_text(text);
  if (seed) cfg.seed = *seed;  // report.json records the effective seed
  const auto rep = run_experiment(cfg);
  write_run_dir(out_dir, text, rep);
  std::cout << render_report(rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-candidate cascaded speech translation toolkit (desk-scale)"};
  app.set_version_flag("--version", std::string(mcst::kVersion));
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Generate a synthetic parallel corpus with homophone groups");
  g->add_option("--size", gen.grammar_size, "Number of source words in the grammar")->capture_default_str();
  g->add_option("--sentences", gen.sentences, "Number of sentence pairs")->capture_default_str();
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--out", gen.out_dir, "Output directory (parallel.jsonl, homophones.txt, lexicon.txt)")->required();

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate-asr", "Turn transcripts into simulated ASR n-best lists");
  s->add_option("--corpus", sim.corpus, "parallel.jsonl from gen-corpus")->required()->check(CLI::ExistingFile);
  s->add_option("--homophones", sim.homophones, "Homophone groups, one group per line")->required()->check(CLI::ExistingFile);
  s->add_option("--n", sim.n, "Candidates per utterance")->capture_default_str();
  s->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  s->add_option("--p-confuse", sim.p_confuse, "Per-word homophone substitution probability")->capture_default_str();
  s->add_option("--p-elide", sim.p_elide, "Per-word deletion probability")->capture_default_str();
  s->add_option("--temperature", sim.temperature, "Gumbel noise scale on candidate scores")->capture_default_str();
  s->add_option("--units", sim.units, "Attach speech units from a k-means quantizer with this many clusters (0 = none)")
      ->capture_default_str();
  s->add_option("--homophone-spread", sim.spread, "Acoustic offset between homophones")->capture_default_str();
  s->add_option("--quantizer-out", sim.quantizer_out, "Save the fitted quantizer here");
  s->add_option("--out", sim.out, "Output n-best JSONL")->required();

  std::string align_in, align_out;
  std::size_t align_n = 5;
  auto* al = app.add_subcommand("align", "Align the first n candidates of every n-best list");
  al->add_option("--input", align_in, "n-best JSONL")->required()->check(CLI::ExistingFile);
  al->add_option("--n", align_n, "Candidates to align")->capture_default_str();
  al->add_option("--out", align_out, "Aligned JSONL")->required();

  std::string train_config, train_data, train_model;
  int train_setting_id = 0;
  auto* t = app.add_subcommand("train", "Train a model on n-best lists");
  t->add_option("--config", train_config, "Experiment INI (model, train and decode sections are used)")
      ->required()
      ->check(CLI::ExistingFile);
  t->add_option("--setting", train_setting_id, "Preset 4-7; default is the first setting in the config")
      ->check(CLI::Range(4, 7));
  t->add_option("--data", train_data, "Training n-best JSONL")->required()->check(CLI::ExistingFile);
  t->add_option("--model", train_model, "Output checkpoint")->required();

  std::string tr_model, tr_in, tr_out;
  BeamConfig beam;
  std::size_t max_len_extra = 3;
  auto* tr = app.add_subcommand("translate", "Translate n-best lists with a trained model");
  tr->add_option("--model", tr_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  tr->add_option("--input", tr_in, "n-best JSONL")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Output JSONL (id, hypothesis, score, n_candidates_used, beam); stdout when omitted");
  tr->add_option("--beam", beam.beam, "Beam width")->capture_default_str();
  tr->add_option("--alpha", beam.alpha, "Length normalization exponent")->capture_default_str();
  tr->add_option("--max-len-extra", max_len_extra, "Output may exceed the longest input by this many tokens")
      ->capture_default_str();

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Lexical-overlap and best-candidate-index analysis of n-best lists");
  r->add_option("--input", rep.input, "n-best JSONL")->required()->check(CLI::ExistingFile);
  r->add_option("--n", rep.n, "Candidates considered for the best-index histogram")->capture_default_str();
  r->add_option("--ns", rep.ns, "Overlap table rows")->delimiter(',')->capture_default_str();
  auto* rm = r->add_option("--model", rep.model, "Translate candidates with this checkpoint")->check(CLI::ExistingFile);
  r->add_option("--lexicon", rep.lexicon, "Translate candidates word for word with this lexicon")
      ->check(CLI::ExistingFile)
      ->excludes(rm);
  r->add_option("--json", rep.json_out, "Also write the report as JSON");

  std::string exp_config, exp_out;
  std::optional<std::uint64_t> exp_seed;
  auto* e = app.add_subcommand("experiment", "Run the full settings comparison from a config file");
  e->add_option("--config", exp_config, "Experiment INI")->required()->check(CLI::ExistingFile);
  e->add_option("--out", exp_out, "Run directory (config.ini, report.json, report.txt)")->required();
  e->add_option("--seed", exp_seed, "Override experiment.seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return gen_corpus_cmd(gen);
    if (*s) return simulate_cmd(sim);
    if (*al) return align_cmd(align_in, align_n, align_out);
    if (*t) return train_cmd(train_config, train_setting_id, train_data, train_model);
    if (*tr) return translate_cmd(tr_model, tr_in, tr_out, beam, max_len_extra);
    if (*r) return report_cmd(rep);
    if (*e) return experiment_cmd(exp_config, exp_out, exp_seed);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}
