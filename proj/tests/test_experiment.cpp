#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "mcst/checkpoint.hpp"
#include "mcst/experiment.hpp"

using namespace mcst;

namespace {

const char* kTiny = R"(
[experiment]
seed = 3
settings = 4,5,6,7

[corpus]
grammar_size = 12
train_sentences = 30
test_sentences = 8

[asr]
n_best = 6

[units]
k = 6

[model]
d_model = 8
enc_layers = 1
dec_layers = 1

[train]
epochs = 2

[decode]
beam = 2
n_candidates = 3
)";

Sentence W(const std::string& s) { return split_words(s); }

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_config_text(kTiny);
  EXPECT_EQ(c.seed, 3u);
  ASSERT_EQ(c.settings.size(), 4u);
  EXPECT_EQ(c.settings[3].name, "(7) +MC+Alignment+Units");
  EXPECT_EQ(c.grammar_size, 12u);
  EXPECT_EQ(c.unit_k, 6u);
  EXPECT_EQ(c.dims.d_model, 8);
  EXPECT_EQ(c.n_candidates, 3u);
  EXPECT_EQ(c.dims.n_heads, 2);  // untouched default
  EXPECT_EQ(c.overlap_ns, (std::vector<std::size_t>{1, 5, 10, 20}));
}

TEST(Config, CustomFlagsBecomeOneSetting) {
  const auto c = parse_config_text("[experiment]\nuse_mc = true\nuse_alignment = yes\n");
  ASSERT_EQ(c.settings.size(), 1u);
  EXPECT_TRUE(c.settings[0].use_mc);
  EXPECT_TRUE(c.settings[0].use_alignment);
  EXPECT_FALSE(c.settings[0].use_units);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config_text("[experiment]\nsettings = 4\nbogus = 1\n"), Error);
  EXPECT_THROW(parse_config_text("[experiment]\nsettings = 9\n"), Error);
  EXPECT_THROW(parse_config_text("[corpus]\ngrammar_size = 10\n"), Error);  // no settings
  EXPECT_THROW(parse_config_text("[experiment]\nuse_alignment = true\n"), Error);
  EXPECT_THROW(parse_config_text("[experiment]\nsettings = 4\n[train]\nlr = fast\n"), Error);
  EXPECT_THROW(parse_config_text("[experiment]\nsettings = 4\n[asr]\np_confuse = 2\n"), Error);
  EXPECT_THROW(parse_config_text("[experiment]\nsettings = 4\n[decode]\nn_candidates = 30\n"), Error);
  EXPECT_THROW(parse_config_text("[experiment\nsettings = 4\n"), Error);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"compare.ini", "setting4.ini", "setting5.ini", "setting6.ini", "setting7.ini", "smoke.ini"}) {
    std::ifstream in(std::filesystem::path(MCST_SOURCE_DIR) / "configs" / name);
    ASSERT_TRUE(in) << name;
    EXPECT_NO_THROW(parse_config(in)) << name;
  }
}

TEST(Settings, Presets) {
  EXPECT_FALSE(preset_setting(4).use_mc);
  EXPECT_TRUE(preset_setting(5).use_mc);
  EXPECT_FALSE(preset_setting(5).use_alignment);
  EXPECT_TRUE(preset_setting(6).use_alignment);
  EXPECT_TRUE(preset_setting(7).use_units);
  EXPECT_THROW(preset_setting(3), Error);
}

TEST(MakeSource, RawAlignedAndUnits) {
  const auto src_v = Vocabulary::from_words(VocabKind::SourceText, W("a b c d"));
  const auto tgt_v = Vocabulary::from_words(VocabKind::TargetText, W("x"));
  ModelDims d{8, 2, 1, 1, 2};
  SeqModel m = make_model(d, src_v, tgt_v, 0, 1);
  CandidateSet c{"u", {W("a b c"), W("a c"), Sentence{}}, {0, -1, -2}, W("a b c"), W("x"), {}};

  m.input = {2, false};
  auto s = make_source(m, c);
  ASSERT_EQ(s.rows.size(), 2u);
  EXPECT_EQ(s.rows[1], tokenize("a c", src_v));

  m.input = {3, true};
  s = make_source(m, c);
  ASSERT_EQ(s.rows.size(), 3u);
  EXPECT_EQ(s.rows[1], (TokenSeq{*src_v.find("a"), kUnk, *src_v.find("c")}));
  EXPECT_EQ(s.pad_mask[1], (std::vector<bool>{false, true, false}));
  EXPECT_EQ(s.pad_mask[2], (std::vector<bool>{true, true, true}));

  m.input = {3, false};
  s = make_source(m, c);
  EXPECT_EQ(s.rows[2], TokenSeq{kUnk});  // empty candidate becomes one padded unk
  EXPECT_EQ(s.pad_mask[2], std::vector<bool>{true});

  m.input = {10, false};
  EXPECT_EQ(make_source(m, c).rows.size(), 3u);

  d.use_units = true;
  SeqModel mu = make_model(d, src_v, tgt_v, 4, 1);
  EXPECT_THROW(make_source(mu, c), Error);
  c.units = UnitSequence{{0, 3}, true};
  EXPECT_EQ(*make_source(mu, c).units, (std::vector<int>{0, 3}));
}

TEST(Experiment, DataIsDeterministicAndSplit) {
  const auto cfg = parse_config_text(kTiny);
  const auto a = build_data(cfg), b = build_data(cfg);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train.size(), 30u);
  EXPECT_EQ(a.test.size(), 8u);
  ASSERT_TRUE(a.kmeans);
  for (const auto& c : a.train) {
    ASSERT_TRUE(c.units);
    EXPECT_EQ(dedup(*c.units), *c.units);
    EXPECT_EQ(lexicon_translate(a.parallel.lexicon, c.transcript), c.reference);
  }
}

TEST(Experiment, SingleCandidateMcEqualsBaseline) {
  auto cfg = parse_config_text(kTiny);
  cfg.n_candidates = 1;
  const auto data = build_data(cfg);
  const auto base = train_setting(cfg, preset_setting(4), data.train, cfg.unit_k);
  const auto mc = train_setting(cfg, preset_setting(5), data.train, cfg.unit_k);
  EXPECT_EQ(model_bytes(base.model), model_bytes(mc.model));
  EXPECT_EQ(base.loss_curve, mc.loss_curve);
}

TEST(Experiment, NoiselessRecognitionMakesTextSettingsAgree) {
  auto cfg = parse_config_text(kTiny);
  cfg.confusion.p_confuse = 0.0;
  cfg.confusion.p_elide = 0.0;
  cfg.settings = {preset_setting(4), preset_setting(5), preset_setting(6)};
  const auto rep = run_experiment(cfg);
  ASSERT_EQ(rep.settings.size(), 3u);
  EXPECT_DOUBLE_EQ(rep.top1_wer, 0.0);
  EXPECT_DOUBLE_EQ(rep.overlap.rows[0].cumulative_overlap, 1.0);
  for (const auto& s : rep.settings) {
    EXPECT_EQ(s.n_candidates_used, 1u);
    EXPECT_DOUBLE_EQ(s.corpus_bleu, rep.settings[0].corpus_bleu);
  }
}

TEST(Experiment, ReportRoundTripsThroughRunDirectory) {
  const auto cfg = parse_config_text(kTiny);
  const auto rep = run_experiment(cfg);
  ASSERT_EQ(rep.settings.size(), 4u);
  for (const auto& s : rep.settings) {
    EXPECT_EQ(s.loss_curve.size(), 2u);
    EXPECT_GE(s.corpus_bleu, 0.0);
    EXPECT_LE(s.corpus_bleu, 100.0);
  }
  EXPECT_GT(rep.settings[3].parameters, rep.settings[2].parameters);
  EXPECT_EQ(rep.settings[0].n_candidates_used, 1u);
  EXPECT_EQ(rep.settings[1].n_candidates_used, 3u);

  const auto dir = std::filesystem::temp_directory_path() / ("mcst-exp-" + std::to_string(::getpid()));
  write_run_dir(dir, kTiny, rep);
  for (const char* f : {"config.ini", "report.json", "report.txt"}) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream in(dir / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["settings"].size(), 4u);
  EXPECT_NE(render_report(rep).find("(7) +MC+Alignment+Units"), std::string::npos);
  std::filesystem::remove_all(dir);
}
