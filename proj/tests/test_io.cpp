#include "flowfill/checkpoint.hpp"
#include "flowfill/config.hpp"
#include "flowfill/corpus_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace flowfill;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flowfill_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

AudioModelConfig tiny_audio() {
  AudioModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 8;
  c.ffn_dim = 16;
  c.char_dim = 4;
  c.mel_dim = 3;
  c.vocab = 4;
  return c;
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughJson) {
  const RunConfig a = resolve(RunConfig{});
  const json j = a;
  const RunConfig b = run_config_from_json(j);
  EXPECT_EQ(json(b).dump(), j.dump());
}

TEST(Config, PartialDocumentKeepsDefaults) {
  const RunConfig c = run_config_from_json(parse_json_text(R"({"seed": 5, "mask": {"p_full": 0.4, "p_none": 0.1}})", "t"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_DOUBLE_EQ(c.mask.p_full, 0.4);
  EXPECT_DOUBLE_EQ(c.mask.p_random, 0.5);
  EXPECT_EQ(c.train_audio.total_steps, TrainConfig{}.total_steps);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(run_config_from_json(parse_json_text(R"({"sed": 1})", "t")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_json_text(R"({"mask": {"p_ful": 0.4}})", "t")), ConfigError);
  try {
    run_config_from_json(parse_json_text(R"({"audio_model": {"layerz": 4}})", "t"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layerz"), std::string::npos);
  }
}

TEST(Config, TypeErrorsAndInvalidValues) {
  EXPECT_THROW(run_config_from_json(parse_json_text(R"({"seed": "x"})", "t")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_json_text(R"({"mask": {"p_full": 0.9}})", "t")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_json_text(R"({"eval": {"ode_method": "rk4"}})", "t")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_json_text(R"({"eval": {"ode_steps": 0}})", "t")), ConfigError);
  EXPECT_THROW(parse_json_text("{", "t"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/flowfill.json"), ConfigError);
}

TEST(Config, DerivedSeedsDifferPerComponent) {
  const RunConfig a = resolve(RunConfig{});
  EXPECT_NE(a.train_audio.seed, a.train_dur.seed);
  EXPECT_NE(a.eval.seed, a.toy2d.seed);
  RunConfig b;
  b.seed = 1;
  EXPECT_NE(resolve(b).train_audio.seed, a.train_audio.seed);
  EXPECT_EQ(derive_seed(7, "eval"), derive_seed(7, "eval"));
}

TEST(Config, Overrides) {
  json j = RunConfig{};
  apply_override(j, "train_audio.total_steps=500");
  apply_override(j, "eval.ode_method=euler");
  apply_override(j, "synth.speakers=[{\"stretch\":1},{\"stretch\":2}]");
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(c.train_audio.total_steps, 500);
  EXPECT_EQ(c.eval.ode.method, OdeMethod::euler);
  ASSERT_EQ(c.synth.speakers.size(), 2u);
  EXPECT_DOUBLE_EQ(c.synth.speakers[1].stretch, 2.0);
  EXPECT_THROW(apply_override(j, "train_audio.total_stepz=5"), ConfigError);
  EXPECT_THROW(apply_override(j, "seed.x=5"), ConfigError);
  EXPECT_THROW(apply_override(j, "noequals"), ConfigError);
}

TEST(Checkpoint, RoundTripIsFloat32Exact) {
  AudioModel m(tiny_audio(), 3);
  const fs::path dir = scratch("ckpt");
  const std::string path = (dir / "a.ckpt").string();
  save_model(path, m);
  AudioModel back = load_audio_model(path);
  ASSERT_EQ(back.params().size(), m.params().size());
  for (std::size_t k = 0; k < m.params().size(); ++k)
    EXPECT_EQ(back.params().at(k).value, round_to_f32(m.params().at(k).value));
  EXPECT_EQ(json(back.config()).dump(), json(m.config()).dump());
  Rng rng(4);
  const Mat x = rng.normal_matrix(3, 3);
  const FrameTranscript z{0, 1, 2};
  EXPECT_LT((back.predict(x, x, z, 0.5) - m.predict(x, x, z, 0.5)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Checkpoint, WrongKindAndCorruptionAreDataErrors) {
  AudioModel m(tiny_audio(), 3);
  const fs::path dir = scratch("ckpt_bad");
  const std::string path = (dir / "a.ckpt").string();
  save_model(path, m);
  EXPECT_THROW(load_duration_infill_model(path), DataError);

  std::ostringstream os;
  write_checkpoint(os, ModelKind::audio, json(m.config()), m.params());
  const std::string good = os.str();
  auto load = [](const std::string& bytes) {
    std::istringstream is(bytes);
    return read_checkpoint(is);
  };
  EXPECT_NO_THROW(load(good));
  EXPECT_THROW(load("XXXX" + good.substr(4)), DataError);
  EXPECT_THROW(load(good.substr(0, good.size() - 3)), DataError);
  EXPECT_THROW(load(good + "z"), DataError);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(load(bad_version), DataError);
  EXPECT_THROW(load(""), DataError);

  AudioModelConfig other = tiny_audio();
  other.layers = 4;
  AudioModel different(other, 1);
  EXPECT_THROW(load_params(different.params(), load(good)), DataError);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string(), ModelKind::audio), DataError);
}

TEST(Checkpoint, DurationModelsRoundTrip) {
  const fs::path dir = scratch("ckpt_dur");
  DurationInfillModel a(DurInfillConfig{}, 1);
  PromptedDurationModel b(PromptEncoderConfig{}, 2);
  save_model((dir / "a").string(), a);
  save_model((dir / "b").string(), b);
  const DurationInfillModel a2 = load_duration_infill_model((dir / "a").string());
  const PromptedDurationModel b2 = load_duration_prompted_model((dir / "b").string());
  EXPECT_EQ(a2.params().at(0).value, round_to_f32(a.params().at(0).value));
  EXPECT_EQ(b2.params().at(1).value, round_to_f32(b.params().at(1).value));
}

TEST(Mel, RoundTripAndErrors) {
  Rng rng(5);
  const Mat x = rng.normal_matrix(7, 3);
  std::ostringstream os;
  write_mel(os, x);
  EXPECT_EQ(os.str().size(), 4u + 4u * 3u + 4u * 21u);
  std::istringstream is(os.str());
  EXPECT_EQ(read_mel(is), round_to_f32(x));
  std::istringstream trunc(os.str().substr(0, 30));
  EXPECT_THROW(read_mel(trunc), DataError);
  std::istringstream magic("ABCD" + os.str().substr(4));
  EXPECT_THROW(read_mel(magic), DataError);
  EXPECT_THROW(load_mel("/nonexistent/x.melf"), DataError);
}

TEST(Manifest, RoundTrip) {
  const std::vector<ManifestEntry> e{{"utt1", 0, "abc", "mels/utt1.melf", {2, 3, 4}, FilterState::kept},
                                     {"utt2", 1, "ba", "mels/utt2.melf", {6, 4}, FilterState::restored}};
  std::ostringstream os;
  write_manifest(os, e);
  std::istringstream is(os.str());
  const auto back = read_manifest(is);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, "utt2");
  EXPECT_EQ(back[1].l, (Durations{6, 4}));
  EXPECT_EQ(back[1].filter_state, FilterState::restored);
}

TEST(Manifest, MalformedLines) {
  std::istringstream a("utt1\t0\tabc\tm\t2,3\n");
  EXPECT_THROW(read_manifest(a), DataError);
  std::istringstream b("utt1\tx\tabc\tm\t2,3\tkept\n");
  EXPECT_THROW(read_manifest(b), DataError);
  std::istringstream c("utt1\t0\tabc\tm\t2,3q\tkept\n");
  EXPECT_THROW(read_manifest(c), DataError);
  std::istringstream d("utt1\t0\tabc\tm\t2,3\tlost\n");
  EXPECT_THROW(read_manifest(d), DataError);
  std::ostringstream os;
  EXPECT_THROW(write_manifest(os, {{"a\tb", 0, "x", "m", {1}, FilterState::kept}}), DataError);
}

TEST(Split, SaveAndLoad) {
  SynthConfig sc;
  sc.speakers = {SpeakerConfig{1.0}, SpeakerConfig{1.5}};
  const SynthSpec spec = make_synth_spec(sc, 6);
  Rng rng(7);
  auto recs = synth_corpus(spec, 5, 3, 6, rng);
  recs[3].filter_state = FilterState::dropped;
  const fs::path dir = scratch("split");
  save_spec(dir / "spec.json", spec);
  save_split(dir, "train", recs);
  const SynthSpec spec2 = load_spec(dir / "spec.json");
  EXPECT_TRUE(spec2.speakers[1].prototypes.isApprox(spec.speakers[1].prototypes, 1e-12));
  const auto back = load_split(dir, "train", spec2);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back[i].id, recs[i].id);
    EXPECT_EQ(back[i].y, recs[i].y);
    EXPECT_EQ(back[i].l, recs[i].l);
    EXPECT_EQ(back[i].x, round_to_f32(recs[i].x));
    EXPECT_EQ(back[i].filter_state, recs[i].filter_state);
  }
  EXPECT_EQ(find_record(back, recs[2].id).id, recs[2].id);
  EXPECT_THROW(find_record(back, "nope"), DataError);
  EXPECT_THROW(load_split(dir, "test", spec2), DataError);
}
