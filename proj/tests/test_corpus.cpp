#include "flowfill/corpus.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <limits>

using namespace flowfill;

namespace {

SynthSpec two_speakers(double stretch2 = 2.0) {
  SynthConfig c;
  c.speakers = {SpeakerConfig{1.0}, SpeakerConfig{stretch2}};
  return make_synth_spec(c, 42);
}

// Every monotone segmentation of n frames into m non-empty runs.
void compositions(int n, int m, Durations& cur, const std::function<void(const Durations&)>& f) {
  if (m == 1) {
    cur.push_back(n);
    f(cur);
    cur.pop_back();
    return;
  }
  for (int k = 1; k <= n - (m - 1); ++k) {
    cur.push_back(k);
    compositions(n - k, m - 1, cur, f);
    cur.pop_back();
  }
}

}  // namespace

TEST(SynthSpec, DefaultDurationRule) {
  EXPECT_EQ(default_base_durations(6), (std::vector<int>{2, 3, 4, 2, 3, 4}));
}

TEST(SynthSpec, PrototypesShareBasePlusOffset) {
  const SynthSpec s = two_speakers();
  const Mat diff = s.speakers[0].prototypes - s.speakers[1].prototypes;
  const RowVec expect = s.speakers[0].offset - s.speakers[1].offset;
  for (Eigen::Index k = 0; k < diff.rows(); ++k) EXPECT_TRUE(diff.row(k).isApprox(expect, 1e-12));
  EXPECT_GT(min_prototype_gap(s.speakers[0].prototypes), 4 * s.noise_std);
}

TEST(SynthSpec, DeterministicAndValidated) {
  SynthConfig c;
  EXPECT_EQ(make_synth_spec(c, 1).speakers[0].prototypes, make_synth_spec(c, 1).speakers[0].prototypes);
  c.noise_std = 10.0;
  EXPECT_THROW(make_synth_spec(c, 1), ConfigError);
  c = SynthConfig{};
  c.alphabet = "a";
  EXPECT_THROW(make_synth_spec(c, 1), ConfigError);
  c = SynthConfig{};
  c.speakers = {SpeakerConfig{0.0}};
  EXPECT_THROW(make_synth_spec(c, 1), ConfigError);
}

TEST(Synthesis, DurationsFollowSpeakerStretch) {
  const SynthSpec s = two_speakers(1.5);
  const CharSeq y{0, 1, 2};
  EXPECT_EQ(speaker_durations(s, 0, y), (Durations{2, 3, 4}));
  EXPECT_EQ(speaker_durations(s, 1, y), (Durations{3, 5, 6}));  // 4.5 rounds away from zero
  EXPECT_THROW(speaker_durations(s, 2, y), ContractError);
}

TEST(Synthesis, UtteranceFramesMatchPrototypes) {
  SynthConfig c;
  c.noise_std = 0.0;
  const SynthSpec s = make_synth_spec(c, 3);
  Rng rng(4);
  const UtteranceRecord r = synth_utterance(s, 0, {1, 0}, rng, "u");
  ASSERT_EQ(r.frames(), 5);
  EXPECT_EQ(r.text, "ba");
  EXPECT_EQ(Mat(r.x.row(0)), Mat(s.speakers[0].prototypes.row(1)));
  EXPECT_EQ(Mat(r.x.row(4)), Mat(s.speakers[0].prototypes.row(0)));
  const double sum = std::accumulate(r.l.begin(), r.l.end(), 0);
  EXPECT_EQ(sum, r.frames());
}

TEST(Synthesis, CorpusRoundRobinAndLengths) {
  const SynthSpec s = two_speakers();
  Rng rng(5);
  const auto recs = synth_corpus(s, 20, 3, 6, rng, 10);
  ASSERT_EQ(recs.size(), 20u);
  EXPECT_EQ(recs[0].id, "utt00010");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].speaker, static_cast<int>(i % 2));
    EXPECT_GE(recs[i].y.size(), 3u);
    EXPECT_LE(recs[i].y.size(), 6u);
    for (std::size_t j = 1; j < recs[i].y.size(); ++j) EXPECT_NE(recs[i].y[j], recs[i].y[j - 1]);
  }
}

TEST(Text, Normalization) {
  const NormalizedText a = normalize_text("ab, c-d!", "abcdef");
  EXPECT_TRUE(a.accepted);
  EXPECT_EQ(a.chars, (CharSeq{0, 1, 2, 3}));
  const NormalizedText b = normalize_text("abz", "abcdef");
  EXPECT_FALSE(b.accepted);
  EXPECT_EQ(b.reason, "disallowed character");
  EXPECT_FALSE(normalize_text(" ,. ", "abcdef").accepted);
  EXPECT_EQ(chars_to_text({5, 0}, "abcdef"), "fa");
  EXPECT_THROW(chars_to_text({6}, "abcdef"), ContractError);
}

TEST(Text, FrameTranscriptRoundTrip) {
  const CharSeq y{2, 0, 1};
  const Durations l{1, 3, 2};
  const FrameTranscript z = durations_to_frame_transcript(y, l);
  EXPECT_EQ(z, (FrameTranscript{2, 0, 0, 0, 1, 1}));
  const auto [y2, l2] = run_length_decode(z);
  EXPECT_EQ(y2, y);
  EXPECT_EQ(l2, l);
  EXPECT_THROW(durations_to_frame_transcript(y, {1, 0, 2}), ContractError);
}

TEST(Oracle, CleanUtteranceTranscribesExactly) {
  const SynthSpec s = two_speakers();
  Rng rng(6);
  for (const auto& r : synth_corpus(s, 20, 5, 12, rng)) {
    const Transcription t = oracle_transcribe(r.x, s, r.speaker);
    EXPECT_EQ(t.chars, r.y);
    EXPECT_GT(t.score, 0.9);
  }
}

TEST(Oracle, NoiseLowersScore) {
  const SynthSpec s = two_speakers();
  Rng rng(7);
  UtteranceRecord r = synth_utterance(s, 0, {0, 1, 2, 3}, rng);
  r.x += rng.normal_matrix(r.x.rows(), r.x.cols()) * 0.5;
  EXPECT_LT(oracle_transcribe(r.x, s, 0).score, 0.5);
}

TEST(Align, RecoversTrueDurations) {
  const SynthSpec s = two_speakers();
  Rng rng(8);
  for (const auto& r : synth_corpus(s, 20, 5, 12, rng)) EXPECT_EQ(align(r.x, r.y, s, r.speaker), r.l);
}

TEST(Align, MatchesBruteForceMinimum) {
  const SynthSpec s = two_speakers();
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = rng.uniform_int(1, 4);
    const int n = rng.uniform_int(m, 9);
    const CharSeq y = random_text(s.vocab(), m, rng);
    const Mat x = rng.normal_matrix(n, s.mel_dim);
    double best = std::numeric_limits<double>::infinity();
    Durations cur;
    compositions(n, m, cur, [&](const Durations& l) { best = std::min(best, alignment_cost(x, y, l, s, 0)); });
    const Durations got = align(x, y, s, 0);
    ASSERT_EQ(got.size(), static_cast<std::size_t>(m));
    for (int d : got) EXPECT_GE(d, 1);
    EXPECT_NEAR(alignment_cost(x, y, got, s, 0), best, 1e-9);
  }
}

TEST(Align, Errors) {
  const SynthSpec s = two_speakers();
  EXPECT_THROW(align(Mat::Zero(2, 16), {0, 1, 2}, s, 0), ContractError);
  EXPECT_THROW(align(Mat::Zero(2, 16), {}, s, 0), ContractError);
}

TEST(Filter, KeptDroppedRestored) {
  const SynthSpec s = two_speakers();
  Rng rng(10);
  UtteranceRecord clean = synth_utterance(s, 0, {0, 1, 2, 3, 4}, rng, "clean");
  UtteranceRecord wrong_text = clean;  // clean audio, mismatched transcript
  wrong_text.y = {5, 4, 3, 2, 1};
  UtteranceRecord noisy = clean;
  noisy.x += rng.normal_matrix(noisy.x.rows(), noisy.x.cols()) * 1.0;
  noisy.y = {5, 4, 3, 2, 1};
  const auto out = filter_corpus({clean, wrong_text, noisy}, s);
  EXPECT_EQ(out[0].filter_state, FilterState::kept);
  EXPECT_EQ(out[1].filter_state, FilterState::restored);
  EXPECT_EQ(out[2].filter_state, FilterState::dropped);
  EXPECT_TRUE(usable(out[1]));
  EXPECT_FALSE(usable(out[2]));
  EXPECT_THROW(filter_corpus({}, s, FilterThresholds{1.5, 0.9}), ConfigError);
}

TEST(Filter, ThresholdsAreStrict) {
  const SynthSpec s = two_speakers();
  Rng rng(11);
  UtteranceRecord r = synth_utterance(s, 0, {0, 1, 2, 3, 4}, rng);
  r.y = {0, 1, 2, 3, 5};  // WER exactly 0.2
  EXPECT_EQ(filter_decision(r, s, {}).state, FilterState::kept);
  EXPECT_NEAR(filter_decision(r, s, {}).wer, 0.2, 1e-15);
  EXPECT_NE(filter_decision(r, s, FilterThresholds{0.19, 1.0}).state, FilterState::kept);
  EXPECT_EQ(filter_decision(r, s, FilterThresholds{0.19, 1.0}).state, FilterState::dropped);
}

TEST(FilterState, ParseRoundTrip) {
  for (FilterState f : {FilterState::kept, FilterState::dropped, FilterState::restored})
    EXPECT_EQ(parse_filter_state(to_string(f)), f);
  EXPECT_THROW(parse_filter_state("gone"), DataError);
}

TEST(Oracle, NoiseFreeScoreNearOne) {
  SynthConfig c;
  c.noise_std = 0.0;
  const SynthSpec s = make_synth_spec(c, 12);
  Rng rng(13);
  const UtteranceRecord r = synth_utterance(s, 0, {0, 1, 2, 3, 4, 5}, rng);
  const Transcription t = oracle_transcribe(r.x, s, 0);
  EXPECT_EQ(t.chars, r.y);
  EXPECT_GT(t.score, 0.99);
}

TEST(Oracle, FarNoiseScoresLow) {
  const SynthSpec s = two_speakers();
  Rng rng(14);
  const Mat x = (rng.normal_matrix(30, s.mel_dim).array() * 5.0 + 10.0).matrix();
  EXPECT_LT(oracle_transcribe(x, s, 0).score, 0.5);
}

TEST(Oracle, DecodesAtQuarterPrototypeGap) {
  SynthConfig c;
  c.noise_std = 0.0;
  SynthSpec s = make_synth_spec(c, 15);
  // Per-coordinate noise sized so the expected frame displacement is a quarter of the gap.
  s.noise_std = min_prototype_gap(s.speakers[0].prototypes) / 4.0 / std::sqrt(static_cast<double>(s.mel_dim));
  Rng rng(16);
  for (const auto& r : synth_corpus(s, 20, 8, 16, rng)) EXPECT_EQ(wer(r.y, oracle_transcribe(r.x, s, 0).chars), 0.0);
}

TEST(SpeakerEmbedding, SeparatesSyntheticSpeakers) {
  const SynthSpec s = two_speakers(1.0);
  Rng rng(17);
  int wins = 0;
  for (int k = 0; k < 100; ++k) {
    const CharSeq y1 = random_text(s.vocab(), 12, rng), y2 = random_text(s.vocab(), 12, rng);
    const RowVec a = speaker_embedding(synth_utterance(s, 0, y1, rng).x);
    const RowVec same = speaker_embedding(synth_utterance(s, 0, y2, rng).x);
    const RowVec other = speaker_embedding(synth_utterance(s, 1, y2, rng).x);
    wins += sim_o(a, other) < sim_o(a, same);
  }
  EXPECT_EQ(wins, 100);
}
