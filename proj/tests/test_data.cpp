#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "msrgcn/data.hpp"
#include "msrgcn/errors.hpp"
#include "msrgcn/training.hpp"
#include "test_util.hpp"

using namespace msrgcn;
using namespace msrgcn::data;
namespace fs = std::filesystem;

namespace {

PoseSequence ramp(std::size_t joints, std::size_t frames, double fps = 25.0,
                  const std::string& subject = "S1") {
  PoseSequence s;
  s.joints = joints;
  s.fps = fps;
  s.subject = subject;
  s.action = "ramp";
  s.frames = Matrix(frames, 3 * joints);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < 3 * joints; ++c) s.frames(t, c) = double(1000 * t + c);
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msrgcn_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("sequence text round trip is exact") {
  Rng rng(4);
  PoseSequence s = ramp(5, 7, 50.0);
  s.frames = testutil::random_matrix(rng, 7, 15, -2000, 2000);
  const PoseSequence back = parse_sequence(format_sequence(s));
  CHECK(back.joints == 5);
  CHECK(back.fps == 50.0);
  CHECK(back.subject == "S1");
  CHECK(back.action == "ramp");
  CHECK(back.frames == s.frames);

  const fs::path dir = temp_dir("roundtrip");
  save_sequence(dir / "a.seq", s);
  CHECK(load_sequence(dir / "a.seq").frames == s.frames);
}

TEST_CASE("fixture files") {
  const PoseSequence two = load_sequence(MSRGCN_FIXTURES_DIR "/two_frames_22.seq");
  CHECK(two.joints == 22);
  CHECK(two.length() == 2);
  CHECK(two.action == "walking");

  try {
    (void)load_sequence(MSRGCN_FIXTURES_DIR "/short_row_22.seq");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    const std::string msg = e.what();
    CHECK(msg.find("65") != std::string::npos);
    CHECK(msg.find("66") != std::string::npos);
  }
}

TEST_CASE("malformed sequence text") {
  const std::string header = "MSRSEQ1 J=1 FPS=25 SUBJECT=S1 ACTION=a\n";
  CHECK_THROWS_AS(parse_sequence(header + "1 2 nan\n"), DataError);
  CHECK_THROWS_AS(parse_sequence(header + "1 2 inf\n"), DataError);
  CHECK_THROWS_AS(parse_sequence(header + "1 2 3\n# late comment\n"), ParseError);
  CHECK_THROWS_AS(parse_sequence(header + "1 2 x\n"), ParseError);
  CHECK_THROWS_AS(parse_sequence(header), ParseError);
  CHECK_THROWS_AS(parse_sequence("1 2 3\n"), ParseError);
  CHECK_THROWS_AS(parse_sequence("MSRSEQ1 J=0 FPS=25 SUBJECT=S1 ACTION=a\n1 2 3\n"), ParseError);
  CHECK_THROWS_AS(parse_sequence("MSRSEQ1 J=1 FPS=-1 SUBJECT=S1 ACTION=a\n1 2 3\n"), ParseError);
  const PoseSequence ok = parse_sequence("# note\n\n" + header + "\n1 2 3\n4 5 6\n");
  CHECK(ok.frames == Matrix{{1, 2, 3}, {4, 5, 6}});
  CHECK_THROWS_AS(load_sequence("/nonexistent/x.seq"), DataError);
}

TEST_CASE("preprocess keeps every factor-th frame and the selected joints") {
  const PoseSequence s = ramp(4, 100, 50.0);
  DatasetConfig cfg;
  cfg.temporal_downsample = 2;
  const PoseSequence d = preprocess(s, cfg);
  CHECK(d.length() == 50);
  CHECK(d.fps == 25.0);
  CHECK(d.frames(7, 5) == s.frames(14, 5));

  cfg.temporal_downsample = 3;
  CHECK(preprocess(s, cfg).length() == 34);

  SUBCASE("downsampling composes") {
    DatasetConfig a, b, ab;
    a.temporal_downsample = 2;
    b.temporal_downsample = 3;
    ab.temporal_downsample = 6;
    const PoseSequence twice = preprocess(preprocess(s, a), b);
    const PoseSequence once = preprocess(s, ab);
    CHECK(twice.frames == once.frames);
    CHECK(twice.fps == doctest::Approx(once.fps));
  }

  SUBCASE("joint selection") {
    DatasetConfig sel;
    sel.joint_selection = {3, 1};
    const PoseSequence j = preprocess(s, sel);
    CHECK(j.joints == 2);
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(j.frames(4, a) == s.frames(4, 9 + a));
      CHECK(j.frames(4, 3 + a) == s.frames(4, 3 + a));
    }
    sel.joint_selection = {1, 1};
    CHECK_THROWS_AS(preprocess(s, sel), ConfigError);
    sel.joint_selection = {4};
    CHECK_THROWS_AS(preprocess(s, sel), ConfigError);
  }

  CHECK(h36m_joint_selection().size() == 22);
  CHECK(cmu_joint_selection().size() == 25);
  cfg.temporal_downsample = 0;
  CHECK_THROWS_AS(preprocess(s, cfg), ConfigError);
}

TEST_CASE("sliding windows") {
  CHECK(window(ramp(2, 35), 10, 25, 1).size() == 1);
  CHECK(window(ramp(2, 36), 10, 25, 1).size() == 2);
  CHECK(window(ramp(2, 34), 10, 25, 1).empty());
  CHECK(window(ramp(2, 70), 10, 25, 35).size() == 2);
  CHECK(window(ramp(2, 69), 10, 25, 35).size() == 1);
  for (std::size_t len : {35u, 50u, 97u, 120u}) {
    for (std::size_t stride : {1u, 3u, 25u}) {
      CHECK(window(ramp(2, len), 10, 25, stride).size() == (len - 35) / stride + 1);
    }
  }
  CHECK_THROWS_AS(window(ramp(2, 40), 10, 25, 0), ConfigError);
  CHECK_THROWS_AS(window(ramp(2, 40), 0, 25, 1), ConfigError);

  SUBCASE("history and future reassemble the source frames") {
    const PoseSequence s = ramp(3, 60);
    const auto w = window(s, 10, 25, 7);
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(w[i].action == "ramp");
      const Matrix full = training::full_sequence(w[i]);
      for (std::size_t t = 0; t < 35; ++t)
        for (std::size_t r = 0; r < 9; ++r) CHECK(full(r, t) == s.frames(7 * i + t, r));
    }
  }
}

TEST_CASE("split by subject") {
  std::vector<PoseSequence> seqs{ramp(1, 5, 25, "S1"), ramp(1, 5, 25, "S5"), ramp(1, 5, 25, "S11"),
                                 ramp(1, 5, 25, "S7")};
  const SplitSets sets = split_by_subject(seqs, SplitMap{});
  CHECK(sets.train.size() == 2);
  CHECK(sets.test.size() == 1);
  CHECK(sets.test[0].subject == "S5");
  CHECK(sets.val.size() == 1);
  CHECK(sets.val[0].subject == "S11");

  SplitMap strict;
  strict.fallback.reset();
  try {
    (void)split_by_subject(seqs, strict);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("S1") != std::string::npos);
  }
}

TEST_CASE("synthetic motion") {
  SUBCASE("still motion is constant") {
    const PoseSequence s = synthetic_motion(MotionKind::still, 6, 30, 25.0, 1);
    for (std::size_t t = 1; t < 30; ++t)
      for (std::size_t c = 0; c < 18; ++c) CHECK(s.frames(t, c) == s.frames(0, c));
  }
  SUBCASE("linear motion has constant differences") {
    const PoseSequence s = synthetic_motion(MotionKind::linear, 6, 30, 25.0, 1);
    for (std::size_t t = 2; t < 30; ++t)
      for (std::size_t c = 0; c < 18; ++c) {
        const double d1 = s.frames(t, c) - s.frames(t - 1, c);
        const double d0 = s.frames(1, c) - s.frames(0, c);
        CHECK(d1 == doctest::Approx(d0).epsilon(1e-9));
      }
  }
  SUBCASE("sinusoid stays within amplitude of the rest pose") {
    SyntheticOptions opt;
    opt.amplitude = 0.25;
    const PoseSequence s = synthetic_motion(MotionKind::sinusoid, 6, 200, 25.0, 2, opt);
    for (std::size_t c = 0; c < 18; ++c) {
      double lo = 1e9, hi = -1e9;
      for (std::size_t t = 0; t < 200; ++t) {
        lo = std::min(lo, s.frames(t, c));
        hi = std::max(hi, s.frames(t, c));
      }
      CHECK(hi - lo <= 2 * 0.25 + 1e-12);
      CHECK(hi - lo > 0.0);
    }
  }
  const PoseSequence a = synthetic_motion(MotionKind::sinusoid, 6, 40, 25.0, 9);
  const PoseSequence b = synthetic_motion(MotionKind::sinusoid, 6, 40, 25.0, 9);
  const PoseSequence c = synthetic_motion(MotionKind::sinusoid, 6, 40, 25.0, 10);
  CHECK(a.frames == b.frames);
  CHECK_FALSE(a.frames == c.frames);
  CHECK_NOTHROW(validate(a));
  CHECK_THROWS_AS(synthetic_motion(MotionKind::still, 0, 40, 25.0, 1), ConfigError);
}

TEST_CASE("loading a directory") {
  const fs::path dir = temp_dir("dir");
  fs::create_directories(dir / "sub");
  save_sequence(dir / "b.seq", ramp(2, 3, 25, "S5"));
  save_sequence(dir / "sub" / "a.seq", ramp(2, 4, 25, "S1"));
  std::ofstream(dir / "notes.txt") << "ignored\n";
  const auto seqs = load_directory(dir);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0].subject == "S5");
  CHECK(seqs[1].length() == 4);

  try {
    (void)load_directory(dir / "missing");
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("missing") != std::string::npos);
  }

  std::ofstream(dir / "c.seq") << "MSRSEQ1 J=2 FPS=25 SUBJECT=S1 ACTION=a\n1 2 3\n";
  try {
    (void)load_directory(dir);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("c.seq") != std::string::npos);
    CHECK(e.line() == 2);
  }
}

TEST_CASE("sequence validation") {
  PoseSequence s = ramp(2, 3);
  CHECK_NOTHROW(validate(s));
  s.fps = 0;
  CHECK_THROWS_AS(validate(s), DataError);
  s = ramp(2, 3);
  s.joints = 3;
  CHECK_THROWS_AS(validate(s), DataError);
  s = ramp(2, 3);
  s.action = "two words";
  CHECK_THROWS_AS(format_sequence(s), DataError);
}
