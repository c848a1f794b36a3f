#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowface/synthclip.hpp"
#include "flowface/tensor_io.hpp"

using namespace flowface;
using namespace flowface::clips;
namespace fs = std::filesystem;

namespace {

fs::path temp_root() {
  auto d = fs::temp_directory_path() / "flowface_clip_test";
  fs::create_directories(d);
  return d;
}

// mean photometric error of warping frame t onto frame t+1, masked to
// the face interior
double warp_error(const ClipSample& clip, int t) {
  const int H = clip.spec.H, W = clip.spec.W;
  Tensor<float> frame_t({H, W, kChannels});
  Tensor<float> frame_n({H, W, kChannels});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < kChannels; ++c) {
        frame_t.at(y, x, c) = clip.frames.at(t, y, x, c);
        frame_n.at(y, x, c) = clip.frames.at(t + 1, y, x, c);
      }
  Tensor<float> warped = warp(frame_t, clip.flow_at(t));
  Tensor<float> mask = sprite_interior_mask(clip, t + 1, 2.0);
  double err = 0;
  long count = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (mask.at(y, x) < 0.5f) continue;
      for (int c = 0; c < kChannels; ++c)
        err += std::abs(double(warped.at(y, x, c)) - frame_n.at(y, x, c));
      count += kChannels;
    }
  return err / double(count);
}

}  // namespace

TEST_SUITE_BEGIN("synthclip");

TEST_CASE("generation is a pure function of seed and spec") {
  ClipSpec spec;
  auto a = generate_clip(0, spec);
  auto b = generate_clip(0, spec);
  CHECK(clips_equal(a, b));
  auto c = generate_clip(1, spec);
  CHECK_FALSE(clips_equal(a, c));
}

TEST_CASE("invalid spec dimensions are configuration errors") {
  ClipSpec spec;
  spec.T = 1;
  CHECK_THROWS_AS(generate_clip(0, spec), ConfigError);
  spec.T = 5;
  spec.H = 16;
  CHECK_THROWS_AS(generate_clip(0, spec), ConfigError);
  spec.H = 48;
  spec.tokens = std::vector<int>{99};
  CHECK_THROWS_AS(generate_clip(0, spec), ConfigError);
}

TEST_CASE("silence with drift disabled gives zero flow in the mouth box") {
  ClipSpec spec;
  spec.T = 6;
  spec.head_drift = false;
  spec.tokens = std::vector<int>(4, 0);
  auto clip = generate_clip(3, spec);
  for (int t = 0; t + 1 < spec.T; ++t) {
    const Rect& box = clip.mouth_box[size_t(t)];
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) {
        CHECK(clip.flow_gt.at(t, y, x, 0) == 0.0f);
        CHECK(clip.flow_gt.at(t, y, x, 1) == 0.0f);
      }
  }
}

TEST_CASE("lip flow is identity-independent when drift is off") {
  ClipSpec spec;
  spec.T = 8;
  spec.head_drift = false;
  spec.tokens = std::vector<int>{1, 4};
  auto a = generate_clip(11, spec);
  auto b = generate_clip(222, spec);
  REQUIRE_FALSE(clips_equal(a, b));  // appearances differ
  for (int t = 0; t + 1 < spec.T; ++t) {
    const Rect box = a.mouth_box[size_t(t)];
    const Rect box_b = b.mouth_box[size_t(t)];
    CHECK(box.x0 == box_b.x0);
    CHECK(box.y1 == box_b.y1);
    FlowField fa = crop_flow(a.flow_at(t), box);
    FlowField fb = crop_flow(b.flow_at(t), box);
    CHECK(max_abs_diff(fa.u, fb.u) < 1e-6);
    CHECK(max_abs_diff(fa.v, fb.v) < 1e-6);
  }
}

TEST_CASE("analytic flow warps each frame onto the next") {
  for (uint64_t seed : {0ull, 7ull, 42ull}) {
    ClipSpec spec;
    spec.T = 10;
    auto clip = generate_clip(seed, spec);
    for (int t = 0; t + 1 < spec.T; ++t) {
      const double err = warp_error(clip, t);
      CAPTURE(seed);
      CAPTURE(t);
      CHECK(err < 1e-2);
    }
  }
}

TEST_CASE("mouth landmarks stay inside the mouth box, all frames") {
  ClipSpec spec;
  spec.T = 12;
  auto clip = generate_clip(5, spec);
  for (int t = 0; t < spec.T; ++t) {
    const Rect& box = clip.mouth_box[size_t(t)];
    for (int j = 0; j < kMouthLandmarks; ++j) {
      const float x = clip.landmarks.at(t, j, 0);
      const float y = clip.landmarks.at(t, j, 1);
      CHECK(x >= float(box.x0));
      CHECK(x <= float(box.x1));
      CHECK(y >= float(box.y0));
      CHECK(y <= float(box.y1));
    }
    CHECK(box.inside(spec.W, spec.H));
  }
}

TEST_CASE("warp: zero flow is the identity") {
  ClipSpec spec;
  auto clip = generate_clip(9, spec);
  Tensor<float> frame({spec.H, spec.W, kChannels});
  for (int y = 0; y < spec.H; ++y)
    for (int x = 0; x < spec.W; ++x)
      for (int c = 0; c < kChannels; ++c) frame.at(y, x, c) = clip.frames.at(0, y, x, c);
  FlowField zero(spec.H, spec.W);
  auto out = warp(frame, zero);
  CHECK(max_abs_diff(out, frame) == 0.0);
}

TEST_CASE("warp: unit flow shifts a horizontal ramp exactly") {
  const int H = 8, W = 16;
  Tensor<float> ramp({H, W, 1});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) ramp.at(y, x, 0) = float(x);
  FlowField one(H, W);
  one.u.fill(1.0f);
  auto out = warp(ramp, one);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W - 1; ++x)  // border clamps; interior is exact
      CHECK(out.at(y, x, 0) == doctest::Approx(double(x) + 1.0).epsilon(1e-12));
}

TEST_CASE("crop_flow composes and handles degenerate boxes") {
  ClipSpec spec;
  auto clip = generate_clip(2, spec);
  FlowField f = clip.flow_at(0);
  FlowField full = crop_flow(f, Rect{0, 0, spec.W, spec.H});
  CHECK(max_abs_diff(full.u, f.u) == 0.0);

  FlowField empty = crop_flow(f, Rect{5, 5, 5, 5});
  CHECK(empty.u.numel() == 0);

  FlowField outer = crop_flow(f, Rect{4, 6, 30, 28});
  FlowField inner = crop_flow(outer, Rect{2, 3, 10, 12});
  FlowField direct = crop_flow(f, Rect{6, 9, 14, 18});
  CHECK(max_abs_diff(inner.u, direct.u) == 0.0);
  CHECK(max_abs_diff(inner.v, direct.v) == 0.0);

  CHECK_THROWS_AS(crop_flow(f, Rect{-1, 0, 10, 10}), ConfigError);
}

TEST_CASE("clip directory round trip is lossless") {
  ClipSpec spec;
  spec.T = 6;
  auto clip = generate_clip(77, spec);
  auto dir = temp_root() / "roundtrip";
  fs::remove_all(dir);
  write_clip(clip, dir);
  auto back = read_clip(dir);
  CHECK(clips_equal(clip, back));
  CHECK(back.seed == clip.seed);
  CHECK(back.spec.token_rate == clip.spec.token_rate);
}

TEST_CASE("truncated tensor file is a format error, not a crash") {
  ClipSpec spec;
  auto clip = generate_clip(8, spec);
  auto dir = temp_root() / "trunc";
  fs::remove_all(dir);
  write_clip(clip, dir);
  auto f = dir / "frames.oftk";
  fs::resize_file(f, fs::file_size(f) / 2);
  CHECK_THROWS_AS(read_clip(dir), FormatError);
}

TEST_CASE("manifest referencing a missing tensor names the file") {
  ClipSpec spec;
  auto clip = generate_clip(8, spec);
  auto dir = temp_root() / "missing";
  fs::remove_all(dir);
  write_clip(clip, dir);
  fs::remove(dir / "audio.oftk");
  try {
    read_clip(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("audio.oftk") != std::string::npos);
  }
}

TEST_CASE("audio is token-locked up to bounded noise") {
  ClipSpec spec;
  spec.T = 10;
  spec.audio_noise_sigma = 0.0;
  spec.tokens = std::vector<int>{2, 2};
  auto clip = generate_clip(4, spec);
  for (int t = 0; t < spec.T; ++t) {
    for (int d = 0; d < clip.audio_dim(); ++d) {
      if (d == 2 || d == spec.V + 2) continue;
      CHECK(clip.audio.at(t, d) == 0.0f);
    }
    CHECK(clip.audio.at(t, 2) >= 0.25f);
  }
}

TEST_SUITE_END();
