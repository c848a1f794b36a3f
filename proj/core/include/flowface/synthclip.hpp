#pragma once

// Procedural talking-sprite clips with analytically known motion.
//
// A clip renders a textured elliptical face whose mouth opens and closes
// following per-token aperture/width profiles, optionally drifting under
// a small smooth head transform. Because every pixel's motion comes from
// a closed-form deformation, the per-frame optical flow, landmarks and
// mouth boxes are exact, and audio features are synthesized from the
// same token timeline.

#include <filesystem>
#include <optional>
#include <vector>

#include "flowface/flow_field.hpp"
#include "flowface/tensor.hpp"

namespace flowface::clips {

constexpr int kNumLandmarks = 12;    // 0..5 mouth, 6..7 eyes, 8..11 face rim
constexpr int kMouthLandmarks = 6;
constexpr int kChannels = 3;

struct ClipSpec {
  int T = 5;
  int H = 48;
  int W = 48;
  int V = 8;           // token alphabet size
  int token_rate = 5;  // frames per token
  bool head_drift = true;
  double audio_noise_sigma = 0.05;
  // When set, overrides the seed-drawn token sequence (ids in [0,V)).
  std::optional<std::vector<int>> tokens;
};

/// Seed-derived appearance. Mouth geometry is deliberately absent:
/// it is universal across identities so that lip flow depends only on
/// the spoken tokens.
struct Identity {
  double skin_r = 0, skin_g = 0, skin_b = 0;
  double face_ax = 0, face_ay = 0;      // face semi-axes, px
  double eye_dx = 0, eye_dy = 0, eye_r = 0;
  double tex_kx1 = 0, tex_ky1 = 0, tex_ph1 = 0, tex_amp1 = 0;
  double tex_kx2 = 0, tex_ky2 = 0, tex_ph2 = 0, tex_amp2 = 0;
  double lip_tint = 0, cavity_tint = 0, bg_tint = 0;
  double drift_rot_amp = 0, drift_rot_phase = 0;
  double drift_x_amp = 0, drift_x_phase = 0;
  double drift_y_amp = 0, drift_y_phase = 0;
};

struct ClipSample {
  ClipSpec spec;
  Tensor<float> frames;     // T x H x W x C, [0,1]
  Tensor<float> audio;      // T x D, D = 2V
  std::vector<int> tokens;  // one id per token slot
  std::vector<int> frame_to_token;
  Tensor<float> flow_gt;    // (T-1) x H x W x 2, (u,v) last
  Tensor<float> landmarks;  // T x L x 2, (x,y) pixel coords
  std::vector<Rect> mouth_box;  // per frame
  Identity identity;
  uint64_t seed = 0;

  int audio_dim() const { return audio.rank() == 2 ? audio.dim(1) : 0; }
  FlowField flow_at(int t) const;
};

// -- token profiles -----------------------------------------------------
// Fixed vocabulary of mouth trajectories. Token 0 is silence (mouth at
// rest). Every profile starts and ends at the rest aperture so adjacent
// tokens join without jumps. Units are fractions of the frame height /
// width; phase runs over [0,1] within a token.

double token_aperture_frac(int token_id, double phase, int alphabet);
double token_width_frac(int token_id, double phase, int alphabet);
double rest_aperture_frac();

/// Fraction of the mouth semi-axis that renders darker than the
/// transcriber threshold; couples the renderer and the oracle reader.
double cavity_extent_ratio();

/// Mouth center in canonical (rest-pose) pixel coordinates.
void mouth_center(const ClipSpec& spec, double& cx, double& cy);

/// Per-frame token id and in-token phase for frame t.
int token_index_at(const ClipSpec& spec, int t);
double token_phase_at(const ClipSpec& spec, int t);

// -- generation ----------------------------------------------------------

/// Pure function of (seed, spec). Throws ConfigError for T < 2,
/// H or W < 32, V < 1 or out-of-range token overrides.
ClipSample generate_clip(uint64_t seed, const ClipSpec& spec);

/// Binary mask (H x W) of the face interior at frame t, eroded by
/// erode_px; the region where the analytic-flow warp check applies.
Tensor<float> sprite_interior_mask(const ClipSample& clip, int t, double erode_px);

// -- persistence ----------------------------------------------------------
// A clip directory holds manifest.json plus OFTK tensor files.

std::filesystem::path write_clip(const ClipSample& clip, const std::filesystem::path& dir);
ClipSample read_clip(const std::filesystem::path& dir);

bool clips_equal(const ClipSample& a, const ClipSample& b);

}  // namespace flowface::clips
