#include "flowface/synthclip.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>

#include "flowface/tensor_io.hpp"

namespace flowface::clips {

using json = nlohmann::json;

namespace {

// Canonical layout as fractions of the frame. Mouth geometry is shared
// by every identity; only appearance varies with the seed.
constexpr double kFaceCx = 0.50, kFaceCy = 0.52;
constexpr double kMouthDy = 0.20;        // below face center, frac of H
constexpr double kMouthHalfW = 0.14;     // reference half-width, frac of W
constexpr double kRestAperture = 0.030;  // rest semi-aperture, frac of H
constexpr double kRefAperture = 0.0575;  // canonical painted semi-aperture
constexpr double kBoxMarginPx = 1.5;

// Mouth motion is a separable piecewise-linear stretch of the canonical
// face: a vertical stretch in a band around the mouth (laterally
// weighted) and a horizontal stretch of the mouth column strip. Both are
// invertible in closed form, so frames are connected by a diffeomorphism
// and the analytic flow has no occlusions to approximate.
constexpr double kBandInnerY = 0.088;  // frac of H, fully scaled
constexpr double kBandOuterY = 0.160;  // frac of H, displacement tapers to 0
constexpr double kBandInnerX = 0.165;  // frac of W
constexpr double kBandOuterX = 0.260;  // frac of W
constexpr double kSideInner = 0.150;   // lateral weight plateau, frac of W
constexpr double kSideOuter = 0.260;   // lateral weight reaches 0, frac of W

// 1-D stretch about 0: slope s inside b_i, displacement tapering to 0 at
// b_o. weight in [0,1] scales the effect.
double stretch_fwd(double d, double s, double weight, double bi, double bo) {
  const double k = (s - 1.0) * weight;
  const double ad = std::abs(d);
  if (ad <= bi) return d * (1.0 + k);
  if (ad >= bo) return d;
  const double disp = k * bi * (bo - ad) / (bo - bi);
  return d + (d > 0 ? disp : -disp);
}

double stretch_inv(double dp, double s, double weight, double bi, double bo) {
  const double k = (s - 1.0) * weight;
  const double bip = bi * (1.0 + k);
  const double adp = std::abs(dp);
  if (adp <= bip) return dp / (1.0 + k);
  if (adp >= bo) return dp;
  const double kk = k * bi / (bo - bi);  // taper: d' = d(1-kk) + kk*bo*sign
  const double ad = (adp - kk * bo) / (1.0 - kk);
  return dp > 0 ? ad : -ad;
}

double smoothstep(double a, double b, double x) {
  const double t = std::clamp((x - a) / (b - a), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Profile {
  double amp;     // aperture amplitude, frac of H
  int shape;      // 0 hump, 1 bimodal, 2 plateau, 3 sharp hump
  double wamp;    // width modulation factor
};

// Slots chosen so per-frame aperture deltas stay below ~1.8 px at
// H = 48 with token_rate >= 4; faster motion breaks the small-motion
// regime the analytic warp check and the classical estimators assume.
constexpr std::array<Profile, 8> kProfiles = {{
    {0.000, 0, 0.00},   // 0: silence
    {0.055, 0, 0.10},   // 1: open hump
    {0.042, 0, -0.06},  // 2: medium hump, narrowed
    {0.030, 1, 0.05},   // 3: double beat
    {0.055, 2, 0.00},   // 4: open-and-hold
    {0.020, 0, 0.16},   // 5: slight open, wide stretch
    {0.026, 1, -0.10},  // 6: small double beat, narrowed
    {0.048, 3, 0.08},   // 7: sharp peak
}};

double envelope(int shape, double phase) {
  const double s = std::sin(M_PI * phase);
  switch (shape) {
    case 0: return s * s;
    case 1: {
      const double b = std::sin(2.0 * M_PI * phase);
      return b * b;
    }
    case 2: return smoothstep(0.0, 0.35, phase) * (1.0 - smoothstep(0.65, 1.0, phase));
    default: return s * s * s * s;
  }
}

Profile profile_for(int token_id, int alphabet) {
  const int base = token_id % int(kProfiles.size());
  Profile p = kProfiles[size_t(base)];
  if (token_id >= int(kProfiles.size())) {
    // extended alphabets reuse the base shapes at scaled amplitude
    p.amp *= 1.0 - 0.18 * double(token_id / int(kProfiles.size()));
  }
  (void)alphabet;
  return p;
}

struct Pose {
  double theta = 0, dx = 0, dy = 0;
};

Pose pose_at(const Identity& id, bool drift, int t) {
  if (!drift) return {};
  Pose p;
  p.theta = id.drift_rot_amp * std::sin(2.0 * M_PI * t / 24.0 + id.drift_rot_phase);
  p.dx = id.drift_x_amp * std::sin(2.0 * M_PI * t / 19.0 + id.drift_x_phase);
  p.dy = id.drift_y_amp * std::sin(2.0 * M_PI * t / 16.0 + id.drift_y_phase);
  return p;
}

struct Vec2 {
  double x = 0, y = 0;
};

Vec2 to_frame(const Pose& p, double fcx, double fcy, Vec2 c) {
  const double ct = std::cos(p.theta), st = std::sin(p.theta);
  const double rx = c.x - fcx, ry = c.y - fcy;
  return {fcx + p.dx + ct * rx - st * ry, fcy + p.dy + st * rx + ct * ry};
}

Vec2 to_canonical(const Pose& p, double fcx, double fcy, Vec2 q) {
  const double ct = std::cos(p.theta), st = std::sin(p.theta);
  const double rx = q.x - fcx - p.dx, ry = q.y - fcy - p.dy;
  return {fcx + ct * rx + st * ry, fcy - st * rx + ct * ry};
}

struct MouthState {
  double a = 0, w = 0;  // current semi-axes in px
};

MouthState mouth_state(const ClipSpec& spec, const std::vector<int>& tokens, int t) {
  const int ti = std::min(t / spec.token_rate, int(tokens.size()) - 1);
  const double phase = (double(t - ti * spec.token_rate) + 0.5) / double(spec.token_rate);
  const Profile p = profile_for(tokens[size_t(ti)], spec.V);
  MouthState m;
  m.a = (kRestAperture + p.amp * envelope(p.shape, phase)) * spec.H;
  m.w = kMouthHalfW * spec.W * (1.0 + p.wamp * envelope(p.shape, phase));
  return m;
}

struct Deform {
  double mcx = 0, mcy = 0;
  double sy = 1, sx = 1;
  double biy = 0, boy = 0, bix = 0, box = 0, gi = 0, go = 0;
};

Deform deform_for(const ClipSpec& spec, const MouthState& m) {
  Deform d;
  d.mcx = kFaceCx * spec.W;
  d.mcy = kFaceCy * spec.H + kMouthDy * spec.H;
  d.sy = m.a / (kRefAperture * spec.H);
  d.sx = m.w / (kMouthHalfW * spec.W);
  d.biy = kBandInnerY * spec.H;
  d.boy = kBandOuterY * spec.H;
  d.bix = kBandInnerX * spec.W;
  d.box = kBandOuterX * spec.W;
  d.gi = kSideInner * spec.W;
  d.go = kSideOuter * spec.W;
  return d;
}

double lateral_weight(double dx, double gi, double go) {
  const double a = std::abs(dx);
  if (a <= gi) return 1.0;
  if (a >= go) return 0.0;
  return (go - a) / (go - gi);
}

Vec2 deform_fwd(const Deform& d, Vec2 c) {
  const double dx = c.x - d.mcx, dy = c.y - d.mcy;
  const double xp = stretch_fwd(dx, d.sx, 1.0, d.bix, d.box);
  const double g = lateral_weight(dx, d.gi, d.go);
  const double yp = stretch_fwd(dy, d.sy, g, d.biy, d.boy);
  return {d.mcx + xp, d.mcy + yp};
}

Vec2 deform_inv(const Deform& d, Vec2 p) {
  const double dxp = p.x - d.mcx, dyp = p.y - d.mcy;
  const double dx = stretch_inv(dxp, d.sx, 1.0, d.bix, d.box);
  const double g = lateral_weight(dx, d.gi, d.go);
  const double dy = stretch_inv(dyp, d.sy, g, d.biy, d.boy);
  return {d.mcx + dx, d.mcy + dy};
}

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

// alpha for an ellipse with semi-axes (A,B), anti-aliased over ~1 px
double ellipse_alpha(double dx, double dy, double A, double B) {
  const double ex = dx / A, ey = dy / B;
  const double e = std::sqrt(ex * ex + ey * ey);
  if (e < 1e-12) return 1.0;
  const double grad = std::sqrt(ex * ex / (A * A) + ey * ey / (B * B)) / e;
  const double dist_px = (e - 1.0) / std::max(grad, 1e-9);
  return std::clamp(0.5 - dist_px, 0.0, 1.0);
}

Rgb shade_pixel(const ClipSpec& spec, const Identity& id, const Pose& pose,
                const MouthState& m, Vec2 p) {
  const double fcx = kFaceCx * spec.W, fcy = kFaceCy * spec.H;
  const Vec2 c = to_canonical(pose, fcx, fcy, p);

  // background is static and stays light
  const double gbg = p.y / double(spec.H);
  Rgb col = {0.87 + 0.08 * gbg + id.bg_tint, 0.89 + 0.07 * gbg + id.bg_tint,
             0.91 + 0.06 * gbg + id.bg_tint};

  const double dxf = c.x - fcx, dyf = c.y - fcy;
  const double face_alpha = ellipse_alpha(dxf, dyf, id.face_ax, id.face_ay);
  if (face_alpha > 0) {
    const double ef2 = (dxf / id.face_ax) * (dxf / id.face_ax) +
                       (dyf / id.face_ay) * (dyf / id.face_ay);
    const double shade = 1.0 - 0.16 * ef2;
    const double tex =
        id.tex_amp1 * std::sin(id.tex_kx1 * dxf + id.tex_ky1 * dyf + id.tex_ph1) +
        id.tex_amp2 * std::sin(id.tex_kx2 * dxf + id.tex_ky2 * dyf + id.tex_ph2);
    Rgb skin = {id.skin_r * shade + tex, id.skin_g * shade + tex, id.skin_b * shade + tex};
    col = mix(col, skin, face_alpha);

    for (int side = -1; side <= 1; side += 2) {
      const double ex = c.x - (fcx + side * id.eye_dx);
      const double ey = c.y - (fcy - id.eye_dy);
      const double ea = ellipse_alpha(ex, ey, id.eye_r, id.eye_r * 0.8);
      if (ea > 0) col = mix(col, {0.10, 0.095, 0.12}, ea * face_alpha);
    }

    const double mcx = kFaceCx * spec.W, mcy = fcy + kMouthDy * spec.H;
    const double mdx = c.x - mcx, mdy = c.y - mcy;
    const double ma = ellipse_alpha(mdx, mdy, m.w, m.a);
    if (ma > 0) {
      const double rr = std::sqrt((mdx / m.w) * (mdx / m.w) + (mdy / m.a) * (mdy / m.a));
      const double s = smoothstep(0.55, 0.95, rr);
      const Rgb cavity = {0.085 + id.cavity_tint, 0.055 + id.cavity_tint,
                          0.065 + id.cavity_tint};
      const Rgb lip = {0.55 + id.lip_tint, 0.34 + id.lip_tint, 0.33 + id.lip_tint};
      // the lip ring fades into the skin so the aperture sweep does not
      // occlude or reveal high-contrast pixels
      const double fade = 1.0 - smoothstep(0.78, 1.0, rr);
      col = mix(col, mix(cavity, lip, s), ma * face_alpha * fade);
    }
  }
  col.r = std::clamp(col.r, 0.0, 1.0);
  col.g = std::clamp(col.g, 0.0, 1.0);
  col.b = std::clamp(col.b, 0.0, 1.0);
  return col;
}

Identity draw_identity(Rng& rng) {
  Identity id;
  id.skin_r = rng.uniform(0.66, 0.78);
  id.skin_g = rng.uniform(0.54, 0.63);
  id.skin_b = rng.uniform(0.46, 0.54);
  id.face_ax = 0;  // set later, needs spec dims
  id.face_ay = 0;
  id.eye_dx = 0;
  id.eye_dy = 0;
  id.eye_r = 0;
  id.tex_kx1 = rng.uniform(0.45, 0.75);
  id.tex_ky1 = rng.uniform(0.25, 0.55);
  id.tex_ph1 = rng.uniform(0.0, 2.0 * M_PI);
  id.tex_amp1 = rng.uniform(0.030, 0.045);
  id.tex_kx2 = rng.uniform(0.20, 0.45);
  id.tex_ky2 = rng.uniform(0.50, 0.80);
  id.tex_ph2 = rng.uniform(0.0, 2.0 * M_PI);
  id.tex_amp2 = rng.uniform(0.025, 0.035);
  id.lip_tint = rng.uniform(-0.03, 0.03);
  id.cavity_tint = rng.uniform(-0.015, 0.015);
  id.bg_tint = rng.uniform(-0.02, 0.02);
  id.drift_rot_amp = rng.uniform(0.004, 0.008);
  id.drift_rot_phase = rng.uniform(0.0, 2.0 * M_PI);
  id.drift_x_amp = rng.uniform(0.35, 0.70);
  id.drift_x_phase = rng.uniform(0.0, 2.0 * M_PI);
  id.drift_y_amp = rng.uniform(0.35, 0.70);
  id.drift_y_phase = rng.uniform(0.0, 2.0 * M_PI);
  return id;
}

double max_aperture_px(const ClipSpec& spec) {
  double amp = 0;
  for (const auto& p : kProfiles) amp = std::max(amp, p.amp);
  return (kRestAperture + amp) * spec.H;
}

double max_halfwidth_px(const ClipSpec& spec) {
  double w = 0;
  for (const auto& p : kProfiles) w = std::max(w, 1.0 + std::abs(p.wamp));
  return kMouthHalfW * spec.W * w;
}

Rect mouth_box_at(const ClipSpec& spec, const Identity& id, bool drift, int t) {
  const Pose pose = pose_at(id, drift, t);
  const double fcx = kFaceCx * spec.W, fcy = kFaceCy * spec.H;
  const Vec2 mc = to_frame(pose, fcx, fcy, {kFaceCx * spec.W, fcy + kMouthDy * spec.H});
  const double A = max_halfwidth_px(spec), B = max_aperture_px(spec);
  const double ct = std::cos(pose.theta), st = std::sin(pose.theta);
  const double ex = std::sqrt(A * A * ct * ct + B * B * st * st) + kBoxMarginPx;
  const double ey = std::sqrt(A * A * st * st + B * B * ct * ct) + kBoxMarginPx;
  Rect r{int(std::floor(mc.x - ex)), int(std::floor(mc.y - ey)),
         int(std::ceil(mc.x + ex)), int(std::ceil(mc.y + ey))};
  return r.clamped(spec.W, spec.H);
}

}  // namespace

double rest_aperture_frac() { return kRestAperture; }
double cavity_extent_ratio() { return 0.81; }

double token_aperture_frac(int token_id, double phase, int alphabet) {
  const Profile p = profile_for(token_id, alphabet);
  return kRestAperture + p.amp * envelope(p.shape, phase);
}

double token_width_frac(int token_id, double phase, int alphabet) {
  const Profile p = profile_for(token_id, alphabet);
  return kMouthHalfW * (1.0 + p.wamp * envelope(p.shape, phase));
}

void mouth_center(const ClipSpec& spec, double& cx, double& cy) {
  cx = kFaceCx * spec.W;
  cy = kFaceCy * spec.H + kMouthDy * spec.H;
}

int token_index_at(const ClipSpec& spec, int t) { return t / spec.token_rate; }

double token_phase_at(const ClipSpec& spec, int t) {
  return (double(t % spec.token_rate) + 0.5) / double(spec.token_rate);
}

FlowField ClipSample::flow_at(int t) const {
  FlowField f(spec.H, spec.W);
  for (int y = 0; y < spec.H; ++y)
    for (int x = 0; x < spec.W; ++x) {
      f.u.at(y, x) = flow_gt.at(t, y, x, 0);
      f.v.at(y, x) = flow_gt.at(t, y, x, 1);
    }
  return f;
}

ClipSample generate_clip(uint64_t seed, const ClipSpec& spec) {
  require_config(spec.T >= 2, "clip spec: T must be >= 2");
  require_config(spec.H >= 32 && spec.W >= 32, "clip spec: H and W must be >= 32");
  require_config(spec.V >= 1 && spec.V <= 64, "clip spec: V out of range");
  require_config(spec.token_rate >= 1, "clip spec: token_rate must be >= 1");

  Rng rng(Rng::mix(seed, 0x636c6970));
  ClipSample clip;
  clip.spec = spec;
  clip.seed = seed;
  clip.identity = draw_identity(rng);
  clip.identity.face_ax = rng.uniform(0.35, 0.40) * spec.W;
  clip.identity.face_ay = rng.uniform(0.41, 0.46) * spec.H;
  clip.identity.eye_dx = rng.uniform(0.14, 0.18) * spec.W;
  clip.identity.eye_dy = rng.uniform(0.12, 0.16) * spec.H;
  clip.identity.eye_r = rng.uniform(0.040, 0.055) * spec.W;

  const int n_tokens = (spec.T + spec.token_rate - 1) / spec.token_rate;
  if (spec.tokens) {
    require_config(int(spec.tokens->size()) >= n_tokens,
                   "clip spec: token override shorter than the clip");
    for (int v : *spec.tokens)
      require_config(v >= 0 && v < spec.V, "clip spec: token id out of range");
    clip.tokens = *spec.tokens;
    clip.tokens.resize(size_t(n_tokens));
  } else {
    for (int i = 0; i < n_tokens; ++i) clip.tokens.push_back(rng.uniform_int(spec.V));
  }
  clip.frame_to_token.resize(size_t(spec.T));
  for (int t = 0; t < spec.T; ++t)
    clip.frame_to_token[size_t(t)] = std::min(t / spec.token_rate, n_tokens - 1);

  const double fcx = kFaceCx * spec.W, fcy = kFaceCy * spec.H;
  const double mcx = fcx, mcy = fcy + kMouthDy * spec.H;

  // frames, 2x supersampled
  clip.frames = Tensor<float>({spec.T, spec.H, spec.W, kChannels});
  std::vector<MouthState> mouth(size_t(spec.T));
  std::vector<Pose> poses(size_t(spec.T));
  for (int t = 0; t < spec.T; ++t) {
    mouth[size_t(t)] = mouth_state(spec, clip.tokens, t);
    poses[size_t(t)] = pose_at(clip.identity, spec.head_drift, t);
    for (int y = 0; y < spec.H; ++y)
      for (int x = 0; x < spec.W; ++x) {
        Rgb acc;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) {
            const Vec2 p{double(x) + 0.25 + 0.5 * sx, double(y) + 0.25 + 0.5 * sy};
            const Rgb c = shade_pixel(spec, clip.identity, poses[size_t(t)],
                                      mouth[size_t(t)], p);
            acc.r += c.r;
            acc.g += c.g;
            acc.b += c.b;
          }
        clip.frames.at(t, y, x, 0) = float(acc.r / 4.0);
        clip.frames.at(t, y, x, 1) = float(acc.g / 4.0);
        clip.frames.at(t, y, x, 2) = float(acc.b / 4.0);
      }
  }

  // analytic flow: for each pixel of frame t+1, where was it in frame t
  clip.flow_gt = Tensor<float>({spec.T - 1, spec.H, spec.W, 2});
  for (int t = 0; t + 1 < spec.T; ++t) {
    const Pose& p0 = poses[size_t(t)];
    const Pose& p1 = poses[size_t(t + 1)];
    const MouthState& m0 = mouth[size_t(t)];
    const MouthState& m1 = mouth[size_t(t + 1)];
    for (int y = 0; y < spec.H; ++y)
      for (int x = 0; x < spec.W; ++x) {
        const Vec2 q{double(x), double(y)};
        const Vec2 c1 = to_canonical(p1, fcx, fcy, q);
        const double mdx = c1.x - mcx, mdy = c1.y - mcy;
        const double em = (mdx / m1.w) * (mdx / m1.w) + (mdy / m1.a) * (mdy / m1.a);
        const double fdx = c1.x - fcx, fdy = c1.y - fcy;
        const double ef = (fdx / clip.identity.face_ax) * (fdx / clip.identity.face_ax) +
                          (fdy / clip.identity.face_ay) * (fdy / clip.identity.face_ay);
        Vec2 src = q;
        if (em <= 1.0) {
          const Vec2 c0{mcx + mdx * (m0.w / m1.w), mcy + mdy * (m0.a / m1.a)};
          src = to_frame(p0, fcx, fcy, c0);
        } else if (ef <= 1.0) {
          src = to_frame(p0, fcx, fcy, c1);
        }
        clip.flow_gt.at(t, y, x, 0) = float(src.x - q.x);
        clip.flow_gt.at(t, y, x, 1) = float(src.y - q.y);
      }
  }

  // landmarks: 6 mouth rim points, 2 eyes, 4 face rim points
  clip.landmarks = Tensor<float>({spec.T, kNumLandmarks, 2});
  for (int t = 0; t < spec.T; ++t) {
    const Pose& pose = poses[size_t(t)];
    const MouthState& m = mouth[size_t(t)];
    auto put = [&](int idx, Vec2 c) {
      const Vec2 q = to_frame(pose, fcx, fcy, c);
      clip.landmarks.at(t, idx, 0) = float(q.x);
      clip.landmarks.at(t, idx, 1) = float(q.y);
    };
    for (int j = 0; j < kMouthLandmarks; ++j) {
      const double ang = 2.0 * M_PI * j / kMouthLandmarks;
      put(j, {mcx + m.w * std::cos(ang), mcy + m.a * std::sin(ang)});
    }
    put(6, {fcx - clip.identity.eye_dx, fcy - clip.identity.eye_dy});
    put(7, {fcx + clip.identity.eye_dx, fcy - clip.identity.eye_dy});
    put(8, {fcx + clip.identity.face_ax, fcy});
    put(9, {fcx, fcy + clip.identity.face_ay});
    put(10, {fcx - clip.identity.face_ax, fcy});
    put(11, {fcx, fcy - clip.identity.face_ay});
  }

  for (int t = 0; t < spec.T; ++t)
    clip.mouth_box.push_back(mouth_box_at(spec, clip.identity, spec.head_drift, t));

  // audio: [one-hot * envelope level ; one-hot * cos(pi*phase)] + noise
  const int D = 2 * spec.V;
  clip.audio = Tensor<float>({spec.T, D});
  for (int t = 0; t < spec.T; ++t) {
    const int tok = clip.tokens[size_t(clip.frame_to_token[size_t(t)])];
    const double phase = token_phase_at(spec, t);
    const Profile pr = profile_for(tok, spec.V);
    const double env = envelope(pr.shape, phase);
    for (int d = 0; d < D; ++d) {
      double v = 0;
      if (d == tok) v = 0.25 + 0.75 * env;
      if (d == spec.V + tok) v = std::cos(M_PI * phase);
      const double noise =
          std::clamp(rng.normal() * spec.audio_noise_sigma, -0.2, 0.2);
      clip.audio.at(t, d) = float(v + noise);
    }
  }

  return clip;
}

Tensor<float> sprite_interior_mask(const ClipSample& clip, int t, double erode_px) {
  const ClipSpec& spec = clip.spec;
  const Pose pose = pose_at(clip.identity, spec.head_drift, t);
  const double fcx = kFaceCx * spec.W, fcy = kFaceCy * spec.H;
  const double ax = std::max(clip.identity.face_ax - erode_px, 1.0);
  const double ay = std::max(clip.identity.face_ay - erode_px, 1.0);
  Tensor<float> mask({spec.H, spec.W});
  for (int y = 0; y < spec.H; ++y)
    for (int x = 0; x < spec.W; ++x) {
      const Vec2 c = to_canonical(pose, fcx, fcy, {double(x), double(y)});
      const double dx = c.x - fcx, dy = c.y - fcy;
      if ((dx / ax) * (dx / ax) + (dy / ay) * (dy / ay) <= 1.0) mask.at(y, x) = 1.0f;
    }
  return mask;
}

namespace {

json identity_to_json(const Identity& id) {
  return json{{"skin_r", id.skin_r}, {"skin_g", id.skin_g}, {"skin_b", id.skin_b},
              {"face_ax", id.face_ax}, {"face_ay", id.face_ay},
              {"eye_dx", id.eye_dx}, {"eye_dy", id.eye_dy}, {"eye_r", id.eye_r},
              {"tex_kx1", id.tex_kx1}, {"tex_ky1", id.tex_ky1},
              {"tex_ph1", id.tex_ph1}, {"tex_amp1", id.tex_amp1},
              {"tex_kx2", id.tex_kx2}, {"tex_ky2", id.tex_ky2},
              {"tex_ph2", id.tex_ph2}, {"tex_amp2", id.tex_amp2},
              {"lip_tint", id.lip_tint}, {"cavity_tint", id.cavity_tint},
              {"bg_tint", id.bg_tint},
              {"drift_rot_amp", id.drift_rot_amp}, {"drift_rot_phase", id.drift_rot_phase},
              {"drift_x_amp", id.drift_x_amp}, {"drift_x_phase", id.drift_x_phase},
              {"drift_y_amp", id.drift_y_amp}, {"drift_y_phase", id.drift_y_phase}};
}

Identity identity_from_json(const json& j) {
  Identity id;
  id.skin_r = j.at("skin_r");
  id.skin_g = j.at("skin_g");
  id.skin_b = j.at("skin_b");
  id.face_ax = j.at("face_ax");
  id.face_ay = j.at("face_ay");
  id.eye_dx = j.at("eye_dx");
  id.eye_dy = j.at("eye_dy");
  id.eye_r = j.at("eye_r");
  id.tex_kx1 = j.at("tex_kx1");
  id.tex_ky1 = j.at("tex_ky1");
  id.tex_ph1 = j.at("tex_ph1");
  id.tex_amp1 = j.at("tex_amp1");
  id.tex_kx2 = j.at("tex_kx2");
  id.tex_ky2 = j.at("tex_ky2");
  id.tex_ph2 = j.at("tex_ph2");
  id.tex_amp2 = j.at("tex_amp2");
  id.lip_tint = j.at("lip_tint");
  id.cavity_tint = j.at("cavity_tint");
  id.bg_tint = j.at("bg_tint");
  id.drift_rot_amp = j.at("drift_rot_amp");
  id.drift_rot_phase = j.at("drift_rot_phase");
  id.drift_x_amp = j.at("drift_x_amp");
  id.drift_x_phase = j.at("drift_x_phase");
  id.drift_y_amp = j.at("drift_y_amp");
  id.drift_y_phase = j.at("drift_y_phase");
  return id;
}

void check_dims(const Tensor<float>& t, const std::vector<int>& want,
                const std::string& field, const std::filesystem::path& dir) {
  require_format(t.shape() == want,
                 dir.string() + ": field '" + field + "' has shape " +
                     shape_str(t.shape()) + ", manifest implies " + shape_str(want));
}

}  // namespace

std::filesystem::path write_clip(const ClipSample& clip, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require_config(!ec, "cannot create clip directory " + dir.string());

  write_oftk(dir / "frames.oftk", clip.frames);
  write_oftk(dir / "audio.oftk", clip.audio);
  write_oftk(dir / "flow_gt.oftk", clip.flow_gt);
  write_oftk(dir / "landmarks.oftk", clip.landmarks);
  Tensor<float> boxes({int(clip.mouth_box.size()), 4});
  for (size_t t = 0; t < clip.mouth_box.size(); ++t) {
    boxes.at(int(t), 0) = float(clip.mouth_box[t].x0);
    boxes.at(int(t), 1) = float(clip.mouth_box[t].y0);
    boxes.at(int(t), 2) = float(clip.mouth_box[t].x1);
    boxes.at(int(t), 3) = float(clip.mouth_box[t].y1);
  }
  write_oftk(dir / "mouth_boxes.oftk", boxes);

  json man;
  man["format"] = "flowface-clip-v1";
  man["seed"] = clip.seed;
  man["spec"] = {{"T", clip.spec.T},       {"H", clip.spec.H},
                 {"W", clip.spec.W},       {"V", clip.spec.V},
                 {"token_rate", clip.spec.token_rate},
                 {"head_drift", clip.spec.head_drift},
                 {"audio_noise_sigma", clip.spec.audio_noise_sigma}};
  man["tokens"] = clip.tokens;
  man["frame_to_token"] = clip.frame_to_token;
  man["identity"] = identity_to_json(clip.identity);
  man["files"] = {{"frames", "frames.oftk"},
                  {"audio", "audio.oftk"},
                  {"flow_gt", "flow_gt.oftk"},
                  {"landmarks", "landmarks.oftk"},
                  {"mouth_boxes", "mouth_boxes.oftk"}};

  const auto manifest_path = dir / "manifest.json";
  std::ofstream os(manifest_path);
  require_config(bool(os), "cannot write " + manifest_path.string());
  os << man.dump(2) << "\n";
  return manifest_path;
}

ClipSample read_clip(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  require_format(bool(is), "missing manifest " + manifest_path.string());
  json man;
  try {
    is >> man;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": invalid JSON: " + e.what());
  }

  ClipSample clip;
  try {
    const json& s = man.at("spec");
    clip.spec.T = s.at("T");
    clip.spec.H = s.at("H");
    clip.spec.W = s.at("W");
    clip.spec.V = s.at("V");
    clip.spec.token_rate = s.at("token_rate");
    clip.spec.head_drift = s.at("head_drift");
    clip.spec.audio_noise_sigma = s.at("audio_noise_sigma");
    clip.seed = man.at("seed");
    clip.tokens = man.at("tokens").get<std::vector<int>>();
    clip.frame_to_token = man.at("frame_to_token").get<std::vector<int>>();
    clip.identity = identity_from_json(man.at("identity"));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": missing or bad field: " + e.what());
  }

  auto file_of = [&](const char* key) {
    try {
      return dir / man.at("files").at(key).get<std::string>();
    } catch (const json::exception&) {
      throw FormatError(manifest_path.string() + ": files entry '" + key + "' missing");
    }
  };
  auto read_field = [&](const char* key) {
    const auto p = file_of(key);
    require_format(std::filesystem::exists(p),
                   dir.string() + ": manifest references missing tensor file " +
                       p.filename().string());
    return read_oftk(p);
  };

  const ClipSpec& sp = clip.spec;
  clip.frames = read_field("frames");
  check_dims(clip.frames, {sp.T, sp.H, sp.W, kChannels}, "frames", dir);
  clip.audio = read_field("audio");
  check_dims(clip.audio, {sp.T, 2 * sp.V}, "audio", dir);
  clip.flow_gt = read_field("flow_gt");
  check_dims(clip.flow_gt, {sp.T - 1, sp.H, sp.W, 2}, "flow_gt", dir);
  clip.landmarks = read_field("landmarks");
  check_dims(clip.landmarks, {sp.T, kNumLandmarks, 2}, "landmarks", dir);
  Tensor<float> boxes = read_field("mouth_boxes");
  check_dims(boxes, {sp.T, 4}, "mouth_boxes", dir);
  for (int t = 0; t < sp.T; ++t)
    clip.mouth_box.push_back(Rect{int(boxes.at(t, 0)), int(boxes.at(t, 1)),
                                  int(boxes.at(t, 2)), int(boxes.at(t, 3))});
  return clip;
}

bool clips_equal(const ClipSample& a, const ClipSample& b) {
  auto teq = [](const Tensor<float>& x, const Tensor<float>& y) {
    if (!x.same_shape(y)) return false;
    for (size_t i = 0; i < x.numel(); ++i)
      if (x[i] != y[i]) return false;
    return true;
  };
  if (!(teq(a.frames, b.frames) && teq(a.audio, b.audio) && teq(a.flow_gt, b.flow_gt) &&
        teq(a.landmarks, b.landmarks)))
    return false;
  if (a.tokens != b.tokens || a.frame_to_token != b.frame_to_token) return false;
  if (a.mouth_box.size() != b.mouth_box.size()) return false;
  for (size_t i = 0; i < a.mouth_box.size(); ++i) {
    const Rect &r = a.mouth_box[i], &s = b.mouth_box[i];
    if (r.x0 != s.x0 || r.y0 != s.y0 || r.x1 != s.x1 || r.y1 != s.y1) return false;
  }
  return true;
}

}  // namespace flowface::clips
