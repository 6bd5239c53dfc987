#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/LU>

#include "gcskel/cloud.hpp"
#include "gcskel/quaternion_chart.hpp"
#include "gcskel/register.hpp"
#include "gcskel/types.hpp"

// Synthetic generalized cylinders with known per-slice similarity
// transforms, and the registration experiments run on them.
//
// Axis: (C1 cos t, C2 sin t, C3 t), t in [0, 2 pi]. Each axis sample k
// carries a Frenet frame R_k = [N B T] and a scale s_k = offset + A sin(t + phase).
// Slice k point = center_k + s_k R_k (c, 0) for contour point c; its normal is
// R_k (outward contour normal, 0).

namespace gcskel {

enum class SamplingMode { regular, random };

inline std::string_view to_string(SamplingMode m) {
  return m == SamplingMode::regular ? "regular" : "random";
}

inline SamplingMode sampling_from_string(std::string_view s) {
  if (s == "regular") return SamplingMode::regular;
  if (s == "random") return SamplingMode::random;
  throw InvalidArgument("unknown sampling mode: " + std::string(s));
}

struct GCSpec {
  double c1 = 10.0, c2 = 10.0, c3 = 10.0;
  double t_max = 2.0 * kPi;
  double scale_offset = 2.0;
  double scale_amplitude = 0.5;  // (0, offset - 1] keeps the scale >= 1
  double scale_phase = 0.0;
  std::array<double, 8> contour_radii{2, 2, 2, 2, 2, 2, 2, 2};
  bool circular_contour = false;  // exact circle of radius contour_radii[0]
  std::size_t axis_samples = 100;
  std::size_t contour_samples = 64;
  SamplingMode sampling = SamplingMode::regular;
  std::uint64_t seed = 0;
};

/// Draws C1..C3 in (0, 50), contour radii in (1, 3), offset in [1.5, 3],
/// amplitude in (0, offset - 1] and the phase in [0, 2 pi).
inline GCSpec random_gc_spec(std::mt19937_64& rng,
                             SamplingMode sampling = SamplingMode::regular) {
  std::uniform_real_distribution<double> coef(0.5, 49.5), radius(1.0, 3.0),
      offset(1.5, 3.0), unit(0.0, 1.0), phase(0.0, 2.0 * kPi);
  GCSpec s;
  s.c1 = coef(rng);
  s.c2 = coef(rng);
  s.c3 = coef(rng);
  for (double& r : s.contour_radii) r = radius(rng);
  s.scale_offset = offset(rng);
  s.scale_amplitude = (s.scale_offset - 1.0) * (0.05 + 0.95 * unit(rng));
  s.scale_phase = phase(rng);
  s.sampling = sampling;
  s.seed = rng();
  return s;
}

/// Closed cubic interpolating spline through equally spaced control points
/// (uniform knots, periodic end conditions). Parameter u in [0, n).
class PeriodicSpline {
 public:
  explicit PeriodicSpline(std::vector<Eigen::Vector2d> ctrl) : ctrl_(std::move(ctrl)) {
    const int n = int(ctrl_.size());
    if (n < 3) throw InvalidArgument("periodic spline needs >= 3 control points");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd rhs(n, 2);
    for (int i = 0; i < n; ++i) {
      a(i, (i + n - 1) % n) += 1.0;
      a(i, i) += 4.0;
      a(i, (i + 1) % n) += 1.0;
      rhs.row(i) = 6.0 * (ctrl_[(i + 1) % n] - 2.0 * ctrl_[i] + ctrl_[(i + n - 1) % n]).transpose();
    }
    m_ = a.partialPivLu().solve(rhs);
  }

  std::size_t size() const { return ctrl_.size(); }

  Eigen::Vector2d value(double u) const {
    const auto [i, j, t] = locate(u);
    const double s = 1.0 - t;
    return s * ctrl_[i] + t * ctrl_[j] +
           ((s * s * s - s) * m_.row(i).transpose() + (t * t * t - t) * m_.row(j).transpose()) / 6.0;
  }

  Eigen::Vector2d derivative(double u) const {
    const auto [i, j, t] = locate(u);
    const double s = 1.0 - t;
    return ctrl_[j] - ctrl_[i] +
           ((1.0 - 3.0 * s * s) * m_.row(i).transpose() + (3.0 * t * t - 1.0) * m_.row(j).transpose()) / 6.0;
  }

  /// Outward unit normal for a counter-clockwise curve.
  Eigen::Vector2d normal(double u) const {
    const Eigen::Vector2d d = derivative(u);
    return Eigen::Vector2d(d.y(), -d.x()).normalized();
  }

 private:
  struct Loc {
    std::size_t i, j;
    double t;
  };
  Loc locate(double u) const {
    const double n = double(ctrl_.size());
    u = std::fmod(u, n);
    if (u < 0.0) u += n;
    std::size_t i = std::size_t(u);
    if (i >= ctrl_.size()) i = ctrl_.size() - 1;
    return {i, (i + 1) % ctrl_.size(), u - double(i)};
  }

  std::vector<Eigen::Vector2d> ctrl_;
  Eigen::MatrixXd m_;  // second derivatives at the knots, n x 2
};

/// Control points at angles k pi / 4.
inline PeriodicSpline contour_spline(const std::array<double, 8>& radii) {
  std::vector<Eigen::Vector2d> ctrl;
  for (std::size_t k = 0; k < radii.size(); ++k) {
    const double a = double(k) * kPi / 4.0;
    ctrl.emplace_back(radii[k] * std::cos(a), radii[k] * std::sin(a));
  }
  return PeriodicSpline(std::move(ctrl));
}

struct GroundTruth {
  std::vector<double> t;
  std::vector<Vec3> centers;
  std::vector<Mat3> rotations;  // columns: normal, binormal, tangent
  std::vector<double> scales;
  std::vector<std::size_t> owner;  // per point: axis sample index
  std::vector<char> frame_fallback;

  /// Similarity (R, s, t) with slice `from` ~ s R slice `to` + t.
  RegistrationParams relative(std::size_t from, std::size_t to) const {
    RegistrationParams p;
    p.rotation = rotations[from] * rotations[to].transpose();
    p.scale = scales[from] / scales[to];
    p.translation = centers[from] - p.scale * p.rotation * centers[to];
    return p;
  }
  Vec3 tangent(std::size_t k) const { return rotations[k].col(2); }
};

struct GeneratedGC {
  PointCloud cloud;
  GroundTruth truth;

  IndexSet slice(std::size_t k) const {
    IndexSet out;
    for (std::size_t i = 0; i < truth.owner.size(); ++i)
      if (truth.owner[i] == k) out.push_back(i);
    return out;
  }
};

namespace detail {

// Frenet frame [N B T] of the helix; parallel transport of `prev` when the
// curvature vanishes.
inline Mat3 helix_frame(const GCSpec& s, double t, const Mat3* prev, bool& fallback) {
  const Vec3 d1(-s.c1 * std::sin(t), s.c2 * std::cos(t), s.c3);
  const Vec3 d2(-s.c1 * std::cos(t), -s.c2 * std::sin(t), 0.0);
  const Vec3 tan = d1.normalized();
  const Vec3 b = d1.cross(d2);
  Mat3 r;
  if (b.norm() > 1e-9 * d1.squaredNorm()) {
    const Vec3 bn = b.normalized();
    r.col(0) = bn.cross(tan);
    r.col(1) = bn;
    r.col(2) = tan;
    fallback = false;
    return r;
  }
  fallback = true;
  Vec3 n;
  if (prev) {
    n = prev->col(0) - prev->col(0).dot(tan) * tan;
  } else {
    n = std::abs(tan.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    n -= n.dot(tan) * tan;
  }
  n.normalize();
  r.col(0) = n;
  r.col(1) = tan.cross(n);
  r.col(2) = tan;
  return r;
}

}  // namespace detail

inline GeneratedGC generate_gc(const GCSpec& spec) {
  if (spec.axis_samples < 2) throw InvalidArgument("axis_samples must be >= 2");
  if (spec.contour_samples < 8) throw InvalidArgument("contour_samples must be >= 8");
  if (spec.scale_offset - spec.scale_amplitude < 1.0 - 1e-12)
    throw InvalidArgument("scale function must stay >= 1");
  const PeriodicSpline contour = contour_spline(spec.contour_radii);
  const double period = double(contour.size());
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> upar(0.0, period);

  GeneratedGC out;
  GroundTruth& gt = out.truth;
  std::vector<OrientedPoint> pts;
  for (std::size_t k = 0; k < spec.axis_samples; ++k) {
    const double t = spec.t_max * double(k) / double(spec.axis_samples - 1);
    bool fb = false;
    const Mat3 r = detail::helix_frame(spec, t, k ? &gt.rotations.back() : nullptr, fb);
    const Vec3 c(spec.c1 * std::cos(t), spec.c2 * std::sin(t), spec.c3 * t);
    const double sc = spec.scale_offset + spec.scale_amplitude * std::sin(t + spec.scale_phase);
    gt.t.push_back(t);
    gt.centers.push_back(c);
    gt.rotations.push_back(r);
    gt.scales.push_back(sc);
    gt.frame_fallback.push_back(fb);
    for (std::size_t j = 0; j < spec.contour_samples; ++j) {
      const double u = spec.sampling == SamplingMode::regular
                           ? period * double(j) / double(spec.contour_samples)
                           : upar(rng);
      Eigen::Vector2d p, n;
      if (spec.circular_contour) {
        const double a = 2.0 * kPi * u / period;
        n = Eigen::Vector2d(std::cos(a), std::sin(a));
        p = spec.contour_radii[0] * n;
      } else {
        p = contour.value(u);
        n = contour.normal(u);
      }
      pts.push_back({c + sc * r * Vec3(p.x(), p.y(), 0.0),
                     (r * Vec3(n.x(), n.y(), 0.0)).normalized()});
      gt.owner.push_back(k);
    }
  }
  out.cloud = PointCloud(std::move(pts), true);
  return out;
}

struct TrialRecord {
  std::size_t trial = 0;
  SamplingMode sampling = SamplingMode::regular;
  bool normals = true;
  bool failed = false;
  double rot_err = 0.0;
  double plane_err_deg = 0.0;
  double reg_cost_deg = 0.0;
  double scale_err = 0.0;
};

/// Angle between unoriented plane normals, degrees in [0, 90].
inline double plane_angle_deg(const Vec3& a, const Vec3& b) {
  const double ang = rad2deg(angle_between(a, b));
  return std::min(ang, 180.0 - ang);
}

/// Registers the source slice (X) against the destination slices (Y) and
/// scores the result against the slice `truth_slice` of the ground truth.
inline TrialRecord run_registration_trial(const GeneratedGC& gc,
                                          std::size_t source,
                                          const std::vector<std::size_t>& dest,
                                          std::size_t truth_slice,
                                          bool use_normals,
                                          RegConfig cfg = {}) {
  if (dest.empty()) throw InvalidArgument("destination slice list is empty");
  for (std::size_t d : dest)
    if (d == source) throw InvalidArgument("source and destination slices must differ");
  IndexSet yi;
  for (std::size_t d : dest) {
    const auto s = gc.slice(d);
    yi.insert(yi.end(), s.begin(), s.end());
  }
  const PointCloud x = gc.cloud.subset(gc.slice(source));
  const PointCloud y = gc.cloud.subset(yi);
  cfg.use_normals = use_normals;
  TrialRecord rec;
  rec.normals = use_normals;
  try {
    const auto rep = register_clouds(x, y, cfg);
    const auto truth = gc.truth.relative(source, truth_slice);
    rec.rot_err = rotation_error(rep.params.rotation, truth.rotation);
    const Vec3 est_normal = rep.params.rotation.transpose() * gc.truth.tangent(source);
    rec.plane_err_deg = plane_angle_deg(est_normal, gc.truth.tangent(truth_slice));
    rec.reg_cost_deg = rep.mean_best_match_angle;
    rec.scale_err = std::abs(rep.params.scale / truth.scale - 1.0);
  } catch (const Error&) {
    rec.failed = true;
  }
  return rec;
}

inline TrialRecord run_registration_trial(const GeneratedGC& gc, std::size_t source,
                                          std::size_t dest, bool use_normals,
                                          const RegConfig& cfg = {}) {
  return run_registration_trial(gc, source, std::vector<std::size_t>{dest}, dest,
                                use_normals, cfg);
}

/// Per-trial generator derived from (seed, trial index).
inline std::mt19937_64 trial_rng(std::uint64_t seed, std::size_t trial) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(trial), std::uint32_t(std::uint64_t(trial) >> 32)};
  return std::mt19937_64(seq);
}

struct TrialOptions {
  std::size_t axis_samples = 100;
  std::size_t contour_samples = 64;
  std::size_t max_offset = 3;  // destination centre is 1..max_offset slices away
  std::size_t dest_width = 1;  // slices in the destination band (odd)
  RegConfig reg{};
};

struct PairedTrial {
  TrialRecord with_normals, without_normals;
};

inline std::vector<std::size_t> slice_band(std::size_t centre, std::size_t width) {
  std::vector<std::size_t> out;
  const std::size_t half = width / 2;
  for (std::size_t k = centre - half; k < centre - half + width; ++k) out.push_back(k);
  return out;
}

/// One random GC per trial; the same source slice and destination band are
/// registered with and without the normal term. The band is centred
/// 1..max_offset slices beyond its half width, so it never holds the source.
inline PairedTrial run_paired_trial(std::size_t trial, SamplingMode sampling,
                                    std::uint64_t seed, const TrialOptions& opt = {}) {
  if (opt.dest_width == 0 || opt.max_offset == 0)
    throw InvalidArgument("dest_width and max_offset must be positive");
  auto rng = trial_rng(seed, trial);
  GCSpec spec = random_gc_spec(rng, sampling);
  spec.axis_samples = opt.axis_samples;
  spec.contour_samples = opt.contour_samples;
  const GeneratedGC gc = generate_gc(spec);
  const std::size_t half = opt.dest_width / 2;
  const std::size_t reach = half + opt.max_offset;
  if (spec.axis_samples <= 2 * reach + 1) throw InvalidArgument("too few axis samples");
  std::uniform_int_distribution<std::size_t> off(1, opt.max_offset);
  std::uniform_int_distribution<std::size_t> src(reach, spec.axis_samples - 1 - reach);
  const std::size_t s = src(rng);
  const std::size_t o = half + off(rng);
  const std::size_t d = (rng() & 1u) ? s + o : s - o;
  const auto band = slice_band(d, opt.dest_width);
  PairedTrial p{run_registration_trial(gc, s, band, d, true, opt.reg),
                run_registration_trial(gc, s, band, d, false, opt.reg)};
  for (auto* r : {&p.with_normals, &p.without_normals}) {
    r->trial = trial;
    r->sampling = sampling;
  }
  return p;
}

struct NeighborhoodResult {
  double proportion_with = 0.0;     // fraction of trials where the large
  double proportion_without = 0.0;  // destination worsened rotation error
  std::size_t trials = 0;
};

struct NeighborhoodOptions {
  std::size_t small_width = 1;  // slices in the small destination band
  std::size_t large_width = 3;  // slices in the large destination band
  std::size_t gap = 2;          // source-to-band-centre distance in slices
  double worsen_margin = 1e-3;  // err_large > err_small + margin counts as worse
  SamplingMode sampling = SamplingMode::random;
  TrialOptions trial{};
};

/// Registers a source slice against a small and a large destination band
/// centred on the same slice and counts how often the large band worsens the
/// rotation error, per method.
inline NeighborhoodResult run_neighborhood_size_experiment(std::size_t n_trials,
                                                           std::uint64_t seed,
                                                           const NeighborhoodOptions& opt = {}) {
  if (n_trials == 0) throw InvalidArgument("n_trials must be positive");
  if (opt.gap <= opt.large_width / 2)
    throw InvalidArgument("destination band would contain the source slice");
  std::size_t worse_with = 0, worse_without = 0;
  for (std::size_t t = 0; t < n_trials; ++t) {
    auto rng = trial_rng(seed, t);
    GCSpec spec = random_gc_spec(rng, opt.sampling);
    spec.axis_samples = opt.trial.axis_samples;
    spec.contour_samples = opt.trial.contour_samples;
    const GeneratedGC gc = generate_gc(spec);
    const std::size_t margin = opt.gap + opt.large_width;
    std::uniform_int_distribution<std::size_t> src(margin, spec.axis_samples - 1 - margin);
    const std::size_t s = src(rng);
    const std::size_t centre = (rng() & 1u) ? s + opt.gap : s - opt.gap;
    const auto small = slice_band(centre, opt.small_width);
    const auto large = slice_band(centre, opt.large_width);
    for (bool normals : {true, false}) {
      const auto a = run_registration_trial(gc, s, small, centre, normals, opt.trial.reg);
      const auto b = run_registration_trial(gc, s, large, centre, normals, opt.trial.reg);
      const bool worse = b.failed || (!a.failed && b.rot_err > a.rot_err + opt.worsen_margin);
      (normals ? worse_with : worse_without) += worse ? 1 : 0;
    }
  }
  NeighborhoodResult r;
  r.trials = n_trials;
  r.proportion_with = double(worse_with) / double(n_trials);
  r.proportion_without = double(worse_without) / double(n_trials);
  return r;
}

}  // namespace gcskel
