// Closed-loop scenario runner: truth, sensors, estimator, guidance/control
// and allocation wired at their rates, plus Monte-Carlo campaigns and metrics.

#pragma once

#include "vtolnav/allocation.hpp"
#include "vtolnav/estimator.hpp"
#include "vtolnav/geometry.hpp"
#include "vtolnav/gnc.hpp"
#include "vtolnav/sensors.hpp"
#include "vtolnav/vehicle.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vtolnav {

struct Rates {
  double predict_hz = 1000.0;
  double control_hz = 100.0;
  double correct_hz = 10.0;
  double log_hz = 100.0;
};

struct InitialConditions {
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3(30.0, 0.0, 0.0);
  Vec3 omega = Vec3::Zero();
  Vec3 phi = Vec3::Zero();  ///< rotation vector of C_ab
  Vec3 wind = Vec3(7.0, 5.0, 0.5);
  Vec3 gyro_bias = Vec3(0.05, 0.1, 0.05);
  Vec3 accel_bias = Vec3(0.05, 0.05, 0.05);
};

struct ScenarioConfig {
  VehicleParams vehicle = sample_vehicle();
  NoiseConfig noise;
  Vec3 mag_field = Vec3(0.21, 0.0, 0.43);  ///< m_a [G]
  ChannelMask channels;
  InitialConditions initial;
  /// Per-block initial standard deviations (phi, v, r, wind, gyro bias, accel bias).
  Eigen::Matrix<double, 6, 1> p0_sigmas = (Eigen::Matrix<double, 6, 1>() << 1e-2, 1e-2, 1e-5, 1.0, 0.05, 0.05).finished();
  bool sample_initial_error = true;

  PathSpec path = CirclePath{};
  GuidanceParams guidance;
  AttitudeGains attitude;
  double pitch_ref = 2.0 * kPi / 180.0;
  double roll_filter_tau = 0.3;
  double psi_dot_max = 1.0;
  SpeedGains speed;
  /// Computed from static trim at speed_ref when absent.
  std::optional<double> thrust_trim;
  double speed_ref = 30.0;
  AllocatorParams allocator;
  bool relinearize_allocator = false;
  /// Feed guidance, control and allocation from the truth instead of the
  /// filter (for isolating control behaviour).
  bool truth_feedback = false;

  Rates rates;
  double duration = 120.0;
  std::uint64_t seed = 1;
  bool wind_in_loop = true;
  int trials = 50;
  /// Standard deviation of the random initial heading in campaigns [rad].
  double heading_sigma = kPi;
  double convergence_threshold = 10.0;
  /// Worker threads for campaigns; 0 selects the hardware concurrency.
  int threads = 0;

  int predict_per_control() const { return static_cast<int>(std::lround(rates.predict_hz / rates.control_hz)); }
  int predict_per_correct() const { return static_cast<int>(std::lround(rates.predict_hz / rates.correct_hz)); }
  int predict_per_log() const { return static_cast<int>(std::lround(rates.predict_hz / rates.log_hz)); }

  void validate() const {
    vehicle.validate();
    auto divides = [](double hi, double lo) {
      const double ratio = hi / lo;
      return lo > 0.0 && std::abs(ratio - std::round(ratio)) < 1e-9 && ratio >= 1.0 - 1e-12;
    };
    if (!(rates.predict_hz >= rates.control_hz && rates.control_hz >= rates.correct_hz)) {
      throw std::invalid_argument("config: need predict rate >= control rate >= correct rate");
    }
    if (!divides(rates.predict_hz, rates.control_hz) || !divides(rates.control_hz, rates.correct_hz) ||
        !divides(rates.predict_hz, rates.log_hz)) {
      throw std::invalid_argument("config: rates must divide evenly");
    }
    if (!(duration > 0.0)) throw std::invalid_argument("config: duration must be positive");
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if ((p0_sigmas.array() < 0.0).any()) throw std::invalid_argument("config: P0 sigmas must be >= 0");
    if (noise.gamma < 0.0) throw std::invalid_argument("config: gamma must be >= 0");
  }
};

/// Thrust for unaccelerated wings-level flight at the reference speed.
inline double trim_thrust(const ScenarioConfig& cfg) {
  return cfg.thrust_trim ? *cfg.thrust_trim : static_trim(cfg.speed_ref, cfg.vehicle).thrust;
}

struct LogSample {
  double t = 0.0;
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 attitude = Vec3::Zero();  ///< rotation vector of the true C_ab
  Vec3 omega = Vec3::Zero();
  double airspeed = 0.0;
  TangentVector error = TangentVector::Zero();
  TangentVector sigma = TangentVector::Zero();  ///< sqrt(diag P)
  double nees = 0.0;
  double attitude_metric = 0.0;  ///< Phi
  double sideslip = 0.0;         ///< true airframe sideslip [rad]
  double cross_track = 0.0;      ///< e_p from the true position [m]
  DeflectionVector deltas;
  double thrust = 0.0;
  Vec3 moment_cmd = Vec3::Zero();
};

struct TrialLog {
  std::uint64_t seed = 0;
  std::vector<LogSample> samples;
  bool failed = false;
  std::string failure;
  int skipped_updates = 0;
  int allocator_holds = 0;
  int clamp_events = 0;
};

/// First time after which |e_p| stays below the threshold for the rest of
/// the series; empty if the last sample is at or above it.
inline std::optional<double> convergence_time(const std::vector<double>& t, const std::vector<double>& e_p,
                                               double threshold = 10.0) {
  if (t.size() != e_p.size()) throw std::invalid_argument("convergence_time: size mismatch");
  if (t.empty()) return std::nullopt;
  std::size_t first_good = 0;
  for (std::size_t i = e_p.size(); i-- > 0;) {
    if (!(std::abs(e_p[i]) < threshold)) {
      first_good = i + 1;
      break;
    }
  }
  if (first_good >= t.size()) return std::nullopt;
  return t[first_good];
}

namespace detail {

struct TrialStreams {
  RngStream process;
  RngStream imu;
  RngStream measurement;
  RngStream init;

  explicit TrialStreams(std::uint64_t seed)
      : process(seed, "process-noise"), imu(seed, "imu-noise"), measurement(seed, "measurement-noise"),
        init(seed, "filter-init") {}
};

inline TruthState initial_truth(const InitialConditions& ic) {
  TruthState ts;
  ts.C_ab = exp_so3(ic.phi);
  ts.r = ic.r;
  ts.v = ic.v;
  ts.omega_b = ic.omega;
  ts.wind = ic.wind;
  ts.gyro_bias = ic.gyro_bias;
  ts.accel_bias = ic.accel_bias;
  return ts;
}

}  // namespace detail

/// One closed-loop flight. Deterministic in (cfg, seed). Per IMU step: truth
/// step, IMU sample, filter prediction. Correction, control and logging fire
/// at the start of their steps on the configured divisors.
///
/// The IMU reports interval quantities: the mean body rate log(C_k^T C_k+1)/dt
/// and the mean specific force C_k^T (dv/dt - g), so the filter mean is exact
/// for noise-free data.
inline TrialLog run_trial(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const VehicleParams& vp = cfg.vehicle;
  const double dt = 1.0 / cfg.rates.predict_hz;
  const double dt_control = 1.0 / cfg.rates.control_hz;
  const int n_steps = static_cast<int>(std::lround(cfg.duration * cfg.rates.predict_hz));
  const int every_control = cfg.predict_per_control();
  const int every_correct = cfg.predict_per_correct();
  const int every_log = cfg.predict_per_log();
  const int n_surfaces = vp.control_surface_count();
  const Vec3 gravity(0.0, 0.0, vp.g);

  detail::TrialStreams rng(seed);
  TrialLog log;
  log.seed = seed;
  log.samples.reserve(static_cast<std::size_t>(n_steps / every_log + 1));

  TruthState truth = detail::initial_truth(cfg.initial);
  const Mat18 p0 = diagonal_covariance(cfg.p0_sigmas);
  FilterState fs;
  {
    TangentVector xi0 = sample_gaussian(p0, rng.init);
    if (!cfg.sample_initial_error) xi0.setZero();
    fs.X = to_group(truth) * exp_group(xi0);
    fs.P = p0;
  }

  SpeedGains speed_gains = cfg.speed;
  speed_gains.thrust_trim = trim_thrust(cfg);
  speed_gains.thrust_max = vp.thrust_max;

  ControllerState cs;
  cs.psi_r = euler_321(cfg.truth_feedback ? truth.C_ab.transpose() : fs.X.nav.C.transpose()).z();
  ActuatorCommand cmd;
  cmd.deltas = DeflectionVector::Zero(n_surfaces);
  cmd.thrust = speed_gains.thrust_trim;
  GuidanceOutput guidance;
  ReferenceAttitude reference;
  reference.C_ra = reference_dcm(0.0, cfg.pitch_ref, cs.psi_r);
  Vec3 moment_cmd = Vec3::Zero();
  Vec3 last_gyro = -fs.X.gyro_bias;  // so the first rate estimate is zero

  try {
    for (int k = 0; k < n_steps; ++k) {
      const double t = k * dt;

      if (k % every_correct == 0) {
        const MeasurementBundle mb = sample_measurements(truth, cfg.noise, cfg.mag_field, rng.measurement, t, cfg.channels);
        if (!mb.empty()) {
          try {
            fs = correct(fs, mb, cfg.mag_field, cfg.noise);
          } catch (const IllConditionedUpdate&) {
            ++log.skipped_updates;
          }
        }
      }

      if (k % every_control == 0) {
        const bool tf = cfg.truth_feedback;
        const Dcm c_ba_est = tf ? truth.C_ab.transpose() : fs.X.nav.C.transpose();
        const Vec3 omega_est = tf ? truth.omega_b : Vec3(last_gyro + fs.X.gyro_bias);
        const Vec3 wind_used = !cfg.wind_in_loop ? Vec3::Zero() : (tf ? truth.wind : fs.X.wind);
        const Vec3 vel_est = tf ? truth.v : fs.X.nav.v;
        const Vec3 pos_est = tf ? truth.r : fs.X.nav.r;

        guidance = lateral_guidance(pos_est, vel_est, cfg.path, cfg.guidance, guidance);
        cs = filter_roll_command(cs, guidance.phi_r, cfg.roll_filter_tau, dt_control);
        const double airspeed_est = (vel_est - wind_used).norm();
        const double psi_dot = coordinated_turn_rate(cs.phi_r_filt, airspeed_est, vp.g, vp.eps_air, cfg.psi_dot_max);
        auto [ref, cs_ref] = reference_kinematics(cs, cs.phi_r_filt, cs.phi_r_rate, cfg.pitch_ref, psi_dot, dt_control);
        reference = ref;
        cs = cs_ref;

        const auto att = attitude_control(c_ba_est, omega_est, reference, cs, cfg.attitude, dt_control);
        cs = att.state;
        moment_cmd = att.moment;

        auto [thrust, cs_speed] = speed_control(vel_est.norm(), cfg.speed_ref, cs, speed_gains, dt_control);
        cs = cs_speed;
        cmd.thrust = thrust;

        try {
          const AllocatorInput inp{c_ba_est, omega_est, vel_est, wind_used, moment_cmd};
          const MomentJacobian b = moment_jacobian(inp, vp, cfg.allocator,
                                                   cfg.relinearize_allocator ? &cmd.deltas : nullptr);
          const Allocation alloc = allocate(b, moment_cmd, vp.delta_max, cfg.allocator.rank_tolerance);
          cmd.deltas = alloc.deltas;
          if (alloc.clamped) ++log.clamp_events;
        } catch (const AllocatorDegenerate&) {
          ++log.allocator_holds;
        } catch (const RankDeficient&) {
          ++log.allocator_holds;
        }
      }

      if (k % every_log == 0) {
        LogSample s;
        s.t = t;
        s.r = truth.r;
        s.v = truth.v;
        s.attitude = log_so3(truth.C_ab);
        s.omega = truth.omega_b;
        s.airspeed = (truth.v - truth.wind).norm();
        s.error = extract_error(fs, truth).delta_xi;
        s.sigma = fs.P.diagonal().cwiseMax(0.0).cwiseSqrt();
        s.nees = nees(s.error, fs.P);
        s.attitude_metric = attitude_error_metric(fs.X.nav.C.transpose(), reference.C_ra);
        s.sideslip = sideslip(truth);
        s.cross_track = cross_track_error(truth.r, cfg.path);
        s.deltas = saturate(cmd, vp).deltas;
        s.thrust = saturate(cmd, vp).thrust;
        s.moment_cmd = moment_cmd;
        log.samples.push_back(s);
      }

      NoiseDraws draws;
      draws.wind = rng.process.normal3(cfg.noise.sigma_q3());
      draws.gyro_bias = rng.process.normal3(cfg.noise.sigma_q4());
      draws.accel_bias = rng.process.normal3(cfg.noise.sigma_q5());
      const TruthState next = step_truth(truth, cmd, draws, dt, vp);

      const Vec3 mean_rate = log_so3(truth.C_ab.transpose() * next.C_ab) / dt;
      const Vec3 mean_specific_force = truth.C_ab.transpose() * ((next.v - truth.v) / dt - gravity);
      const ImuSample imu = sample_imu(mean_rate, mean_specific_force, truth.gyro_bias, truth.accel_bias,
                                       cfg.noise, dt, rng.imu, t);
      fs = predict(fs, imu, cfg.noise, dt, vp.g);
      last_gyro = imu.gyro;
      truth = next;
    }
  } catch (const std::exception& e) {
    log.failed = true;
    log.failure = e.what();
  }
  return log;
}

/// Per-trial scalar metrics.
struct TrialMetrics {
  std::uint64_t seed = 0;
  double initial_heading = 0.0;
  bool failed = false;
  std::string failure;
  double rmse_phi = 0.0;   ///< RMSE of |dphi| [rad]
  double rmse_vel = 0.0;   ///< RMSE of |dv| [m/s]
  double rmse_pos = 0.0;   ///< RMSE of |dr| [m]
  double rmse_wind = 0.0;  ///< RMSE of |dw| [m/s]
  double rmse_attitude_metric = 0.0;
  bool converged = false;
  double convergence_time = 0.0;
  double rmse_cross_track = 0.0;    ///< post-convergence
  double mean_abs_sideslip = 0.0;   ///< post-convergence [rad]
  double mean_nees = 0.0;           ///< time average of the 18-dim NEES
  std::array<double, 6> coverage{}; ///< fraction of components inside 3 sigma, per block
  int skipped_updates = 0;
  int allocator_holds = 0;
};

inline TrialMetrics compute_metrics(const TrialLog& log, double threshold = 10.0) {
  TrialMetrics m;
  m.seed = log.seed;
  m.failed = log.failed;
  m.failure = log.failure;
  m.skipped_updates = log.skipped_updates;
  m.allocator_holds = log.allocator_holds;
  const auto& s = log.samples;
  if (s.empty()) return m;
  double sp = 0, sv = 0, sr = 0, sw = 0, sphi = 0, snees = 0;
  std::array<double, 6> inside{};
  std::vector<double> t, ep;
  t.reserve(s.size());
  ep.reserve(s.size());
  for (const auto& x : s) {
    sp += x.error.segment<3>(idx::kPhi).squaredNorm();
    sv += x.error.segment<3>(idx::kVel).squaredNorm();
    sr += x.error.segment<3>(idx::kPos).squaredNorm();
    sw += x.error.segment<3>(idx::kWind).squaredNorm();
    sphi += x.attitude_metric * x.attitude_metric;
    snees += x.nees;
    for (int b = 0; b < 6; ++b) {
      for (int j = 0; j < 3; ++j) {
        const int i = 3 * b + j;
        if (std::abs(x.error(i)) <= 3.0 * x.sigma(i)) inside[b] += 1.0;
      }
    }
    t.push_back(x.t);
    ep.push_back(x.cross_track);
  }
  const double n = static_cast<double>(s.size());
  m.rmse_phi = std::sqrt(sp / n);
  m.rmse_vel = std::sqrt(sv / n);
  m.rmse_pos = std::sqrt(sr / n);
  m.rmse_wind = std::sqrt(sw / n);
  m.rmse_attitude_metric = std::sqrt(sphi / n);
  m.mean_nees = snees / n;
  for (int b = 0; b < 6; ++b) m.coverage[b] = inside[b] / (3.0 * n);

  const auto tc = log.failed ? std::nullopt : convergence_time(t, ep, threshold);
  m.converged = tc.has_value();
  if (tc) {
    m.convergence_time = *tc;
    double se = 0, sb = 0;
    int cnt = 0;
    for (const auto& x : s) {
      if (x.t < *tc) continue;
      se += x.cross_track * x.cross_track;
      sb += std::abs(x.sideslip);
      ++cnt;
    }
    m.rmse_cross_track = std::sqrt(se / cnt);
    m.mean_abs_sideslip = sb / cnt;
  }
  return m;
}

struct MeanAndSpread {
  double mean = 0.0;
  double two_sigma = 0.0;
  int count = 0;
};

inline MeanAndSpread mean_and_spread(const std::vector<double>& values) {
  MeanAndSpread out;
  out.count = static_cast<int>(values.size());
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.two_sigma = 2.0 * std::sqrt(ss / (values.size() - 1));
  }
  return out;
}

struct CampaignSummary {
  double gamma = 0.0;
  bool wind_in_loop = true;
  int trials = 0;
  int failed = 0;
  int converged = 0;
  MeanAndSpread rmse_phi, rmse_vel, rmse_pos, rmse_wind, rmse_attitude_metric;
  MeanAndSpread rmse_cross_track, mean_abs_sideslip, convergence_time;
  /// Average NEES over all trials and samples (non-failed trials).
  double average_nees = 0.0;
  std::array<double, 6> coverage{};
  std::vector<TrialMetrics> per_trial;  ///< sorted by trial index
};

inline CampaignSummary summarize(const std::vector<TrialMetrics>& per_trial, double gamma, bool wind_in_loop) {
  CampaignSummary s;
  s.gamma = gamma;
  s.wind_in_loop = wind_in_loop;
  s.trials = static_cast<int>(per_trial.size());
  s.per_trial = per_trial;
  std::vector<double> p, v, r, w, phi, ep, beta, tc;
  double nees_sum = 0.0;
  for (const auto& m : per_trial) {
    if (m.failed) {
      ++s.failed;
      continue;
    }
    p.push_back(m.rmse_phi);
    v.push_back(m.rmse_vel);
    r.push_back(m.rmse_pos);
    w.push_back(m.rmse_wind);
    phi.push_back(m.rmse_attitude_metric);
    nees_sum += m.mean_nees;
    for (int b = 0; b < 6; ++b) s.coverage[b] += m.coverage[b];
    if (m.converged) {
      ++s.converged;
      ep.push_back(m.rmse_cross_track);
      beta.push_back(m.mean_abs_sideslip);
      tc.push_back(m.convergence_time);
    }
  }
  s.rmse_phi = mean_and_spread(p);
  s.rmse_vel = mean_and_spread(v);
  s.rmse_pos = mean_and_spread(r);
  s.rmse_wind = mean_and_spread(w);
  s.rmse_attitude_metric = mean_and_spread(phi);
  s.rmse_cross_track = mean_and_spread(ep);
  s.mean_abs_sideslip = mean_and_spread(beta);
  s.convergence_time = mean_and_spread(tc);
  const int ok = s.trials - s.failed;
  if (ok > 0) {
    s.average_nees = nees_sum / ok;
    for (double& c : s.coverage) c /= ok;
  }
  return s;
}

/// Trial i of a campaign: seed hash(seed, i), heading psi0 ~ N(0, sigma)
/// wrapped to (-pi, pi], C_b0a = C3(psi0), v0 = C_b0a^T [|v0|, 0, 0].
inline ScenarioConfig campaign_trial_config(const ScenarioConfig& cfg, int trial_index, double* heading = nullptr) {
  ScenarioConfig c = cfg;
  const std::uint64_t trial_seed = hash_combine(cfg.seed, static_cast<std::uint64_t>(trial_index));
  RngStream heading_rng(trial_seed, "initial-heading");
  const double psi0 = wrap_pi(cfg.heading_sigma * heading_rng.normal());
  const Dcm c_b0a = C3(psi0);
  c.initial.phi = log_so3(c_b0a.transpose());
  c.initial.v = c_b0a.transpose() * Vec3(cfg.initial.v.norm(), 0.0, 0.0);
  c.seed = trial_seed;
  if (heading) *heading = psi0;
  return c;
}

/// Runs cfg.trials trials, in parallel when threads allow. Results are
/// independent of scheduling.
inline CampaignSummary run_campaign(const ScenarioConfig& cfg) {
  cfg.validate();
  std::vector<TrialMetrics> metrics(static_cast<std::size_t>(cfg.trials));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int i = next++; i < cfg.trials; i = next++) {
      double psi0 = 0.0;
      const ScenarioConfig tc = campaign_trial_config(cfg, i, &psi0);
      TrialMetrics m = compute_metrics(run_trial(tc, tc.seed), cfg.convergence_threshold);
      m.initial_heading = psi0;
      metrics[static_cast<std::size_t>(i)] = std::move(m);
    }
  };
  int n_threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, cfg.trials);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return summarize(metrics, cfg.noise.gamma, cfg.wind_in_loop);
}

}  // namespace vtolnav
