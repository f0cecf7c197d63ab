// Scenario configuration (JSON) and result writers (CSV / key-value text).

#pragma once

#include "vtolnav/harness.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>

namespace vtolnav {

using Json = nlohmann::ordered_json;

namespace detail {

inline constexpr double kDeg = kPi / 180.0;

inline Json vec_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

inline Vec3 vec3_from_json(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument(std::string("config: ") + what + " must be a 3-array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Vec2 vec2_from_json(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument(std::string("config: ") + what + " must be a 2-array");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_vec3(const Json& j, const char* key, Vec3& out) {
  if (j.contains(key)) out = vec3_from_json(j.at(key), key);
}

inline void read_deg(const Json& j, const char* key, double& out_rad) {
  if (j.contains(key)) out_rad = j.at(key).get<double>() * kDeg;
}

inline void read_diag(const Json& j, const char* key, Mat3& out) {
  if (j.contains(key)) out = vec3_from_json(j.at(key), key).asDiagonal();
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace detail

inline Json to_json(const ScenarioConfig& c) {
  using detail::kDeg;
  using detail::vec_to_json;
  Json j;
  const auto& vp = c.vehicle;
  Json segs = Json::array();
  for (const auto& s : vp.segments) {
    segs.push_back({{"position", vec_to_json(s.r_cz)},
                    {"dihedral_deg", s.gamma / kDeg},
                    {"area", s.area},
                    {"control_surface", s.is_control_surface}});
  }
  j["vehicle"] = {{"mass", vp.mass},
                  {"inertia", {vec_to_json(vp.inertia.row(0).transpose()), vec_to_json(vp.inertia.row(1).transpose()),
                               vec_to_json(vp.inertia.row(2).transpose())}},
                  {"air_density", vp.rho_air},
                  {"gravity", vp.g},
                  {"cd0", vp.coefficients.cd0},
                  {"delta_max_deg", vp.delta_max / kDeg},
                  {"thrust_max", vp.thrust_max},
                  {"eps_air", vp.eps_air},
                  {"dihedral_axis", vp.dihedral_axis},
                  {"segments", segs}};
  const auto& n = c.noise;
  j["noise"] = {{"gamma", n.gamma},
                {"gyro", n.base_q1},
                {"accel", n.base_q2},
                {"wind_walk", n.base_q3},
                {"gyro_bias_walk", n.base_q4},
                {"accel_bias_walk", n.base_q5},
                {"gps_position", n.base_r1},
                {"gps_velocity", n.base_r2},
                {"pitot", n.base_r3},
                {"magnetometer", n.base_r4},
                {"imu_noise_is_density", n.imu_noise_is_density},
                {"position_pseudo_noise", n.position_pseudo_noise}};
  j["magnetic_field"] = vec_to_json(c.mag_field);
  j["channels"] = {{"gps_position", c.channels.gps_pos},
                   {"gps_velocity", c.channels.gps_vel},
                   {"pitot", c.channels.pitot},
                   {"magnetometer", c.channels.mag}};
  j["initial"] = {{"position", vec_to_json(c.initial.r)},
                  {"velocity", vec_to_json(c.initial.v)},
                  {"angular_velocity", vec_to_json(c.initial.omega)},
                  {"attitude_rotvec", vec_to_json(c.initial.phi)},
                  {"wind", vec_to_json(c.initial.wind)},
                  {"gyro_bias", vec_to_json(c.initial.gyro_bias)},
                  {"accel_bias", vec_to_json(c.initial.accel_bias)}};
  j["initial_sigma"] = {{"attitude", c.p0_sigmas(0)}, {"velocity", c.p0_sigmas(1)},  {"position", c.p0_sigmas(2)},
                        {"wind", c.p0_sigmas(3)},     {"gyro_bias", c.p0_sigmas(4)}, {"accel_bias", c.p0_sigmas(5)},
                        {"sample_initial_error", c.sample_initial_error}};
  if (const auto* circle = std::get_if<CirclePath>(&c.path)) {
    j["path"] = {{"type", "circle"},
                 {"center", vec_to_json(circle->center)},
                 {"radius", circle->radius},
                 {"clockwise", circle->clockwise}};
  } else {
    Json pts = Json::array();
    for (const auto& p : std::get<WaypointPath>(c.path).points) pts.push_back(vec_to_json(p));
    j["path"] = {{"type", "waypoints"}, {"points", pts}};
  }
  j["guidance"] = {{"l1", c.guidance.l1}, {"phi_max_deg", c.guidance.phi_max / kDeg}, {"min_speed", c.guidance.min_speed}};
  j["attitude"] = {{"k_phi", vec_to_json(c.attitude.k_phi.diagonal())},
                   {"k_omega", vec_to_json(c.attitude.k_omega.diagonal())},
                   {"k_i1", vec_to_json(c.attitude.k_i1.diagonal())},
                   {"k_i2", vec_to_json(c.attitude.k_i2.diagonal())},
                   {"integral_limit", c.attitude.integral_limit},
                   {"pitch_ref_deg", c.pitch_ref / kDeg},
                   {"roll_filter_tau", c.roll_filter_tau},
                   {"psi_dot_max", c.psi_dot_max}};
  j["speed"] = {{"reference", c.speed_ref},
                {"kp", c.speed.kp},
                {"ki", c.speed.ki},
                {"thrust_trim", c.thrust_trim ? Json(*c.thrust_trim) : Json(nullptr)}};
  j["allocator"] = {{"fd_step", c.allocator.fd_step},
                    {"rank_tolerance", c.allocator.rank_tolerance},
                    {"relinearize", c.relinearize_allocator}};
  j["truth_feedback"] = c.truth_feedback;
  j["rates"] = {{"imu_hz", c.rates.predict_hz},
                {"control_hz", c.rates.control_hz},
                {"measurement_hz", c.rates.correct_hz},
                {"log_hz", c.rates.log_hz}};
  j["run"] = {{"duration", c.duration},
              {"seed", c.seed},
              {"wind_in_loop", c.wind_in_loop},
              {"trials", c.trials},
              {"heading_sigma_deg", c.heading_sigma / kDeg},
              {"convergence_threshold", c.convergence_threshold},
              {"threads", c.threads}};
  return j;
}

/// Reads a configuration; absent keys keep their defaults.
inline ScenarioConfig config_from_json(const Json& j) {
  using namespace detail;
  ScenarioConfig c;
  if (j.contains("vehicle")) {
    const Json& v = j.at("vehicle");
    auto& vp = c.vehicle;
    read(v, "mass", vp.mass);
    if (v.contains("inertia")) {
      const Json& in = v.at("inertia");
      if (!in.is_array() || in.size() != 3) throw std::invalid_argument("config: inertia must be 3 rows");
      for (int r = 0; r < 3; ++r) vp.inertia.row(r) = vec3_from_json(in[r], "inertia row").transpose();
    }
    read(v, "air_density", vp.rho_air);
    read(v, "gravity", vp.g);
    read(v, "cd0", vp.coefficients.cd0);
    read_deg(v, "delta_max_deg", vp.delta_max);
    read(v, "thrust_max", vp.thrust_max);
    read(v, "eps_air", vp.eps_air);
    read(v, "dihedral_axis", vp.dihedral_axis);
    if (v.contains("segments")) {
      vp.segments.clear();
      for (const Json& s : v.at("segments")) {
        SegmentGeometry seg;
        read_vec3(s, "position", seg.r_cz);
        read_deg(s, "dihedral_deg", seg.gamma);
        read(s, "area", seg.area);
        read(s, "control_surface", seg.is_control_surface);
        vp.segments.push_back(seg);
      }
    }
  }
  if (j.contains("noise")) {
    const Json& n = j.at("noise");
    read(n, "gamma", c.noise.gamma);
    read(n, "gyro", c.noise.base_q1);
    read(n, "accel", c.noise.base_q2);
    read(n, "wind_walk", c.noise.base_q3);
    read(n, "gyro_bias_walk", c.noise.base_q4);
    read(n, "accel_bias_walk", c.noise.base_q5);
    read(n, "gps_position", c.noise.base_r1);
    read(n, "gps_velocity", c.noise.base_r2);
    read(n, "pitot", c.noise.base_r3);
    read(n, "magnetometer", c.noise.base_r4);
    read(n, "imu_noise_is_density", c.noise.imu_noise_is_density);
    read(n, "position_pseudo_noise", c.noise.position_pseudo_noise);
  }
  read_vec3(j, "magnetic_field", c.mag_field);
  if (j.contains("channels")) {
    const Json& ch = j.at("channels");
    read(ch, "gps_position", c.channels.gps_pos);
    read(ch, "gps_velocity", c.channels.gps_vel);
    read(ch, "pitot", c.channels.pitot);
    read(ch, "magnetometer", c.channels.mag);
  }
  if (j.contains("initial")) {
    const Json& in = j.at("initial");
    read_vec3(in, "position", c.initial.r);
    read_vec3(in, "velocity", c.initial.v);
    read_vec3(in, "angular_velocity", c.initial.omega);
    read_vec3(in, "attitude_rotvec", c.initial.phi);
    read_vec3(in, "wind", c.initial.wind);
    read_vec3(in, "gyro_bias", c.initial.gyro_bias);
    read_vec3(in, "accel_bias", c.initial.accel_bias);
  }
  if (j.contains("initial_sigma")) {
    const Json& s = j.at("initial_sigma");
    const char* keys[6] = {"attitude", "velocity", "position", "wind", "gyro_bias", "accel_bias"};
    for (int i = 0; i < 6; ++i) read(s, keys[i], c.p0_sigmas(i));
    read(s, "sample_initial_error", c.sample_initial_error);
  }
  if (j.contains("path")) {
    const Json& p = j.at("path");
    const std::string type = p.value("type", std::string("circle"));
    if (type == "circle") {
      CirclePath circle;
      if (p.contains("center")) circle.center = vec2_from_json(p.at("center"), "center");
      read(p, "radius", circle.radius);
      read(p, "clockwise", circle.clockwise);
      if (!(circle.radius > 0.0)) throw std::invalid_argument("config: circle radius must be positive");
      c.path = circle;
    } else if (type == "waypoints") {
      WaypointPath wp;
      for (const Json& pt : p.at("points")) wp.points.push_back(vec2_from_json(pt, "waypoint"));
      if (wp.points.size() < 2) throw std::invalid_argument("config: need at least two waypoints");
      c.path = wp;
    } else {
      throw std::invalid_argument("config: unknown path type '" + type + "'");
    }
  }
  if (j.contains("guidance")) {
    const Json& g = j.at("guidance");
    read(g, "l1", c.guidance.l1);
    read_deg(g, "phi_max_deg", c.guidance.phi_max);
    read(g, "min_speed", c.guidance.min_speed);
  }
  c.guidance.g = c.vehicle.g;
  if (j.contains("attitude")) {
    const Json& a = j.at("attitude");
    read_diag(a, "k_phi", c.attitude.k_phi);
    read_diag(a, "k_omega", c.attitude.k_omega);
    read_diag(a, "k_i1", c.attitude.k_i1);
    read_diag(a, "k_i2", c.attitude.k_i2);
    read(a, "integral_limit", c.attitude.integral_limit);
    read_deg(a, "pitch_ref_deg", c.pitch_ref);
    read(a, "roll_filter_tau", c.roll_filter_tau);
    read(a, "psi_dot_max", c.psi_dot_max);
  }
  if (j.contains("speed")) {
    const Json& s = j.at("speed");
    read(s, "reference", c.speed_ref);
    read(s, "kp", c.speed.kp);
    read(s, "ki", c.speed.ki);
    if (s.contains("thrust_trim") && !s.at("thrust_trim").is_null()) c.thrust_trim = s.at("thrust_trim").get<double>();
  }
  if (j.contains("allocator")) {
    const Json& a = j.at("allocator");
    read(a, "fd_step", c.allocator.fd_step);
    read(a, "rank_tolerance", c.allocator.rank_tolerance);
    read(a, "relinearize", c.relinearize_allocator);
  }
  read(j, "truth_feedback", c.truth_feedback);
  if (j.contains("rates")) {
    const Json& r = j.at("rates");
    read(r, "imu_hz", c.rates.predict_hz);
    read(r, "control_hz", c.rates.control_hz);
    read(r, "measurement_hz", c.rates.correct_hz);
    read(r, "log_hz", c.rates.log_hz);
  }
  if (j.contains("run")) {
    const Json& r = j.at("run");
    read(r, "duration", c.duration);
    read(r, "seed", c.seed);
    read(r, "wind_in_loop", c.wind_in_loop);
    read(r, "trials", c.trials);
    read_deg(r, "heading_sigma_deg", c.heading_sigma);
    read(r, "convergence_threshold", c.convergence_threshold);
    read(r, "threads", c.threads);
  }
  c.validate();
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("config parse error in '" + path + "': " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

/// 100 Hz trial log: truth, error components, 1-sigma bounds, NEES and control.
inline void write_trial_csv(std::ostream& os, const TrialLog& log) {
  using detail::fmt;
  static const char* blocks[6] = {"phi", "v", "r", "w", "bg", "ba"};
  os << "t,r_1,r_2,r_3,v_1,v_2,v_3,att_1,att_2,att_3,omega_1,omega_2,omega_3,airspeed";
  for (const char* b : blocks)
    for (int i = 1; i <= 3; ++i) os << ",err_" << b << '_' << i;
  for (const char* b : blocks)
    for (int i = 1; i <= 3; ++i) os << ",sigma_" << b << '_' << i;
  os << ",nees,Phi,beta,e_p,thrust,m_1,m_2,m_3";
  const int n_delta = log.samples.empty() ? 0 : static_cast<int>(log.samples.front().deltas.size());
  for (int i = 1; i <= n_delta; ++i) os << ",delta_" << i;
  os << '\n';
  for (const auto& s : log.samples) {
    os << fmt(s.t);
    auto put3 = [&](const Vec3& v) { os << ',' << fmt(v.x()) << ',' << fmt(v.y()) << ',' << fmt(v.z()); };
    put3(s.r);
    put3(s.v);
    put3(s.attitude);
    put3(s.omega);
    os << ',' << fmt(s.airspeed);
    for (int i = 0; i < idx::kDim; ++i) os << ',' << fmt(s.error(i));
    for (int i = 0; i < idx::kDim; ++i) os << ',' << fmt(s.sigma(i));
    os << ',' << fmt(s.nees) << ',' << fmt(s.attitude_metric) << ',' << fmt(s.sideslip) << ','
       << fmt(s.cross_track) << ',' << fmt(s.thrust);
    put3(s.moment_cmd);
    for (int i = 0; i < s.deltas.size(); ++i) os << ',' << fmt(s.deltas(i));
    os << '\n';
  }
}

/// Key-value summary of a single trial.
inline void write_trial_summary(std::ostream& os, const TrialMetrics& m) {
  using detail::fmt;
  os << "seed = " << m.seed << '\n'
     << "failed = " << (m.failed ? "true" : "false") << '\n';
  if (m.failed) os << "failure = " << m.failure << '\n';
  os << "rmse_attitude_rad = " << fmt(m.rmse_phi) << '\n'
     << "rmse_velocity_mps = " << fmt(m.rmse_vel) << '\n'
     << "rmse_position_m = " << fmt(m.rmse_pos) << '\n'
     << "rmse_wind_mps = " << fmt(m.rmse_wind) << '\n'
     << "rmse_Phi = " << fmt(m.rmse_attitude_metric) << '\n'
     << "converged = " << (m.converged ? "true" : "false") << '\n'
     << "convergence_time_s = " << fmt(m.convergence_time) << '\n'
     << "rmse_cross_track_m = " << fmt(m.rmse_cross_track) << '\n'
     << "mean_abs_sideslip_deg = " << fmt(m.mean_abs_sideslip / detail::kDeg) << '\n'
     << "mean_nees = " << fmt(m.mean_nees) << '\n'
     << "skipped_updates = " << m.skipped_updates << '\n'
     << "allocator_holds = " << m.allocator_holds << '\n';
}

/// One row per trial.
inline void write_campaign_csv(std::ostream& os, const CampaignSummary& s) {
  using detail::fmt;
  os << "trial,seed,initial_heading_deg,failed,converged,convergence_time,rmse_phi,rmse_v,rmse_r,rmse_w,rmse_Phi,"
        "rmse_e_p,mean_abs_beta_deg,mean_nees,skipped_updates,allocator_holds\n";
  for (std::size_t i = 0; i < s.per_trial.size(); ++i) {
    const auto& m = s.per_trial[i];
    os << i << ',' << m.seed << ',' << fmt(m.initial_heading / detail::kDeg) << ',' << (m.failed ? 1 : 0) << ','
       << (m.converged ? 1 : 0) << ',' << fmt(m.convergence_time) << ',' << fmt(m.rmse_phi) << ','
       << fmt(m.rmse_vel) << ',' << fmt(m.rmse_pos) << ',' << fmt(m.rmse_wind) << ','
       << fmt(m.rmse_attitude_metric) << ',' << fmt(m.rmse_cross_track) << ','
       << fmt(m.mean_abs_sideslip / detail::kDeg) << ',' << fmt(m.mean_nees) << ',' << m.skipped_updates << ','
       << m.allocator_holds << '\n';
  }
}

/// Campaign table: mean +- 2 sigma of each metric.
inline void write_campaign_text(std::ostream& os, const CampaignSummary& s) {
  using detail::fmt;
  auto row = [&](const char* name, const MeanAndSpread& ms, double scale = 1.0) {
    os << name << " = " << fmt(ms.mean * scale) << " +- " << fmt(ms.two_sigma * scale) << "  (n=" << ms.count
       << ")\n";
  };
  os << "gamma = " << fmt(s.gamma) << '\n'
     << "wind_in_loop = " << (s.wind_in_loop ? "true" : "false") << '\n'
     << "trials = " << s.trials << '\n'
     << "failed = " << s.failed << '\n'
     << "converged = " << s.converged << '\n';
  row("rmse_attitude_rad", s.rmse_phi);
  row("rmse_velocity_mps", s.rmse_vel);
  row("rmse_position_m", s.rmse_pos);
  row("rmse_wind_mps", s.rmse_wind);
  row("rmse_Phi", s.rmse_attitude_metric);
  row("rmse_cross_track_m", s.rmse_cross_track);
  row("mean_abs_sideslip_deg", s.mean_abs_sideslip, 1.0 / detail::kDeg);
  row("convergence_time_s", s.convergence_time);
  os << "average_nees = " << fmt(s.average_nees) << '\n';
  static const char* blocks[6] = {"attitude", "velocity", "position", "wind", "gyro_bias", "accel_bias"};
  for (int b = 0; b < 6; ++b) os << "coverage_3sigma_" << blocks[b] << " = " << fmt(s.coverage[b]) << '\n';
}

}  // namespace vtolnav
