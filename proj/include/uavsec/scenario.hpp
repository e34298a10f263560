#pragma once

#include "uavsec/channel.hpp"
#include "uavsec/core.hpp"
#include "uavsec/geometry.hpp"
#include "uavsec/rates.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <sstream>

namespace uavsec {

enum class Scheme { bcd_openloop, mpc_offline, mpc_online };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::bcd_openloop: return "bcd";
    case Scheme::mpc_offline: return "mpc-offline";
    case Scheme::mpc_online: return "mpc-online";
  }
  return "?";
}

inline std::optional<Scheme> scheme_from_string(const std::string& s) {
  if (s == "bcd") return Scheme::bcd_openloop;
  if (s == "mpc-offline") return Scheme::mpc_offline;
  if (s == "mpc-online") return Scheme::mpc_online;
  return std::nullopt;
}

struct DisturbanceModel {
  enum class Kind { none, gaussian, fixed_sequence };
  Kind kind = Kind::none;
  double sigma = 0.0;            // per-axis std [m], gaussian only
  uint64_t seed = 1;
  std::vector<Vec3> sequence;    // fixed_sequence only

  void validate() const {
    if (sigma < 0) throw ValidationError("disturbance sigma must be >= 0");
    if (kind == Kind::fixed_sequence && sequence.empty())
      throw ValidationError("fixed-sequence disturbance needs a sequence");
  }
};

struct MpcConfig {
  int n_p = 3;           // prediction steps
  int tau = 5;           // inner alternating iterations per slot
  double eps = 50.0;     // arrival radius [m]
  int max_slots = 60;
  DisturbanceModel disturbance;
  Scheme scheme = Scheme::mpc_online;
  double inner_exit_rel = 1e-3;  // early exit when the objective stalls

  void validate() const {
    if (n_p < 1) throw ValidationError("n_p must be >= 1");
    if (tau < 1) throw ValidationError("tau must be >= 1");
    if (!(eps > 0)) throw ValidationError("eps must be positive");
    if (max_slots < 1) throw ValidationError("max_slots must be >= 1");
    disturbance.validate();
  }
};

struct DcSchedule {
  double delta0_factor = 10.0;   // delta_0 = factor * w3 (or factor when w3 = 0)
  double delta_cap_factor = 1e4;
  int max_iters = 30;
  double resid_tol = 1e-6;       // stop when sum(Tr - ||.||_2) < tol * sum Tr
  double obj_tol = 1e-4;         // and the objective change is below this
  double stagnation_ratio = 0.1; // escalate delta when the residual drop stalls
};

struct Budgets {
  double p_max = 400.0;   // total per-slot power [W]
  double r_min = 1.0;     // user QoS floor [bps/Hz]
  double r_max = 0.5;     // eavesdropper cap [bps/Hz]
};

struct Weights {
  double w1 = 1e-4;  // path deviation
  double w2 = 1e-2;  // propulsion power
  double w3 = 1.0;   // secrecy sum
};

struct SolverKnobs {
  double tol_rel = 1e-7;
  double warm_gap0 = 1e-4;
  double cold_gap0 = 0.25;
};

struct Scenario {
  Vec3 q_a{0.0, 0.0, 520.0};
  Vec3 q_b{6000.0, 0.0, 520.0};
  std::vector<NodeSite> users;
  NodeSite eavesdropper{{3800.0, 350.0, 0.0}, NodeRole::eavesdropper};
  AirframeParams airframe;  // Table defaults
  KinematicLimits limits;
  PropagationParams propagation;
  NoisePowers noise;
  Budgets budgets;
  Weights weights;
  MpcConfig mpc;
  DcSchedule dc;
  SolverKnobs solver;
  bool iso_interference_own_distance = false;  // sensitivity switch, off by default
  bool an_rank_free = false;                   // ablation: drop the AN rank-1 penalty
  std::optional<double> an_fixed_trace;        // pin Tr(M) per slot (sweeps)

  int k_users() const { return static_cast<int>(users.size()); }

  static Scenario defaults() {
    Scenario s;
    s.users = {NodeSite{{900.0, 250.0, 0.0}, NodeRole::user},
               NodeSite{{1400.0, -300.0, 0.0}, NodeRole::user}};
    s.noise.sigma2_users = VecX::Constant(2, 1e-11);
    s.noise.sigma2_eve = 1e-11;
    return s;
  }

  // Fast straight-line flight: no secrecy weight, no rate constraints, and a
  // power budget that lets the speed caps bind instead of the power model.
  static Scenario preset_speed() {
    Scenario s = defaults();
    s.weights = Weights{1.0, 1e-2, 0.0};
    s.budgets.p_max = 25000.0;
    s.budgets.r_min = 0.0;
    s.budgets.r_max = 1e3;
    return s;
  }

  static Scenario preset_secrecy() {
    Scenario s = defaults();
    s.weights = Weights{1e-4, 1e-2, 1.0};
    return s;
  }

  bool rate_floor_active() const { return budgets.r_min > 0.0; }
  bool eaves_cap_active() const { return budgets.r_max < 100.0; }

  std::vector<std::string> validate() const {
    std::vector<std::string> warnings;
    limits.validate();
    propagation.validate();
    mpc.validate();
    if (users.empty()) throw ValidationError("at least one user required");
    for (const auto& u : users) u.validate();
    if (eavesdropper.role != NodeRole::eavesdropper)
      throw ValidationError("eavesdropper node has the wrong role");
    eavesdropper.validate();
    if (noise.sigma2_users.size() != k_users())
      throw ValidationError("noise vector length must match the user count");
    noise.validate();
    if ((q_a - q_b).norm() <= 0.0) throw ValidationError("endpoints coincide");
    for (double z : {q_a.z(), q_b.z()})
      if (z < limits.z_min || z > limits.z_max)
        throw ValidationError("mission endpoints must sit inside the altitude band");
    const double hover = power(Vec3::Zero(), airframe);
    if (budgets.p_max <= hover) {
      std::ostringstream os;
      os << "p_max (" << budgets.p_max << " W) must exceed hover power (" << hover << " W)";
      throw ValidationError(os.str());
    }
    if (!(budgets.r_min > budgets.r_max))
      warnings.push_back("r_min <= r_max: positive secrecy is not forced by the constraints");
    if (an_fixed_trace && *an_fixed_trace < 0)
      throw ValidationError("an_fixed_trace must be >= 0");
    return warnings;
  }
};

// ---------------------------------------------------------------------------
// Strict JSON (de)serialization: nested sections mirror the struct layout and
// unknown keys are hard errors.
// ---------------------------------------------------------------------------

namespace config_io {

using Json = nlohmann::ordered_json;

inline Json vec3_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw ValidationError(where + ": expected an array of three numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline void check_keys(const Json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ValidationError(where + ": unknown key '" + it.key() + "'");
  }
}

inline Json to_json(const Scenario& s) {
  Json j;
  j["mission"] = {{"q_a", vec3_to_json(s.q_a)}, {"q_b", vec3_to_json(s.q_b)}};
  Json users = Json::array();
  for (const auto& u : s.users) users.push_back(Json::array({u.position.x(), u.position.y()}));
  j["users"] = users;
  j["eavesdropper"] = vec3_to_json(s.eavesdropper.position);
  j["airframe"] = {{"weight", s.airframe.weight},
                   {"rho", s.airframe.rho},
                   {"disc_area", s.airframe.disc_area},
                   {"zeta", s.airframe.zeta}};
  j["limits"] = {{"z_min", s.limits.z_min}, {"z_max", s.limits.z_max},
                 {"v_max", s.limits.v_max}, {"u_max", s.limits.u_max},
                 {"a_max", s.limits.a_max}, {"t_c", s.limits.t_c}};
  j["propagation"] = {{"g0", s.propagation.g0},
                      {"alpha_user", s.propagation.alpha_user},
                      {"alpha_eve", s.propagation.alpha_eve},
                      {"n_antennas", s.propagation.n_antennas},
                      {"d_over_lambda", s.propagation.d_over_lambda}};
  Json sig = Json::array();
  for (int k = 0; k < s.noise.sigma2_users.size(); ++k) sig.push_back(s.noise.sigma2_users[k]);
  j["noise"] = {{"sigma2_users", sig}, {"sigma2_eve", s.noise.sigma2_eve}};
  j["budgets"] = {{"p_max", s.budgets.p_max}, {"r_min", s.budgets.r_min},
                  {"r_max", s.budgets.r_max}};
  j["weights"] = {{"w1", s.weights.w1}, {"w2", s.weights.w2}, {"w3", s.weights.w3}};
  Json dist = {{"kind", s.mpc.disturbance.kind == DisturbanceModel::Kind::none
                            ? "none"
                            : (s.mpc.disturbance.kind == DisturbanceModel::Kind::gaussian
                                   ? "gaussian"
                                   : "fixed-sequence")},
               {"sigma", s.mpc.disturbance.sigma},
               {"seed", s.mpc.disturbance.seed}};
  if (s.mpc.disturbance.kind == DisturbanceModel::Kind::fixed_sequence) {
    Json seq = Json::array();
    for (const auto& d : s.mpc.disturbance.sequence) seq.push_back(vec3_to_json(d));
    dist["sequence"] = seq;
  }
  j["mpc"] = {{"n_p", s.mpc.n_p},
              {"tau", s.mpc.tau},
              {"eps", s.mpc.eps},
              {"max_slots", s.mpc.max_slots},
              {"scheme", to_string(s.mpc.scheme)},
              {"inner_exit_rel", s.mpc.inner_exit_rel},
              {"disturbance", dist}};
  j["dc"] = {{"delta0_factor", s.dc.delta0_factor},
             {"delta_cap_factor", s.dc.delta_cap_factor},
             {"max_iters", s.dc.max_iters},
             {"resid_tol", s.dc.resid_tol},
             {"obj_tol", s.dc.obj_tol},
             {"stagnation_ratio", s.dc.stagnation_ratio}};
  j["solver"] = {{"tol_rel", s.solver.tol_rel},
                 {"warm_gap0", s.solver.warm_gap0},
                 {"cold_gap0", s.solver.cold_gap0}};
  j["flags"] = {{"iso_interference_own_distance", s.iso_interference_own_distance},
                {"an_rank_free", s.an_rank_free}};
  if (s.an_fixed_trace) j["flags"]["an_fixed_trace"] = *s.an_fixed_trace;
  return j;
}

template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Scenario from_json(const Json& j) {
  Scenario s = Scenario::defaults();
  check_keys(j, "scenario",
             {"mission", "users", "eavesdropper", "airframe", "limits", "propagation",
              "noise", "budgets", "weights", "mpc", "dc", "solver", "flags"});
  if (j.contains("mission")) {
    const auto& m = j.at("mission");
    check_keys(m, "mission", {"q_a", "q_b"});
    if (m.contains("q_a")) s.q_a = vec3_from_json(m.at("q_a"), "mission.q_a");
    if (m.contains("q_b")) s.q_b = vec3_from_json(m.at("q_b"), "mission.q_b");
  }
  if (j.contains("users")) {
    s.users.clear();
    for (const auto& u : j.at("users")) {
      if (!u.is_array() || (u.size() != 2 && u.size() != 3))
        throw ValidationError("users: expected [x, y] or [x, y, 0] entries");
      const double z = u.size() == 3 ? u[2].get<double>() : 0.0;
      s.users.push_back(NodeSite{{u[0].get<double>(), u[1].get<double>(), z}, NodeRole::user});
    }
  }
  if (j.contains("eavesdropper"))
    s.eavesdropper =
        NodeSite{vec3_from_json(j.at("eavesdropper"), "eavesdropper"), NodeRole::eavesdropper};
  if (j.contains("airframe")) {
    const auto& a = j.at("airframe");
    check_keys(a, "airframe", {"weight", "rho", "disc_area", "zeta"});
    double w = s.airframe.weight, rho = s.airframe.rho, sa = s.airframe.disc_area,
           z = s.airframe.zeta;
    maybe(a, "weight", w);
    maybe(a, "rho", rho);
    maybe(a, "disc_area", sa);
    maybe(a, "zeta", z);
    s.airframe = AirframeParams::make(w, rho, sa, z);
  }
  if (j.contains("limits")) {
    const auto& l = j.at("limits");
    check_keys(l, "limits", {"z_min", "z_max", "v_max", "u_max", "a_max", "t_c"});
    maybe(l, "z_min", s.limits.z_min);
    maybe(l, "z_max", s.limits.z_max);
    maybe(l, "v_max", s.limits.v_max);
    maybe(l, "u_max", s.limits.u_max);
    maybe(l, "a_max", s.limits.a_max);
    maybe(l, "t_c", s.limits.t_c);
  }
  if (j.contains("propagation")) {
    const auto& p = j.at("propagation");
    check_keys(p, "propagation",
               {"g0", "alpha_user", "alpha_eve", "n_antennas", "d_over_lambda"});
    maybe(p, "g0", s.propagation.g0);
    maybe(p, "alpha_user", s.propagation.alpha_user);
    maybe(p, "alpha_eve", s.propagation.alpha_eve);
    maybe(p, "n_antennas", s.propagation.n_antennas);
    maybe(p, "d_over_lambda", s.propagation.d_over_lambda);
  }
  // noise defaults track the user count unless given explicitly
  s.noise.sigma2_users = VecX::Constant(s.k_users(), 1e-11);
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    check_keys(n, "noise", {"sigma2_users", "sigma2_eve"});
    if (n.contains("sigma2_users")) {
      const auto& arr = n.at("sigma2_users");
      if (arr.is_number()) {
        s.noise.sigma2_users = VecX::Constant(s.k_users(), arr.get<double>());
      } else {
        s.noise.sigma2_users.resize(static_cast<int>(arr.size()));
        for (int k = 0; k < s.noise.sigma2_users.size(); ++k)
          s.noise.sigma2_users[k] = arr[static_cast<size_t>(k)].get<double>();
      }
    }
    maybe(n, "sigma2_eve", s.noise.sigma2_eve);
  }
  if (j.contains("budgets")) {
    const auto& b = j.at("budgets");
    check_keys(b, "budgets", {"p_max", "r_min", "r_max"});
    maybe(b, "p_max", s.budgets.p_max);
    maybe(b, "r_min", s.budgets.r_min);
    maybe(b, "r_max", s.budgets.r_max);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, "weights", {"w1", "w2", "w3"});
    maybe(w, "w1", s.weights.w1);
    maybe(w, "w2", s.weights.w2);
    maybe(w, "w3", s.weights.w3);
  }
  if (j.contains("mpc")) {
    const auto& m = j.at("mpc");
    check_keys(m, "mpc",
               {"n_p", "tau", "eps", "max_slots", "scheme", "inner_exit_rel", "disturbance"});
    maybe(m, "n_p", s.mpc.n_p);
    maybe(m, "tau", s.mpc.tau);
    maybe(m, "eps", s.mpc.eps);
    maybe(m, "max_slots", s.mpc.max_slots);
    maybe(m, "inner_exit_rel", s.mpc.inner_exit_rel);
    if (m.contains("scheme")) {
      const auto sc = scheme_from_string(m.at("scheme").get<std::string>());
      if (!sc) throw ValidationError("mpc.scheme: unknown scheme");
      s.mpc.scheme = *sc;
    }
    if (m.contains("disturbance")) {
      const auto& d = m.at("disturbance");
      check_keys(d, "mpc.disturbance", {"kind", "sigma", "seed", "sequence"});
      if (d.contains("kind")) {
        const std::string kind = d.at("kind").get<std::string>();
        if (kind == "none")
          s.mpc.disturbance.kind = DisturbanceModel::Kind::none;
        else if (kind == "gaussian")
          s.mpc.disturbance.kind = DisturbanceModel::Kind::gaussian;
        else if (kind == "fixed-sequence")
          s.mpc.disturbance.kind = DisturbanceModel::Kind::fixed_sequence;
        else
          throw ValidationError("mpc.disturbance.kind: unknown kind");
      }
      maybe(d, "sigma", s.mpc.disturbance.sigma);
      maybe(d, "seed", s.mpc.disturbance.seed);
      if (d.contains("sequence")) {
        s.mpc.disturbance.sequence.clear();
        for (const auto& e : d.at("sequence"))
          s.mpc.disturbance.sequence.push_back(vec3_from_json(e, "disturbance.sequence"));
      }
    }
  }
  if (j.contains("dc")) {
    const auto& d = j.at("dc");
    check_keys(d, "dc", {"delta0_factor", "delta_cap_factor", "max_iters", "resid_tol",
                         "obj_tol", "stagnation_ratio"});
    maybe(d, "delta0_factor", s.dc.delta0_factor);
    maybe(d, "delta_cap_factor", s.dc.delta_cap_factor);
    maybe(d, "max_iters", s.dc.max_iters);
    maybe(d, "resid_tol", s.dc.resid_tol);
    maybe(d, "obj_tol", s.dc.obj_tol);
    maybe(d, "stagnation_ratio", s.dc.stagnation_ratio);
  }
  if (j.contains("solver")) {
    const auto& v = j.at("solver");
    check_keys(v, "solver", {"tol_rel", "warm_gap0", "cold_gap0"});
    maybe(v, "tol_rel", s.solver.tol_rel);
    maybe(v, "warm_gap0", s.solver.warm_gap0);
    maybe(v, "cold_gap0", s.solver.cold_gap0);
  }
  if (j.contains("flags")) {
    const auto& f = j.at("flags");
    check_keys(f, "flags",
               {"iso_interference_own_distance", "an_rank_free", "an_fixed_trace"});
    maybe(f, "iso_interference_own_distance", s.iso_interference_own_distance);
    maybe(f, "an_rank_free", s.an_rank_free);
    if (f.contains("an_fixed_trace")) s.an_fixed_trace = f.at("an_fixed_trace").get<double>();
  }
  s.validate();
  return s;
}

}  // namespace config_io

inline Scenario load_scenario(const std::string& path) {
  if (path == "default") {
    Scenario s = Scenario::defaults();
    s.validate();
    return s;
  }
  if (path == "speed" || path == "secrecy") {
    Scenario s = path == "speed" ? Scenario::preset_speed() : Scenario::preset_secrecy();
    s.validate();
    return s;
  }
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scenario file: " + path);
  config_io::Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ValidationError("scenario parse error in " + path + ": " + e.what());
  }
  return config_io::from_json(j);
}

inline void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write scenario file: " + path);
  out << config_io::to_json(s).dump(2) << "\n";
}

}  // namespace uavsec
