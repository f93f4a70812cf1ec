#include "handkin/topology.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace handkin {

namespace {

constexpr double kPi = std::numbers::pi;

FingerChain non_thumb_chain() {
  FingerChain c;
  // Abduction about the palm normal, twist about the abducted bone, flexion
  // about the lateral axis; PIP and DIP flex about axes parallel to the MCP
  // flexion axis. The rest pose points along the base x axis.
  c.dh = {DhConstants{-kPi / 2, 0.0, -kPi / 2}, DhConstants{kPi / 2, 0.0, -kPi / 2},
          DhConstants{0.0, 0.0, kPi / 2}, DhConstants{0.0, 0.0, 0.0}, DhConstants{0.0, 0.0, 0.0}};
  c.dof = {3, 1, 1, 0};
  c.limits = {AngleLimit{-kPi / 8, kPi / 8}, AngleLimit{-kPi / 12, kPi / 12}, AngleLimit{0.0, kPi / 2},
              AngleLimit{0.0, kPi / 2}, AngleLimit{0.0, kPi / 2}};
  return c;
}

FingerChain thumb_chain() {
  FingerChain c;
  c.dh = {DhConstants{-kPi / 2, 0.0, kPi / 4}, DhConstants{kPi / 2, 0.0, 0.0},
          DhConstants{-kPi / 2, 0.0, 0.0}, DhConstants{0.0, 0.0, 0.0}, DhConstants{0.0, 0.0, 0.0}};
  c.dof = {2, 2, 1, 0};
  c.limits = {AngleLimit{-kPi / 6, kPi / 6}, AngleLimit{0.0, kPi / 2}, AngleLimit{-kPi / 8, kPi / 8},
              AngleLimit{0.0, kPi / 2}, AngleLimit{0.0, kPi / 2}};
  return c;
}

}  // namespace

int FingerChain::n_dh(JointType k) const {
  switch (k) {
    case JointType::MCP: return 0;
    case JointType::PIP: return dof[0];
    case JointType::DIP: return dof[0] + dof[1];
    case JointType::TIP: return dof[0] + dof[1] + dof[2];
    case JointType::WRIST: break;
  }
  throw std::invalid_argument("n_dh: wrist is not part of a finger chain");
}

AngleLimits KinematicTopology::angle_limits() const {
  AngleLimits out;
  for (int f = 0; f < kNumFingers; ++f) {
    for (int n = 0; n < kDhRowsPerFinger; ++n) {
      out.low[static_cast<std::size_t>(5 * f + n)] = fingers[static_cast<std::size_t>(f)].limits[static_cast<std::size_t>(n)].low_rad;
      out.up[static_cast<std::size_t>(5 * f + n)] = fingers[static_cast<std::size_t>(f)].limits[static_cast<std::size_t>(n)].up_rad;
    }
  }
  return out;
}

void KinematicTopology::validate() const {
  int total_dof = 0;
  for (const auto& c : fingers) {
    require(c.dof[3] == 0, "topology: TIP joints carry no DoF");
    for (int k = 0; k < 3; ++k) require(c.dof[static_cast<std::size_t>(k)] >= 1, "topology: MCP/PIP/DIP need at least one DoF");
    const int sum = c.dof[0] + c.dof[1] + c.dof[2];
    require(sum == kDhRowsPerFinger, "topology: each finger must have 5 DoF");
    total_dof += sum;
    for (const auto& row : c.dh) {
      require(std::isfinite(row.alpha_rad) && std::isfinite(row.d_mm) && std::isfinite(row.theta_offset_rad),
              "topology: DH constants must be finite");
    }
    for (const auto& l : c.limits) {
      require(std::isfinite(l.low_rad) && std::isfinite(l.up_rad), "topology: limits must be finite");
      require(l.low_rad < l.up_rad, "topology: angle limits need low < up");
    }
  }
  require(total_dof == kNumAngles, "topology: total DoF must be 25");
  require(std::isfinite(reference_length_sum_mm) && reference_length_sum_mm > 0.0,
          "topology: reference length sum must be positive");
}

KinematicTopology KinematicTopology::default_topology() {
  KinematicTopology t;
  t.fingers = {thumb_chain(), non_thumb_chain(), non_thumb_chain(), non_thumb_chain(), non_thumb_chain()};
  t.reference_length_sum_mm = 697.5328382245966;
  return t;
}

nlohmann::json KinematicTopology::to_json() const {
  nlohmann::json j;
  j["reference_length_sum_mm"] = reference_length_sum_mm;
  for (Finger f : kFingers) {
    const FingerChain& c = chain(f);
    nlohmann::json fj;
    fj["dof"] = {{"MCP", c.dof[0]}, {"PIP", c.dof[1]}, {"DIP", c.dof[2]}, {"TIP", c.dof[3]}};
    for (int n = 0; n < kDhRowsPerFinger; ++n) {
      const auto& row = c.dh[static_cast<std::size_t>(n)];
      const auto& lim = c.limits[static_cast<std::size_t>(n)];
      fj["dh"].push_back({{"alpha_rad", row.alpha_rad},
                          {"d_mm", row.d_mm},
                          {"theta_offset_rad", row.theta_offset_rad},
                          {"theta_low_rad", lim.low_rad},
                          {"theta_up_rad", lim.up_rad}});
    }
    j["fingers"][std::string(finger_name(f))] = fj;
  }
  return j;
}

KinematicTopology KinematicTopology::from_json(const nlohmann::json& j) {
  KinematicTopology t;
  try {
    t.reference_length_sum_mm = j.at("reference_length_sum_mm").get<double>();
    for (Finger f : kFingers) {
      const auto& fj = j.at("fingers").at(std::string(finger_name(f)));
      FingerChain& c = t.fingers[static_cast<std::size_t>(f)];
      const auto& dof = fj.at("dof");
      c.dof = {dof.at("MCP").get<int>(), dof.at("PIP").get<int>(), dof.at("DIP").get<int>(),
               dof.value("TIP", 0)};
      const auto& rows = fj.at("dh");
      require(rows.is_array() && rows.size() == kDhRowsPerFinger, "topology: each finger needs 5 DH rows");
      for (int n = 0; n < kDhRowsPerFinger; ++n) {
        const auto& r = rows.at(static_cast<std::size_t>(n));
        c.dh[static_cast<std::size_t>(n)] = {r.at("alpha_rad").get<double>(), r.value("d_mm", 0.0),
                                            r.value("theta_offset_rad", 0.0)};
        c.limits[static_cast<std::size_t>(n)] = {r.at("theta_low_rad").get<double>(),
                                                r.at("theta_up_rad").get<double>()};
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("topology: malformed config: ") + e.what());
  }
  t.validate();
  return t;
}

KinematicTopology KinematicTopology::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open topology config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("topology: cannot parse " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace handkin
