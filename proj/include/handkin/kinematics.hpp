#pragma once

#include <array>
#include <cmath>
#include <span>

#include "handkin/dual.hpp"
#include "handkin/hand_parameters.hpp"
#include "handkin/topology.hpp"
#include "handkin/types.hpp"

namespace handkin {

/// 21 labelled joint locations in mm, ordered as in joint_index().
struct JointSet {
  std::array<Vec3, kNumJoints> positions;

  JointSet() { positions.fill(Vec3::Zero()); }

  Vec3& operator[](int j) { return positions[static_cast<std::size_t>(j)]; }
  const Vec3& operator[](int j) const { return positions[static_cast<std::size_t>(j)]; }
  Vec3& at(Finger f, JointType k) { return (*this)[joint_index(f, k)]; }
  const Vec3& at(Finger f, JointType k) const { return (*this)[joint_index(f, k)]; }

  std::array<double, 3 * kNumJoints> flatten() const;
  static JointSet unflatten(std::span<const double, 3 * kNumJoints> flat);
  bool all_finite() const;
};

/// Standard DH transform Rz(theta) * Tz(d) * Tx(r) * Rx(alpha).
Mat4 dh_matrix(double theta, double r, double alpha, double d);

/// Homogeneous transform of the hand base: translation b[0..2] (mm), rotation
/// Rz(b[3]) * Ry(b[4]) * Rx(b[5]).
Mat4 base_matrix(std::span<const double, 6> b);

/// Forward kinematics Lambda -> 21 joints.
JointSet fkine(const HandParameters& params, const KinematicTopology& topo);

/// (sum of the 15 bone lengths + |v_T| + |v_I| + |v_R| + |v_P| + |v_W|) / reference_sum.
double hand_scale(const HandParameters& params, double reference_sum);

namespace detail {

// Row-major 4x4 homogeneous transform over an arbitrary scalar. Written out
// by hand (not via Eigen) so the summation order is identical for every scalar
// type.
template <class T>
using Tf = std::array<T, 16>;

template <class T>
Tf<T> tf_identity() {
  Tf<T> m{};
  for (auto& x : m) x = T(0.0);
  m[0] = m[5] = m[10] = m[15] = T(1.0);
  return m;
}

template <class T>
Tf<T> tf_mul(const Tf<T>& a, const Tf<T>& b) {
  Tf<T> c;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      T s = a[4 * i] * b[j];
      for (int k = 1; k < 4; ++k) s += a[4 * i + k] * b[4 * k + j];
      c[4 * i + j] = s;
    }
  }
  return c;
}

template <class T>
Tf<T> tf_dh(const T& theta, const T& r, double alpha, double d) {
  using std::cos;
  using std::sin;
  const T ct = cos(theta);
  const T st = sin(theta);
  const double ca = std::cos(alpha);
  const double sa = std::sin(alpha);
  Tf<T> m;
  m[0] = ct;  m[1] = -(st * ca); m[2] = st * sa;     m[3] = r * ct;
  m[4] = st;  m[5] = ct * ca;    m[6] = -(ct * sa);  m[7] = r * st;
  m[8] = T(0.0); m[9] = T(sa);   m[10] = T(ca);      m[11] = T(d);
  m[12] = T(0.0); m[13] = T(0.0); m[14] = T(0.0);    m[15] = T(1.0);
  return m;
}

template <class T>
Tf<T> tf_base(const T* b) {
  using std::cos;
  using std::sin;
  const T ca = cos(b[3]), sa = sin(b[3]);
  const T cb = cos(b[4]), sb = sin(b[4]);
  const T cc = cos(b[5]), sc = sin(b[5]);
  Tf<T> m;
  // Rz(a) * Ry(b) * Rx(c)
  m[0] = ca * cb;
  m[1] = ca * sb * sc - sa * cc;
  m[2] = ca * sb * cc + sa * sc;
  m[3] = b[0];
  m[4] = sa * cb;
  m[5] = sa * sb * sc + ca * cc;
  m[6] = sa * sb * cc - ca * sc;
  m[7] = b[1];
  m[8] = -sb;
  m[9] = cb * sc;
  m[10] = cb * cc;
  m[11] = b[2];
  m[12] = T(0.0); m[13] = T(0.0); m[14] = T(0.0); m[15] = T(1.0);
  return m;
}

template <class T>
Tf<T> tf_translation(const T& x, const T& y, const T& z) {
  Tf<T> m = tf_identity<T>();
  m[3] = x;
  m[7] = y;
  m[11] = z;
  return m;
}

template <class T>
std::array<T, 3> tf_origin(const Tf<T>& m) {
  return {m[3], m[7], m[11]};
}

/// Joints of one finger (MCP, PIP, DIP, TIP) given the transform of its MCP frame.
template <class T>
std::array<std::array<T, 3>, 4> finger_chain(const Tf<T>& mcp_frame, const T* angles,
                                             const T* bones, const FingerChain& chain) {
  std::array<std::array<T, 3>, 4> out;
  out[0] = tf_origin(mcp_frame);
  const int n_pip = chain.n_dh(JointType::PIP);
  const int n_dip = chain.n_dh(JointType::DIP);
  Tf<T> acc = mcp_frame;
  for (int n = 0; n < kDhRowsPerFinger; ++n) {
    T r(0.0);
    if (n == n_pip - 1) r = bones[0];
    else if (n == n_dip - 1) r = bones[1];
    else if (n == kDhRowsPerFinger - 1) r = bones[2];
    const DhConstants& c = chain.dh[static_cast<std::size_t>(n)];
    acc = tf_mul(acc, tf_dh<T>(angles[n] + c.theta_offset_rad, r, c.alpha_rad, c.d_mm));
    if (n == n_pip - 1) out[1] = tf_origin(acc);
    if (n == n_dip - 1) out[2] = tf_origin(acc);
  }
  out[3] = tf_origin(acc);
  return out;
}

/// Forward kinematics over any scalar supporting +, -, *, sin, cos.
/// Output is 21 x 3 coordinates in joint_index() order.
template <class T>
std::array<std::array<T, 3>, kNumJoints> fkine_generic(const T* lam, const KinematicTopology& topo) {
  namespace L = param_layout;
  std::array<std::array<T, 3>, kNumJoints> joints;
  const Tf<T> base = tf_base<T>(lam + L::kBaseTranslation);
  const T* w = lam + L::kWristVector;
  joints[kWristIndex] = tf_origin(tf_mul(base, tf_translation<T>(w[0], w[1], w[2])));
  for (Finger f : kFingers) {
    const int fi = static_cast<int>(f);
    Tf<T> mcp = base;
    if (const int v = L::finger_vector(f); v >= 0) {
      mcp = tf_mul(base, tf_translation<T>(lam[v], lam[v + 1], lam[v + 2]));
    }
    const auto pts = finger_chain<T>(mcp, lam + L::angle(f, 0), lam + L::bone(f, 0),
                                     topo.fingers[static_cast<std::size_t>(fi)]);
    for (int k = 0; k < 4; ++k) {
      joints[static_cast<std::size_t>(joint_index(f, static_cast<JointType>(k + 1)))] = pts[static_cast<std::size_t>(k)];
    }
  }
  return joints;
}

}  // namespace detail
}  // namespace handkin
