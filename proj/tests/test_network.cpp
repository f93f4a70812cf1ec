#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <gtest/gtest.h>

#include "handkin/autodiff.hpp"
#include "handkin/network.hpp"

using namespace handkin;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.input_size = 12;
  s.conv = {{2, 3, 2}, {3, 2, 2}};
  s.fc = {5};
  s.output = 3;
  return s;
}

Batch random_batch(Rng& rng, Eigen::Index n, std::size_t dim) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Batch x(n, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

// Direct loop implementation: maps are [y][x][channel].
Eigen::VectorXd naive_forward(const Eigen::VectorXd& p, const NetworkSpec& spec, const double* x) {
  std::vector<double> map(x, x + spec.input_dim());
  int size = spec.input_size, ch = 1;
  std::size_t off = 0;
  for (const auto& s : spec.conv) {
    const int cs = size - s.kernel + 1, ps = cs / s.pool, cols = s.kernel * s.kernel * ch;
    const double* w = p.data() + off;
    const double* b = w + static_cast<std::ptrdiff_t>(s.features * cols);
    std::vector<double> conv(static_cast<std::size_t>(cs * cs * s.features));
    for (int y = 0; y < cs; ++y) {
      for (int xx = 0; xx < cs; ++xx) {
        for (int f = 0; f < s.features; ++f) {
          double acc = b[f];
          for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx) {
              for (int c = 0; c < ch; ++c) {
                acc += w[f * cols + (ky * s.kernel + kx) * ch + c] *
                       map[static_cast<std::size_t>(((y + ky) * size + xx + kx) * ch + c)];
              }
            }
          }
          conv[static_cast<std::size_t>((y * cs + xx) * s.features + f)] = std::max(acc, 0.0);
        }
      }
    }
    std::vector<double> pooled(static_cast<std::size_t>(ps * ps * s.features), -1e300);
    for (int y = 0; y < ps * s.pool; ++y) {
      for (int xx = 0; xx < ps * s.pool; ++xx) {
        for (int f = 0; f < s.features; ++f) {
          double& dst = pooled[static_cast<std::size_t>(((y / s.pool) * ps + xx / s.pool) * s.features + f)];
          dst = std::max(dst, conv[static_cast<std::size_t>((y * cs + xx) * s.features + f)]);
        }
      }
    }
    map = pooled;
    off += static_cast<std::size_t>(s.features * cols + s.features);
    size = ps;
    ch = s.features;
  }
  std::vector<int> widths = spec.fc;
  widths.push_back(spec.output);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const int in = static_cast<int>(map.size()), out = widths[l];
    const double* w = p.data() + off;
    const double* b = w + static_cast<std::ptrdiff_t>(in * out);
    std::vector<double> next(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      for (int i = 0; i < in; ++i) acc += w[o * in + i] * map[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = (l + 1 < widths.size()) ? std::max(acc, 0.0) : acc;
    }
    off += static_cast<std::size_t>(in * out + out);
    map = next;
  }
  return Eigen::Map<Eigen::VectorXd>(map.data(), static_cast<Eigen::Index>(map.size()));
}

}  // namespace

TEST(NetworkSpec, ParameterCountAndValidation) {
  const NetworkSpec s = tiny_spec();
  // 12 -> conv3 10 -> pool 5 -> conv2 4 -> pool 2; 2*2*3 = 12 features.
  EXPECT_EQ(s.num_params(), (9u * 2 + 2) + (4u * 2 * 3 + 3) + (12u * 5 + 5) + (5u * 3 + 3));
  const NetworkSpec def;
  // 64 -> 60 -> 15 -> 11 -> 2; 2*2*16 = 64.
  EXPECT_EQ(def.num_params(), (25u * 8 + 8) + (25u * 8 * 16 + 16) + (64u * 512 + 512) + (512u * 61 + 61));
  NetworkSpec bad = s;
  bad.input_size = 4;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_EQ(NetworkSpec::from_json(s.to_json()), s);
  EXPECT_THROW(NetworkSpec::from_json({{"conv", 3}}), std::invalid_argument);
}

TEST(Network, InitBoundsMeanAndDeterminism) {
  const NetworkSpec s;
  Rng a = make_rng(42, 0, 101), b = make_rng(42, 0, 101);
  const Eigen::VectorXd p = init_weights(s, a);
  EXPECT_EQ(p, init_weights(s, b));
  // First conv: m = 25, bound 0.4; its 8 biases follow the 200 weights.
  EXPECT_LE(p.head(200).cwiseAbs().maxCoeff(), 0.4);
  EXPECT_GT(p.head(200).cwiseAbs().maxCoeff(), 0.35);
  EXPECT_TRUE(p.segment(200, 8).isZero(0.0));
  const std::size_t fc_off = 208 + 3216;
  const Eigen::VectorXd fc = p.segment(static_cast<Eigen::Index>(fc_off), 64 * 512);
  EXPECT_LE(fc.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_NEAR(fc.mean(), 0.0, 0.005);
  // Var of U(-c, c) is c^2 / 3.
  EXPECT_NEAR(fc.squaredNorm() / static_cast<double>(fc.size()), 0.0625 / 3.0, 0.001);
}

TEST(Network, ForwardMatchesLoopOracle) {
  const NetworkSpec s = tiny_spec();
  Rng rng = make_rng(1, 0);
  const Eigen::VectorXd p = init_weights(s, rng) + 0.05 * Eigen::VectorXd::Ones(static_cast<Eigen::Index>(s.num_params()));
  const Batch x = random_batch(rng, 6, s.input_dim());
  const Eigen::MatrixXd out = forward(p, s, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    EXPECT_LT((out.row(i).transpose() - naive_forward(p, s, x.row(i).data())).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Network, ZeroWeightsGiveOutputBias) {
  const NetworkSpec s = tiny_spec();
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.num_params()));
  p.tail(3) << 1.0, -2.0, 0.5;
  Rng rng = make_rng(2, 0);
  const Eigen::MatrixXd out = forward(p, s, random_batch(rng, 3, s.input_dim()));
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(out.row(i), Eigen::RowVector3d(1.0, -2.0, 0.5));
}

TEST(Network, LinearMapWithoutHiddenLayers) {
  NetworkSpec s;
  s.input_size = 2;
  s.conv = {};
  s.fc = {};
  s.output = 2;
  Eigen::VectorXd p(10);
  p << 1, 2, 3, 4, 5, 6, 7, 8, 0.5, -0.5;
  Batch x(1, 4);
  x << 1, 0, -1, 2;
  const Eigen::MatrixXd out = forward(p, s, x);
  EXPECT_DOUBLE_EQ(out(0, 0), 1 - 3 + 8 + 0.5);
  EXPECT_DOUBLE_EQ(out(0, 1), 5 - 7 + 16 - 0.5);
}

TEST(Network, GradientMatchesFiniteDifferences) {
  const NetworkSpec s = tiny_spec();
  Rng rng = make_rng(3, 0);
  const Eigen::VectorXd p = init_weights(s, rng) + 0.05 * Eigen::VectorXd::Ones(static_cast<Eigen::Index>(s.num_params()));
  const Batch x = random_batch(rng, 5, s.input_dim());
  const Eigen::MatrixXd up = random_batch(rng, 5, 3);
  const Eigen::VectorXd g = backward(p, s, x, up);
  auto f = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd y(1);
    y[0] = (forward(q, s, x).array() * up.array()).sum();
    return y;
  };
  const Eigen::MatrixXd fd = finite_diff_jacobian(f, p, 1e-6);
  EXPECT_LT(max_relative_error(g.transpose(), fd), 1e-6);
}

TEST(Network, ZeroUpstreamAndDuplicatedSamples) {
  const NetworkSpec s = tiny_spec();
  Rng rng = make_rng(4, 0);
  const Eigen::VectorXd p = init_weights(s, rng);
  const Batch one = random_batch(rng, 1, s.input_dim());
  EXPECT_TRUE(backward(p, s, one, Eigen::MatrixXd::Zero(1, 3)).isZero(0.0));
  Batch two(2, one.cols());
  two.row(0) = one.row(0);
  two.row(1) = one.row(0);
  const Eigen::MatrixXd up1 = Eigen::RowVector3d(0.3, -1.0, 2.0);
  Eigen::MatrixXd up2(2, 3);
  up2 << up1, up1;
  EXPECT_TRUE(backward(p, s, two, up2).isApprox(2.0 * backward(p, s, one, up1), 1e-14));
}

TEST(Network, ReductionIndependentOfWorkerCount) {
  const NetworkSpec s = tiny_spec();
  Rng rng = make_rng(5, 0);
  const Eigen::VectorXd p = init_weights(s, rng);
  const Batch x = random_batch(rng, 13, s.input_dim());
  const Eigen::MatrixXd up = random_batch(rng, 13, 3);
  ::setenv("HANDKIN_THREADS", "1", 1);
  const Eigen::VectorXd g1 = backward(p, s, x, up);
  ::setenv("HANDKIN_THREADS", "3", 1);
  const Eigen::VectorXd g3 = backward(p, s, x, up);
  ::unsetenv("HANDKIN_THREADS");
  EXPECT_EQ(g1, g3);
}

TEST(Network, ShapeErrors) {
  const NetworkSpec s = tiny_spec();
  Rng rng = make_rng(6, 0);
  const Eigen::VectorXd p = init_weights(s, rng);
  EXPECT_THROW(forward(p, s, Batch::Zero(2, 10)), std::invalid_argument);
  EXPECT_THROW(forward(p.head(10), s, Batch::Zero(2, 144)), std::invalid_argument);
  EXPECT_THROW(backward(p, s, Batch::Zero(2, 144), Eigen::MatrixXd::Zero(2, 4)), std::invalid_argument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Eigen::VectorXd p(3), g(3);
  p << 1.0, 2.0, 3.0;
  g << 0.5, -20.0, 0.0;
  AdamState st = AdamState::zeros(3);
  adam_step(p, g, st, {0.01, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p[0], 0.99, 1e-9);
  EXPECT_NEAR(p[1], 2.01, 1e-9);
  EXPECT_EQ(p[2], 3.0);
  EXPECT_EQ(st.step, 1);
  EXPECT_NEAR(st.m[1], -2.0, 1e-12);
  EXPECT_NEAR(st.v[1], 0.4, 1e-12);
  Eigen::VectorXd short_g(2);
  EXPECT_THROW(adam_step(p, short_g, st, {}), std::invalid_argument);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  Eigen::VectorXd p(2), c(2);
  p << 5.0, -3.0;
  c << 1.0, 2.0;
  AdamState st = AdamState::zeros(2);
  for (int i = 0; i < 3000; ++i) adam_step(p, 2.0 * (p - c), st, {0.05, 0.9, 0.999, 1e-8});
  EXPECT_LT((p - c).norm(), 1e-3);
}

TEST(Adam, BowlLossDecreasesMonotonicallyAfterWarmup) {
  Eigen::VectorXd p(2);
  p << 4.0, -2.5;
  AdamState st = AdamState::zeros(2);
  std::vector<double> loss;
  for (int i = 0; i < 200; ++i) {
    loss.push_back(p.squaredNorm());
    adam_step(p, 2.0 * p, st, {0.01, 0.9, 0.999, 1e-8});
  }
  for (std::size_t i = 10; i < loss.size(); ++i) EXPECT_LT(loss[i], loss[i - 1]) << "step " << i;
}
