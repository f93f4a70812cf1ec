#include "handkin/network.hpp"

#include <cmath>
#include <stdexcept>

#include "handkin/parallel.hpp"

namespace handkin {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRMap = Eigen::Map<const RMat>;
using RMap = Eigen::Map<RMat>;

constexpr std::size_t kChunk = 4;

struct ConvGeom {
  int in_size, in_ch, k, features, pool, conv_size, out_size;
  std::size_t w_off, b_off;
  int cols() const { return k * k * in_ch; }
};

struct FcGeom {
  int in, out;
  bool relu;
  std::size_t w_off, b_off;
};

struct Layout {
  std::vector<ConvGeom> conv;
  std::vector<FcGeom> fc;  // hidden layers then the linear output
  std::size_t total = 0;
};

Layout make_layout(const NetworkSpec& spec) {
  Layout l;
  int size = spec.input_size, ch = 1;
  std::size_t off = 0;
  for (const auto& s : spec.conv) {
    ConvGeom g{size, ch, s.kernel, s.features, s.pool, size - s.kernel + 1, 0, 0, 0};
    g.out_size = g.conv_size / s.pool;
    g.w_off = off;
    off += static_cast<std::size_t>(g.features) * static_cast<std::size_t>(g.cols());
    g.b_off = off;
    off += static_cast<std::size_t>(g.features);
    l.conv.push_back(g);
    size = g.out_size;
    ch = s.features;
  }
  int in = size * size * ch;
  auto add_fc = [&](int out, bool relu) {
    FcGeom g{in, out, relu, off, 0};
    off += static_cast<std::size_t>(in) * static_cast<std::size_t>(out);
    g.b_off = off;
    off += static_cast<std::size_t>(out);
    l.fc.push_back(g);
    in = out;
  };
  for (int w : spec.fc) add_fc(w, true);
  add_fc(spec.output, false);
  l.total = off;
  return l;
}

struct ConvCache {
  RMat cols;      // conv_size^2 x k*k*C
  RMat act;       // post-ReLU conv output, conv_size^2 x F
  RMat pooled;    // out_size^2 x F
  std::vector<int> argmax;  // per pooled entry, row of act
};

struct Cache {
  std::vector<ConvCache> conv;
  std::vector<Eigen::VectorXd> fc_in;
  std::vector<Eigen::VectorXd> fc_z;
};

void im2col(const RMat& in, const ConvGeom& g, RMat& cols) {
  cols.resize(g.conv_size * g.conv_size, g.cols());
  for (int oy = 0; oy < g.conv_size; ++oy) {
    for (int ox = 0; ox < g.conv_size; ++ox) {
      double* row = cols.data() + static_cast<std::ptrdiff_t>(oy * g.conv_size + ox) * g.cols();
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
          const double* src = in.data() + static_cast<std::ptrdiff_t>((oy + ky) * g.in_size + ox + kx) * g.in_ch;
          for (int c = 0; c < g.in_ch; ++c) *row++ = src[c];
        }
      }
    }
  }
}

void col2im(const RMat& dcols, const ConvGeom& g, RMat& din) {
  din.setZero(g.in_size * g.in_size, g.in_ch);
  for (int oy = 0; oy < g.conv_size; ++oy) {
    for (int ox = 0; ox < g.conv_size; ++ox) {
      const double* row = dcols.data() + static_cast<std::ptrdiff_t>(oy * g.conv_size + ox) * g.cols();
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
          double* dst = din.data() + static_cast<std::ptrdiff_t>((oy + ky) * g.in_size + ox + kx) * g.in_ch;
          for (int c = 0; c < g.in_ch; ++c) dst[c] += *row++;
        }
      }
    }
  }
}

Eigen::VectorXd forward_sample(const Eigen::VectorXd& params, const Layout& layout, const double* x, Cache& cache) {
  cache.conv.resize(layout.conv.size());
  cache.fc_in.resize(layout.fc.size());
  cache.fc_z.resize(layout.fc.size());
  const double* p = params.data();
  RMat act;
  if (!layout.conv.empty()) act = ConstRMap(x, layout.conv[0].in_size * layout.conv[0].in_size, 1);
  for (std::size_t s = 0; s < layout.conv.size(); ++s) {
    const ConvGeom& g = layout.conv[s];
    ConvCache& c = cache.conv[s];
    im2col(act, g, c.cols);
    const ConstRMap w(p + g.w_off, g.features, g.cols());
    const Eigen::Map<const Eigen::RowVectorXd> b(p + g.b_off, g.features);
    c.act.noalias() = c.cols * w.transpose();
    c.act.rowwise() += b;
    c.act = c.act.cwiseMax(0.0);
    c.pooled.resize(g.out_size * g.out_size, g.features);
    c.argmax.assign(static_cast<std::size_t>(c.pooled.size()), 0);
    for (int py = 0; py < g.out_size; ++py) {
      for (int px = 0; px < g.out_size; ++px) {
        const int prow = py * g.out_size + px;
        for (int f = 0; f < g.features; ++f) {
          int best = (py * g.pool) * g.conv_size + px * g.pool;
          for (int dy = 0; dy < g.pool; ++dy) {
            for (int dx = 0; dx < g.pool; ++dx) {
              const int r = (py * g.pool + dy) * g.conv_size + px * g.pool + dx;
              if (c.act(r, f) > c.act(best, f)) best = r;
            }
          }
          c.pooled(prow, f) = c.act(best, f);
          c.argmax[static_cast<std::size_t>(prow * g.features + f)] = best;
        }
      }
    }
    act = c.pooled;
  }
  Eigen::VectorXd a;
  if (layout.conv.empty()) {
    a = Eigen::Map<const Eigen::VectorXd>(x, layout.fc.front().in);
  } else {
    a = Eigen::Map<const Eigen::VectorXd>(act.data(), act.size());
  }
  for (std::size_t i = 0; i < layout.fc.size(); ++i) {
    const FcGeom& g = layout.fc[i];
    const ConstRMap w(p + g.w_off, g.out, g.in);
    const Eigen::Map<const Eigen::VectorXd> b(p + g.b_off, g.out);
    cache.fc_in[i] = a;
    Eigen::VectorXd z = w * a + b;
    cache.fc_z[i] = z;
    a = g.relu ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return a;
}

void backward_sample(const Eigen::VectorXd& params, const Layout& layout, const Cache& cache,
                     const Eigen::VectorXd& upstream, Eigen::VectorXd& grad) {
  const double* p = params.data();
  double* gp = grad.data();
  Eigen::VectorXd da = upstream;
  for (std::size_t i = layout.fc.size(); i-- > 0;) {
    const FcGeom& g = layout.fc[i];
    Eigen::VectorXd dz = da;
    if (g.relu) {
      for (Eigen::Index k = 0; k < dz.size(); ++k) {
        if (cache.fc_z[i][k] <= 0.0) dz[k] = 0.0;
      }
    }
    RMap(gp + g.w_off, g.out, g.in).noalias() += dz * cache.fc_in[i].transpose();
    Eigen::Map<Eigen::VectorXd>(gp + g.b_off, g.out) += dz;
    if (i == 0 && layout.conv.empty()) return;
    da.noalias() = ConstRMap(p + g.w_off, g.out, g.in).transpose() * dz;
  }
  RMat dpooled = RMap(da.data(), layout.conv.back().out_size * layout.conv.back().out_size,
                      layout.conv.back().features);
  for (std::size_t s = layout.conv.size(); s-- > 0;) {
    const ConvGeom& g = layout.conv[s];
    const ConvCache& c = cache.conv[s];
    RMat dact = RMat::Zero(c.act.rows(), c.act.cols());
    for (Eigen::Index prow = 0; prow < dpooled.rows(); ++prow) {
      for (int f = 0; f < g.features; ++f) {
        const int r = c.argmax[static_cast<std::size_t>(prow * g.features + f)];
        if (c.act(r, f) > 0.0) dact(r, f) += dpooled(prow, f);
      }
    }
    RMap(gp + g.w_off, g.features, g.cols()).noalias() += dact.transpose() * c.cols;
    Eigen::Map<Eigen::RowVectorXd>(gp + g.b_off, g.features) += dact.colwise().sum();
    if (s == 0) break;
    const RMat dcols = dact * ConstRMap(p + g.w_off, g.features, g.cols());
    col2im(dcols, g, dpooled);
  }
}

void check_shapes(const Eigen::VectorXd& params, const NetworkSpec& spec, const Layout& layout, const Batch& x) {
  if (static_cast<std::size_t>(params.size()) != layout.total) {
    throw std::invalid_argument("network: expected " + std::to_string(layout.total) + " parameters, got " +
                                std::to_string(params.size()));
  }
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim()) {
    throw std::invalid_argument("network: input has " + std::to_string(x.cols()) + " pixels, spec expects " +
                                std::to_string(spec.input_dim()));
  }
}

}  // namespace

void NetworkSpec::validate() const {
  require(input_size >= 1, "network: input_size must be >= 1");
  require(output >= 1, "network: output width must be >= 1");
  int size = input_size;
  for (const auto& s : conv) {
    require(s.features >= 1 && s.kernel >= 1 && s.pool >= 1, "network: conv stage values must be >= 1");
    require(size - s.kernel + 1 >= s.pool, "network: conv stage shrinks the map below one pixel");
    size = (size - s.kernel + 1) / s.pool;
  }
  for (int w : fc) require(w >= 1, "network: fully-connected widths must be >= 1");
}

std::size_t NetworkSpec::num_params() const {
  validate();
  return make_layout(*this).total;
}

nlohmann::json NetworkSpec::to_json() const {
  nlohmann::json j;
  j["input_size"] = input_size;
  j["conv"] = nlohmann::json::array();
  for (const auto& s : conv) j["conv"].push_back({{"features", s.features}, {"kernel", s.kernel}, {"pool", s.pool}});
  j["fc"] = fc;
  j["output"] = output;
  return j;
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  NetworkSpec s;
  try {
    s.input_size = j.value("input_size", s.input_size);
    if (j.contains("conv")) {
      s.conv.clear();
      for (const auto& c : j.at("conv")) {
        s.conv.push_back({c.at("features").get<int>(), c.at("kernel").get<int>(), c.at("pool").get<int>()});
      }
    }
    if (j.contains("fc")) s.fc = j.at("fc").get<std::vector<int>>();
    s.output = j.value("output", s.output);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("network spec: malformed json: ") + e.what());
  }
  s.validate();
  return s;
}

Eigen::VectorXd init_weights(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  const Layout layout = make_layout(spec);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.total));
  auto fill = [&](std::size_t off, std::size_t n, int m) {
    const double bound = 2.0 / std::sqrt(static_cast<double>(m));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(off + i)] = u(rng);
  };
  for (const auto& g : layout.conv) fill(g.w_off, g.b_off - g.w_off, g.cols());
  for (const auto& g : layout.fc) fill(g.w_off, g.b_off - g.w_off, g.in);
  return p;
}

Eigen::MatrixXd forward(const Eigen::VectorXd& params, const NetworkSpec& spec, const Batch& x) {
  spec.validate();
  const Layout layout = make_layout(spec);
  check_shapes(params, spec, layout, x);
  Eigen::MatrixXd out(x.rows(), spec.output);
  parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t i) {
    Cache cache;
    out.row(static_cast<Eigen::Index>(i)) =
        forward_sample(params, layout, x.row(static_cast<Eigen::Index>(i)).data(), cache).transpose();
  });
  return out;
}

Eigen::VectorXd backward(const Eigen::VectorXd& params, const NetworkSpec& spec, const Batch& x,
                         const Eigen::MatrixXd& upstream) {
  if (upstream.rows() != x.rows() || upstream.cols() != spec.output) {
    throw std::invalid_argument("network: upstream gradient must be batch x output");
  }
  return loss_and_gradient(params, spec, x, [&](std::size_t i, const Eigen::VectorXd&) {
           return std::pair<double, Eigen::VectorXd>{0.0, upstream.row(static_cast<Eigen::Index>(i)).transpose()};
         }).second;
}

std::pair<double, Eigen::VectorXd> loss_and_gradient(const Eigen::VectorXd& params, const NetworkSpec& spec,
                                                     const Batch& x, const SampleLoss& loss) {
  spec.validate();
  const Layout layout = make_layout(spec);
  check_shapes(params, spec, layout, x);
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<Eigen::VectorXd> grads(chunks);
  std::vector<double> losses(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    grads[c] = Eigen::VectorXd::Zero(params.size());
    Cache cache;
    for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
      const Eigen::VectorXd out = forward_sample(params, layout, x.row(static_cast<Eigen::Index>(i)).data(), cache);
      auto [l, g] = loss(i, out);
      if (g.size() != spec.output) throw std::invalid_argument("network: loss gradient has the wrong width");
      losses[c] += l;
      backward_sample(params, layout, cache, g, grads[c]);
    }
  });
  Eigen::VectorXd total = Eigen::VectorXd::Zero(params.size());
  double total_loss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += grads[c];
    total_loss += losses[c];
  }
  return {total_loss, total};
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const AdamConfig& config) {
  require(grads.size() == params.size() && state.m.size() == params.size() && state.v.size() == params.size(),
          "adam: size mismatch");
  require(config.learning_rate > 0.0, "adam: learning rate must be positive");
  ++state.step;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  params.array() -= config.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + config.epsilon);
}

}  // namespace handkin
