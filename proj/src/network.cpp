#include "faeclust/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "faeclust/errors.hpp"
#include "json.hpp"

namespace faeclust {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kBnEps = 1e-5;
constexpr double kRunMomentum = 0.9;  // fraction of the old running moment kept
constexpr int kBatchStatsMin = 8;

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller without caching the second variate, so the stream layout stays
// obvious: every normal consumes exactly two raw draws.
double unit_normal(std::mt19937_64& rng) {
  double u1 = 0.0;
  do {
    u1 = unit_uniform(rng);
  } while (u1 <= 0.0);
  double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

MatrixXd activation_of(Activation act, const MatrixXd& z) {
  switch (act) {
    case Activation::tanh_fn:
      return z.array().tanh();
    case Activation::sigmoid:
      return 1.0 / (1.0 + (-z.array()).exp());
    case Activation::elu:
      return z.array().max(0.0) + (z.array().min(0.0).exp() - 1.0);
  }
  throw ConfigError("unknown activation");
}

// Derivative expressed through the activation output; exact for all three
// (an elu output a <= 0 comes from z <= 0 where elu' = e^z = a + 1).
MatrixXd activation_deriv(Activation act, const MatrixXd& a) {
  switch (act) {
    case Activation::tanh_fn:
      return 1.0 - a.array().square();
    case Activation::sigmoid:
      return (a.array() * (1.0 - a.array())).matrix();
    case Activation::elu:
      return (a.array() > 0.0)
          .select(MatrixXd::Ones(a.rows(), a.cols()), (a.array() + 1.0).matrix());
  }
  throw ConfigError("unknown activation");
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// <b_u^net, b_v^dat> integrated panel by panel over the union of both knot
// sets, with enough Gauss points per panel to be exact for spline pairs and
// at machine precision when the data basis is fourier.
MatrixXd cross_gram_matrix(const BasisSystem& netb, const BasisSystem& datab) {
  std::vector<double> bps = {netb.a, netb.b};
  auto add_knots = [&](const BasisSystem& bs) {
    if (bs.kind != BasisKind::bspline) return;
    for (int i = 0; i < bs.knots.size(); ++i) {
      double t = bs.knots[i];
      if (t > netb.a + 1e-12 && t < netb.b - 1e-12) bps.push_back(t);
    }
  };
  add_knots(netb);
  add_knots(datab);
  std::sort(bps.begin(), bps.end());
  bps.erase(std::unique(bps.begin(), bps.end(),
                        [](double x, double y) { return std::abs(x - y) < 1e-12; }),
            bps.end());

  VectorXd gn, gw;
  gauss_legendre(24, gn, gw);
  MatrixXd cg = MatrixXd::Zero(netb.size, datab.size);
  for (std::size_t k = 0; k + 1 < bps.size(); ++k) {
    const double half = 0.5 * (bps[k + 1] - bps[k]);
    const double mid = 0.5 * (bps[k + 1] + bps[k]);
    VectorXd ts = (gn.array() * half + mid).matrix();
    MatrixXd bn = netb.eval(ts);
    MatrixXd bd = datab.eval(ts);
    cg.noalias() += bn.transpose() * (gw.array() * half).matrix().asDiagonal() * bd;
  }
  return cg;
}

void check_finite(const MatrixXd& m, const char* where) {
  if (!m.allFinite())
    throw NumericError(std::string("non-finite activation in ") + where);
}

const MlpLayer& mlp_layer(const FaeNetwork& net, int l) {
  if (l == 0) return net.encoder_mlp.layers[0];
  if (l == 1) return net.encoder_mlp.layers[1];
  return net.decoder_mlp.layers[0];
}
MlpLayer& mlp_layer(FaeNetwork& net, int l) {
  return const_cast<MlpLayer&>(mlp_layer(static_cast<const FaeNetwork&>(net), l));
}

// One MLP layer: affine, batch-norm, activation, inverted dropout. Batches of
// at least 8 in train mode normalize with batch statistics and refresh the
// running moments; everything else uses the running moments.
void mlp_layer_forward(const FaeNetwork& net, MlpLayer& L, const MatrixXd& input,
                       bool train, std::mt19937_64* rng, MlpLayerCache& c) {
  const int B = static_cast<int>(input.cols());
  c.input = input;
  c.u.noalias() = L.W * input;
  c.u.colwise() += L.b;
  check_finite(c.u, "mlp affine map");

  c.batch_stats = train && B >= kBatchStatsMin;
  if (c.batch_stats) {
    c.mu = c.u.rowwise().mean();
    MatrixXd centered = c.u.colwise() - c.mu;
    c.var = centered.array().square().rowwise().mean();
    L.run_mean = kRunMomentum * L.run_mean + (1.0 - kRunMomentum) * c.mu;
    L.run_var = kRunMomentum * L.run_var + (1.0 - kRunMomentum) * c.var;
    c.uhat = centered.array().colwise() / (c.var.array() + kBnEps).sqrt();
  } else {
    c.mu = L.run_mean;
    c.var = L.run_var;
    c.uhat =
        (c.u.colwise() - c.mu).array().colwise() / (c.var.array() + kBnEps).sqrt();
  }

  MatrixXd v = c.uhat.array().colwise() * L.gamma.array();
  v.colwise() += L.eta;
  c.act_out = activation_of(net.act, v);

  const double tau = net.cfg.tau;
  if (train && tau < 1.0) {
    if (rng == nullptr)
      throw ConfigError("train-mode forward with dropout needs an rng");
    c.mask.resize(c.act_out.rows(), c.act_out.cols());
    for (int j = 0; j < c.mask.cols(); ++j)
      for (int i = 0; i < c.mask.rows(); ++i)
        c.mask(i, j) = unit_uniform(*rng) < tau ? 1.0 / tau : 0.0;
    c.out = c.act_out.cwiseProduct(c.mask);
    c.dropped = true;
  } else {
    c.out = c.act_out;
    c.dropped = false;
  }
}

struct MlpLayerGradOut {
  MatrixXd dW, dinput;
  VectorXd db, dgamma, deta;
};

MlpLayerGradOut mlp_layer_backward(const FaeNetwork& net, const MlpLayer& L,
                                   const MlpLayerCache& c, const MatrixXd& dout) {
  MatrixXd da = c.dropped ? dout.cwiseProduct(c.mask).eval() : dout;
  MatrixXd dv = da.cwiseProduct(activation_deriv(net.act, c.act_out));

  MlpLayerGradOut g;
  g.dgamma = dv.cwiseProduct(c.uhat).rowwise().sum();
  g.deta = dv.rowwise().sum();

  MatrixXd duhat = dv.array().colwise() * L.gamma.array();
  VectorXd istd = (c.var.array() + kBnEps).rsqrt();
  MatrixXd du;
  if (c.batch_stats) {
    VectorXd m1 = duhat.rowwise().mean();
    VectorXd m2 = duhat.cwiseProduct(c.uhat).rowwise().mean();
    du = ((duhat.colwise() - m1) - (c.uhat.array().colwise() * m2.array()).matrix())
             .array()
             .colwise() *
         istd.array();
  } else {
    du = duhat.array().colwise() * istd.array();
  }

  g.dW.noalias() = du * c.input.transpose();
  g.db = du.rowwise().sum();
  g.dinput.noalias() = L.W.transpose() * du;
  return g;
}

// Columns of `flat` are vec(M_u); expand with the basis values at the grid
// nodes to get one flattened matrix per grid point.
MatrixXd grid_expand(const std::vector<MatrixXd>& coeff, const MatrixXd& net_quad) {
  const int ell = static_cast<int>(coeff.size());
  const int rows = static_cast<int>(coeff[0].size());
  MatrixXd flat(rows, ell);
  for (int u = 0; u < ell; ++u)
    flat.col(u) = Eigen::Map<const VectorXd>(coeff[u].data(), rows);
  return flat * net_quad.transpose();  // rows x G
}

std::vector<int> pick_batch_labels(const std::vector<int>& labels,
                                   const std::vector<int>& idx) {
  if (labels.empty()) return {};
  std::vector<int> out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) out[j] = labels[idx[j]];
  return out;
}

}  // namespace

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh_fn;
  if (s == "elu") return Activation::elu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + s + "' (expected tanh, elu or sigmoid)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh_fn: return "tanh";
    case Activation::elu: return "elu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

FaeNetwork build_network(const NetConfig& cfg, const BasisSystem& data_basis, int p) {
  if (cfg.layer_widths.size() != 7)
    throw ConfigError("layer_widths must list exactly 7 widths");
  for (int w : cfg.layer_widths)
    if (w < 1) throw ConfigError("layer widths must be positive");
  if (cfg.latent_dim != cfg.layer_widths[2])
    throw ConfigError("latent_dim must equal layer_widths[2]");
  if (p < 1) throw ConfigError("data dimension must be positive");
  if (p > cfg.layer_widths[6])
    throw ConfigError("data dimension exceeds the configured output width");
  if (cfg.net_basis_size < 4)
    throw ConfigError("net_basis_size must be at least 4");
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0))
    throw ConfigError("tau must lie in (0, 1]");
  if (!(cfg.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(cfg.beta >= 0.0 && cfg.beta < 1.0))
    throw ConfigError("beta must lie in [0, 1)");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (cfg.lambda_w < 0.0 || cfg.lambda_c < 0.0)
    throw ConfigError("penalty weights must be non-negative");

  FaeNetwork net;
  net.cfg = cfg;
  net.act = activation_from_string(cfg.activation);
  net.p = p;
  net.data_basis = data_basis;
  net.net_basis =
      build_basis(BasisKind::bspline, cfg.net_basis_size, 3, data_basis.a, data_basis.b);
  net.cross_gram = cross_gram_matrix(net.net_basis, data_basis);
  net.net_quad = net.net_basis.eval(data_basis.quad_nodes, 0);

  const int ell = cfg.net_basis_size;
  const int q1 = net.q1(), w1 = net.w1(), s = net.s(), q3 = net.q3();
  const int u1 = net.u1(), u2 = net.u2();

  std::mt19937_64 rng(cfg.seed);
  auto fill_normal = [&](MatrixXd& m, double sigma) {
    for (int j = 0; j < m.cols(); ++j)
      for (int i = 0; i < m.rows(); ++i) m(i, j) = sigma * unit_normal(rng);
  };
  auto fill_glorot = [&](MatrixXd& m, int fi, int fo) {
    const double a = std::sqrt(6.0 / (fi + fo));
    for (int j = 0; j < m.cols(); ++j)
      for (int i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * unit_uniform(rng) - 1.0) * a;
  };

  net.enc_coeff.resize(p);
  for (int d = 0; d < p; ++d) {
    net.enc_coeff[d].resize(q1, ell);
    fill_normal(net.enc_coeff[d], 1.0 / std::sqrt(double(ell) * p));
  }
  // Normalize every encoder weight function to unit L2 norm.
  const MatrixXd& gram = net.net_basis.gram;
  for (int d = 0; d < p; ++d)
    for (int q = 0; q < q1; ++q) {
      VectorXd row = net.enc_coeff[d].row(q);
      double nrm = std::sqrt(std::max(row.dot(gram * row), 0.0));
      if (nrm > 1e-12) net.enc_coeff[d].row(q) /= nrm;
    }
  net.enc_bias = VectorXd::Zero(q1);

  auto make_mlp = [&](int fi, int fo) {
    MlpLayer L;
    L.W.resize(fo, fi);
    fill_glorot(L.W, fi, fo);
    L.b = VectorXd::Zero(fo);
    L.gamma = VectorXd::Ones(fo);
    L.eta = VectorXd::Zero(fo);
    L.run_mean = VectorXd::Zero(fo);
    L.run_var = VectorXd::Ones(fo);
    return L;
  };
  net.encoder_mlp.layers = {make_mlp(q1, w1), make_mlp(w1, s)};
  net.decoder_mlp.layers = {make_mlp(s, q3)};

  auto make_func = [&](int fi, int fo, bool bias) {
    FuncLayer L;
    L.coeff.resize(ell);
    const double sigma = 1.0 / std::sqrt(double(ell) * fi);
    for (int u = 0; u < ell; ++u) {
      L.coeff[u].resize(fo, fi);
      fill_normal(L.coeff[u], sigma);
    }
    L.bias_coeff = bias ? MatrixXd::Zero(fo, ell) : MatrixXd(0, 0);
    return L;
  };
  net.dec = {make_func(q3, u1, true), make_func(u1, u2, true), make_func(u2, p, false)};
  return net;
}

FaeGradients zero_gradients(const FaeNetwork& net) {
  FaeGradients g;
  g.enc_coeff.resize(net.p);
  for (int d = 0; d < net.p; ++d)
    g.enc_coeff[d] = MatrixXd::Zero(net.enc_coeff[d].rows(), net.enc_coeff[d].cols());
  g.enc_bias = VectorXd::Zero(net.enc_bias.size());
  g.mlp.resize(3);
  for (int l = 0; l < 3; ++l) {
    const MlpLayer& L = mlp_layer(net, l);
    g.mlp[l].W = MatrixXd::Zero(L.W.rows(), L.W.cols());
    g.mlp[l].b = VectorXd::Zero(L.b.size());
    g.mlp[l].gamma = VectorXd::Zero(L.gamma.size());
    g.mlp[l].eta = VectorXd::Zero(L.eta.size());
  }
  g.dec.resize(3);
  for (int l = 0; l < 3; ++l) {
    const FuncLayer& L = net.dec[l];
    g.dec[l].coeff.resize(L.coeff.size());
    for (std::size_t u = 0; u < L.coeff.size(); ++u)
      g.dec[l].coeff[u] = MatrixXd::Zero(L.coeff[u].rows(), L.coeff[u].cols());
    g.dec[l].bias_coeff = MatrixXd::Zero(L.bias_coeff.rows(), L.bias_coeff.cols());
  }
  return g;
}

namespace {

template <typename Net, typename Out>
void collect_param_ptrs(Net& net, std::vector<Out>& out) {
  auto push = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  for (auto& m : net.enc_coeff) push(m);
  push(net.enc_bias);
  for (int l = 0; l < 3; ++l) {
    auto& L = mlp_layer(net, l);
    push(L.W);
    push(L.b);
    push(L.gamma);
    push(L.eta);
  }
  for (auto& L : net.dec) {
    for (auto& m : L.coeff) push(m);
    push(L.bias_coeff);
  }
}

}  // namespace

std::vector<double*> parameter_view(FaeNetwork& net) {
  std::vector<double*> out;
  collect_param_ptrs(net, out);
  return out;
}

std::vector<double*> gradient_view(FaeGradients& g) {
  std::vector<double*> out;
  auto push = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  for (auto& m : g.enc_coeff) push(m);
  push(g.enc_bias);
  for (auto& L : g.mlp) {
    push(L.W);
    push(L.b);
    push(L.gamma);
    push(L.eta);
  }
  for (auto& L : g.dec) {
    for (auto& m : L.coeff) push(m);
    push(L.bias_coeff);
  }
  return out;
}

Eigen::MatrixXd decoder_forward(const FaeNetwork& net, const Eigen::MatrixXd& x3,
                                DecoderCache* cache) {
  const int B = static_cast<int>(x3.cols());
  const int G = net.data_basis.grid_size();
  const int ell = net.net_basis.size;
  const int u1 = net.u1(), u2 = net.u2(), p = net.p;
  if (x3.rows() != net.q3())
    throw DataError("decoder input width does not match the network");

  DecoderCache local;
  DecoderCache& c = cache ? *cache : local;
  c.x3 = x3;

  // First functional layer: z1(t) = sum_u b_u(t) C1[u] x3 + bias1(t).
  MatrixXd tmat(u1 * B, ell);
  for (int u = 0; u < ell; ++u) {
    MatrixXd t = net.dec[0].coeff[u] * x3;  // u1 x B
    tmat.col(u) = Eigen::Map<const VectorXd>(t.data(), u1 * B);
  }
  MatrixXd zbig = tmat * net.net_quad.transpose();  // (u1*B) x G
  c.z1 = Eigen::Map<const MatrixXd>(zbig.data(), u1, B * G);
  c.bias1grid = net.dec[0].bias_coeff * net.net_quad.transpose();  // u1 x G
  for (int g = 0; g < G; ++g)
    c.z1.middleCols(g * B, B).colwise() += c.bias1grid.col(g);
  check_finite(c.z1, "decoder layer 1");
  c.y1 = activation_of(net.act, c.z1);

  // Second functional layer: pointwise matrix product with W2(t).
  c.w2grid = grid_expand(net.dec[1].coeff, net.net_quad);  // (u2*u1) x G
  c.bias2grid = net.dec[1].bias_coeff * net.net_quad.transpose();
  c.z2.resize(u2, B * G);
  for (int g = 0; g < G; ++g) {
    Eigen::Map<const MatrixXd> w2g(c.w2grid.col(g).data(), u2, u1);
    c.z2.middleCols(g * B, B).noalias() = w2g * c.y1.middleCols(g * B, B);
    c.z2.middleCols(g * B, B).colwise() += c.bias2grid.col(g);
  }
  check_finite(c.z2, "decoder layer 2");
  c.y2 = activation_of(net.act, c.z2);

  // Output layer: linear, no bias.
  c.w3grid = grid_expand(net.dec[2].coeff, net.net_quad);  // (p*u2) x G
  c.yhat.resize(p, B * G);
  for (int g = 0; g < G; ++g) {
    Eigen::Map<const MatrixXd> w3g(c.w3grid.col(g).data(), p, u2);
    c.yhat.middleCols(g * B, B).noalias() = w3g * c.y2.middleCols(g * B, B);
  }
  check_finite(c.yhat, "decoder output");
  return c.yhat;
}

void decoder_backward(const FaeNetwork& net, const DecoderCache& c,
                      const Eigen::MatrixXd& dyhat, FaeGradients& grads,
                      Eigen::MatrixXd* dx3) {
  const int G = net.data_basis.grid_size();
  const int ell = net.net_basis.size;
  const int u1 = net.u1(), u2 = net.u2(), p = net.p;
  const int B = static_cast<int>(c.x3.cols());

  // Output layer.
  MatrixXd dw3flat(p * u2, G);
  MatrixXd dy2(u2, B * G);
  for (int g = 0; g < G; ++g) {
    auto dyg = dyhat.middleCols(g * B, B);
    auto y2g = c.y2.middleCols(g * B, B);
    MatrixXd dw = dyg * y2g.transpose();  // p x u2
    dw3flat.col(g) = Eigen::Map<const VectorXd>(dw.data(), p * u2);
    Eigen::Map<const MatrixXd> w3g(c.w3grid.col(g).data(), p, u2);
    dy2.middleCols(g * B, B).noalias() = w3g.transpose() * dyg;
  }
  MatrixXd dc3 = dw3flat * net.net_quad;  // (p*u2) x ell
  for (int u = 0; u < ell; ++u)
    grads.dec[2].coeff[u] += Eigen::Map<const MatrixXd>(dc3.col(u).data(), p, u2);

  // Second functional layer.
  MatrixXd dz2 = dy2.cwiseProduct(activation_deriv(net.act, c.y2));
  MatrixXd dw2flat(u2 * u1, G);
  MatrixXd dbias2grid(u2, G);
  MatrixXd dy1(u1, B * G);
  for (int g = 0; g < G; ++g) {
    auto dzg = dz2.middleCols(g * B, B);
    auto y1g = c.y1.middleCols(g * B, B);
    MatrixXd dw = dzg * y1g.transpose();  // u2 x u1
    dw2flat.col(g) = Eigen::Map<const VectorXd>(dw.data(), u2 * u1);
    dbias2grid.col(g) = dzg.rowwise().sum();
    Eigen::Map<const MatrixXd> w2g(c.w2grid.col(g).data(), u2, u1);
    dy1.middleCols(g * B, B).noalias() = w2g.transpose() * dzg;
  }
  MatrixXd dc2 = dw2flat * net.net_quad;
  for (int u = 0; u < ell; ++u)
    grads.dec[1].coeff[u] += Eigen::Map<const MatrixXd>(dc2.col(u).data(), u2, u1);
  grads.dec[1].bias_coeff += dbias2grid * net.net_quad;

  // First functional layer.
  MatrixXd dz1 = dy1.cwiseProduct(activation_deriv(net.act, c.y1));
  MatrixXd dbias1grid(u1, G);
  for (int g = 0; g < G; ++g)
    dbias1grid.col(g) = dz1.middleCols(g * B, B).rowwise().sum();
  grads.dec[0].bias_coeff += dbias1grid * net.net_quad;

  Eigen::Map<const MatrixXd> dzbig(dz1.data(), u1 * B, G);
  MatrixXd dtmat = dzbig * net.net_quad;  // (u1*B) x ell
  if (dx3) *dx3 = MatrixXd::Zero(net.q3(), B);
  for (int u = 0; u < ell; ++u) {
    Eigen::Map<const MatrixXd> dtu(dtmat.col(u).data(), u1, B);
    grads.dec[0].coeff[u].noalias() += dtu * c.x3.transpose();
    if (dx3) dx3->noalias() += net.dec[0].coeff[u].transpose() * dtu;
  }
}

Reconstruction forward(const FaeNetwork& net, const FunctionalDataset& data,
                       const std::vector<int>& idx, Mode mode, ForwardCache* cache,
                       std::mt19937_64* rng) {
  if (!same_recipe(data.basis, net.data_basis))
    throw DataError("dataset basis does not match the one the network was built for");
  if (idx.empty()) throw DataError("forward pass needs a non-empty batch");
  const int B = static_cast<int>(idx.size());
  const int G = data.basis.grid_size();
  const int m = data.basis.size;
  const int p = net.p;
  if (data.dims() != p) throw DataError("dataset dimension does not match the network");
  for (int i : idx)
    if (i < 0 || i >= data.size()) throw DataError("batch index out of range");

  const bool train = mode == Mode::train;
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.idx = idx;
  c.train = train;

  // Inputs on the quadrature grid, (p, B*G) with one width-B block per node.
  c.y.resize(p, B * G);
  c.enc_feats.assign(p, MatrixXd());
  MatrixXd cd(m, B);
  for (int d = 0; d < p; ++d) {
    for (int j = 0; j < B; ++j) cd.col(j) = data.coeffs[idx[j]].row(d).transpose();
    MatrixXd vals = data.basis.quad_basis * cd;  // G x B
    for (int g = 0; g < G; ++g) c.y.block(d, g * B, 1, B) = vals.row(g);
    c.enc_feats[d].noalias() = net.cross_gram * cd;  // ell x B
  }

  // Functional encoder.
  c.z_enc = MatrixXd::Zero(net.q1(), B);
  for (int d = 0; d < p; ++d) c.z_enc.noalias() += net.enc_coeff[d] * c.enc_feats[d];
  c.z_enc.colwise() += net.enc_bias;
  check_finite(c.z_enc, "functional encoder");
  c.x1 = activation_of(net.act, c.z_enc);

  // MLP stack (encoder half, bottleneck, decoder half).
  c.mlp.assign(3, MlpLayerCache());
  const MatrixXd* input = &c.x1;
  FaeNetwork& mut = const_cast<FaeNetwork&>(net);  // running-moment updates only
  for (int l = 0; l < 3; ++l) {
    mlp_layer_forward(net, mlp_layer(mut, l), *input, train, rng, c.mlp[l]);
    input = &c.mlp[l].out;
  }
  c.latent = c.mlp[1].out;
  check_finite(c.latent, "bottleneck");

  decoder_forward(net, c.mlp[2].out, &c.decoder);

  Reconstruction rec;
  rec.grid = c.decoder.yhat;
  if (!train) {
    rec.coeffs.resize(B);
    MatrixXd vals(G, p);
    for (int j = 0; j < B; ++j) {
      for (int g = 0; g < G; ++g)
        for (int d = 0; d < p; ++d) vals(g, d) = rec.grid(d, g * B + j);
      rec.coeffs[j] = data.basis.project_grid(vals).transpose();
    }
  }
  return rec;
}

Eigen::MatrixXd embed(const FaeNetwork& net, const FunctionalDataset& data) {
  if (!same_recipe(data.basis, net.data_basis))
    throw DataError("dataset basis does not match the one the network was built for");
  const int n = data.size();
  if (n == 0) throw DataError("cannot embed an empty dataset");
  const int m = data.basis.size;
  MatrixXd latent(net.s(), n);
  const int chunk = 256;
  for (int start = 0; start < n; start += chunk) {
    const int B = std::min(chunk, n - start);
    MatrixXd cd(m, B);
    MatrixXd z = MatrixXd::Zero(net.q1(), B);
    for (int d = 0; d < net.p; ++d) {
      for (int j = 0; j < B; ++j)
        cd.col(j) = data.coeffs[start + j].row(d).transpose();
      z.noalias() += net.enc_coeff[d] * (net.cross_gram * cd);
    }
    z.colwise() += net.enc_bias;
    MatrixXd h = activation_of(net.act, z);
    for (int l = 0; l < 2; ++l) {
      MlpLayerCache cl;
      mlp_layer_forward(net, mlp_layer(const_cast<FaeNetwork&>(net), l), h, false,
                        nullptr, cl);
      h = cl.out;
    }
    check_finite(h, "bottleneck");
    latent.middleCols(start, B) = h;
  }
  return latent;
}

double reconstruction_loss(const FaeNetwork& net, const ForwardCache& cache) {
  const int B = static_cast<int>(cache.idx.size());
  const int G = net.data_basis.grid_size();
  const VectorXd& w = net.data_basis.quad_weights;
  double acc = 0.0;
  for (int g = 0; g < G; ++g)
    acc += w[g] *
           (cache.decoder.yhat.middleCols(g * B, B) - cache.y.middleCols(g * B, B))
               .squaredNorm();
  return acc / B;
}

double orthogonality_penalty(const FaeNetwork& net) {
  const MatrixXd& gram = net.net_basis.gram;
  double acc = 0.0;
  for (const MatrixXd& m : net.enc_coeff) {
    MatrixXd pmat = m * gram * m.transpose();
    for (int q = 0; q < pmat.rows(); ++q) {
      acc += (pmat(q, q) - 1.0) * (pmat(q, q) - 1.0);
      for (int r = q + 1; r < pmat.cols(); ++r) acc += pmat(q, r) * pmat(q, r);
    }
  }
  return acc;
}

std::vector<Eigen::MatrixXd> orthogonality_grad(const FaeNetwork& net) {
  const MatrixXd& gram = net.net_basis.gram;
  std::vector<MatrixXd> out(net.enc_coeff.size());
  for (std::size_t d = 0; d < net.enc_coeff.size(); ++d) {
    const MatrixXd& m = net.enc_coeff[d];
    MatrixXd pmat = m * gram * m.transpose();
    MatrixXd s = 2.0 * pmat;
    for (int q = 0; q < pmat.rows(); ++q) s(q, q) = 4.0 * (pmat(q, q) - 1.0);
    out[d] = s * m * gram;
  }
  return out;
}

RoughnessValue roughness_penalty(const FaeNetwork& net) {
  RoughnessValue rv;
  const MatrixXd& pen = net.net_basis.penalty;
  const int ell = net.net_basis.size;
  for (const FuncLayer& L : net.dec) {
    for (const MatrixXd& m : L.coeff) rv.l1 += m.cwiseAbs().sum();
    rv.l1 += L.bias_coeff.cwiseAbs().sum();
    for (int u = 0; u < ell; ++u)
      for (int v = 0; v < ell; ++v) {
        double dot = L.coeff[u].cwiseProduct(L.coeff[v]).sum();
        if (L.bias_coeff.size() > 0)
          dot += L.bias_coeff.col(u).dot(L.bias_coeff.col(v));
        rv.integral += pen(u, v) * dot;
      }
  }
  return rv;
}

double clustering_loss(const Eigen::MatrixXd& latent, const std::vector<int>& labels) {
  const int B = static_cast<int>(latent.cols());
  const int s = static_cast<int>(latent.rows());
  if (static_cast<int>(labels.size()) != B)
    throw DataError("clustering loss needs one label per batch column");
  VectorXd xbar = latent.rowwise().mean();
  std::map<int, std::pair<VectorXd, int>> groups;
  for (int j = 0; j < B; ++j) {
    auto it = groups.find(labels[j]);
    if (it == groups.end())
      groups.emplace(labels[j], std::make_pair(VectorXd(latent.col(j)), 1));
    else {
      it->second.first += latent.col(j);
      it->second.second += 1;
    }
  }
  double acc = 0.0;
  for (int j = 0; j < B; ++j) {
    const auto& g = groups.at(labels[j]);
    VectorXd mu = g.first / g.second;
    acc += 2.0 * (latent.col(j) - mu).squaredNorm() -
           (latent.col(j) - xbar).squaredNorm();
  }
  return acc / (double(B) * s);
}

Eigen::MatrixXd clustering_loss_grad(const Eigen::MatrixXd& latent,
                                     const std::vector<int>& labels) {
  const int B = static_cast<int>(latent.cols());
  const int s = static_cast<int>(latent.rows());
  if (static_cast<int>(labels.size()) != B)
    throw DataError("clustering loss needs one label per batch column");
  VectorXd xbar = latent.rowwise().mean();
  std::map<int, std::pair<VectorXd, int>> groups;
  for (int j = 0; j < B; ++j) {
    auto it = groups.find(labels[j]);
    if (it == groups.end())
      groups.emplace(labels[j], std::make_pair(VectorXd(latent.col(j)), 1));
    else {
      it->second.first += latent.col(j);
      it->second.second += 1;
    }
  }
  MatrixXd grad(s, B);
  const double scale = 1.0 / (double(B) * s);
  for (int j = 0; j < B; ++j) {
    const auto& g = groups.at(labels[j]);
    VectorXd mu = g.first / g.second;
    grad.col(j) =
        scale * (4.0 * (latent.col(j) - mu) - 2.0 * (latent.col(j) - xbar));
  }
  return grad;
}

LossBreakdown loss_breakdown(const FaeNetwork& net, const ForwardCache& cache,
                             const std::vector<int>& labels) {
  LossBreakdown lb;
  lb.recon = reconstruction_loss(net, cache);
  lb.orth = orthogonality_penalty(net);
  RoughnessValue rv = roughness_penalty(net);
  lb.rough_l1 = rv.l1;
  lb.rough_integral = rv.integral;
  lb.clust = labels.empty() ? 0.0 : clustering_loss(cache.latent, labels);
  return lb;
}

FaeGradients backward(const FaeNetwork& net, const ForwardCache& cache,
                      const std::vector<int>& labels, const LossWeights& weights,
                      double recon_weight) {
  const int B = static_cast<int>(cache.idx.size());
  const int G = net.data_basis.grid_size();
  if (!labels.empty() && static_cast<int>(labels.size()) != B)
    throw DataError("backward needs one label per batch sample");

  FaeGradients grads = zero_gradients(net);

  // Reconstruction loss on the quadrature grid.
  MatrixXd dyhat(net.p, B * G);
  const VectorXd& w = net.data_basis.quad_weights;
  for (int g = 0; g < G; ++g)
    dyhat.middleCols(g * B, B) =
        (2.0 * recon_weight * w[g] / B) *
        (cache.decoder.yhat.middleCols(g * B, B) - cache.y.middleCols(g * B, B));

  MatrixXd dx3;
  decoder_backward(net, cache.decoder, dyhat, grads, &dx3);

  // MLP stack, inserting the clustering gradient at the bottleneck output.
  MatrixXd dout = dx3;
  for (int l = 2; l >= 0; --l) {
    if (l == 1 && weights.lambda_c != 0.0 && !labels.empty())
      dout += weights.lambda_c * clustering_loss_grad(cache.latent, labels);
    MlpLayerGradOut g = mlp_layer_backward(net, mlp_layer(net, l), cache.mlp[l], dout);
    grads.mlp[l].W = g.dW;
    grads.mlp[l].b = g.db;
    grads.mlp[l].gamma = g.dgamma;
    grads.mlp[l].eta = g.deta;
    dout = g.dinput;
  }

  // Functional encoder.
  MatrixXd dz_enc = dout.cwiseProduct(activation_deriv(net.act, cache.x1));
  grads.enc_bias = dz_enc.rowwise().sum();
  for (int d = 0; d < net.p; ++d)
    grads.enc_coeff[d].noalias() = dz_enc * cache.enc_feats[d].transpose();

  if (weights.lambda_w != 0.0) {
    std::vector<MatrixXd> og = orthogonality_grad(net);
    for (int d = 0; d < net.p; ++d) grads.enc_coeff[d] += weights.lambda_w * og[d];
    for (int l = 0; l < 3; ++l) {
      for (std::size_t u = 0; u < net.dec[l].coeff.size(); ++u)
        grads.dec[l].coeff[u] +=
            weights.lambda_w * net.dec[l].coeff[u].unaryExpr(&sign0);
      if (net.dec[l].bias_coeff.size() > 0)
        grads.dec[l].bias_coeff +=
            weights.lambda_w * net.dec[l].bias_coeff.unaryExpr(&sign0);
    }
  }
  return grads;
}

void sgd_momentum_step(FaeNetwork& net, const FaeGradients& grads, FaeGradients& momentum,
                       double alpha, double beta) {
  std::vector<double*> theta = parameter_view(net);
  std::vector<double*> g = gradient_view(const_cast<FaeGradients&>(grads));
  std::vector<double*> m = gradient_view(momentum);
  if (theta.size() != g.size() || theta.size() != m.size())
    throw DataError("gradient shapes do not match the network");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    *m[i] = beta * *m[i] + (1.0 - beta) * *g[i];
    *theta[i] -= alpha * *m[i];
  }
}

double train_epoch(FaeNetwork& net, const FunctionalDataset& data,
                   const std::vector<int>& labels, const LossWeights& weights,
                   FaeGradients& momentum, std::mt19937_64& rng, bool decoder_only) {
  const int n = data.size();
  if (n == 0) throw DataError("cannot train on an empty dataset");
  if (!labels.empty() && static_cast<int>(labels.size()) != n)
    throw DataError("training labels must cover the whole dataset");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  const int bs = std::min(net.cfg.batch_size, n);
  double total = 0.0;
  int count = 0;
  for (int start = 0; start < n; start += bs) {
    std::vector<int> idx(perm.begin() + start,
                         perm.begin() + std::min(start + bs, n));
    std::vector<int> batch_labels = pick_batch_labels(labels, idx);
    ForwardCache cache;
    forward(net, data, idx, Mode::train, &cache, &rng);
    LossBreakdown lb = loss_breakdown(net, cache, batch_labels);
    FaeGradients grads = backward(net, cache, batch_labels, weights);
    if (decoder_only) {
      for (auto& m : grads.enc_coeff) m.setZero();
      grads.enc_bias.setZero();
      for (auto& L : grads.mlp) {
        L.W.setZero();
        L.b.setZero();
        L.gamma.setZero();
        L.eta.setZero();
      }
    }
    sgd_momentum_step(net, grads, momentum, net.cfg.alpha, net.cfg.beta);
    total += lb.total(weights) * static_cast<double>(idx.size());
    count += static_cast<int>(idx.size());
  }
  return total / count;
}

void pretrain(FaeNetwork& net, const FunctionalDataset& data, int epochs) {
  std::mt19937_64 rng(net.cfg.seed);
  FaeGradients momentum = zero_gradients(net);
  LossWeights weights{net.cfg.lambda_w, 0.0};
  double first = 0.0;
  for (int e = 0; e < epochs; ++e) {
    double loss = train_epoch(net, data, {}, weights, momentum, rng);
    if (e == 0) first = loss;
    if (!std::isfinite(loss) || loss > 1e3 * std::max(std::abs(first), 1e-12))
      throw NumericError("training diverged: epoch loss " + std::to_string(loss) +
                         " exceeds 1000x the initial loss");
  }
}

namespace {

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols,
                          const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    throw DataError(std::string("checkpoint field ") + what + " has the wrong shape");
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw DataError(std::string("checkpoint field ") + what + " has the wrong shape");
    for (int c = 0; c < cols; ++c) m(i, c) = row[c].get<double>();
  }
  return m;
}

nlohmann::json vector_json(const VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

VectorXd vector_from_json(const nlohmann::json& j, int n, const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    throw DataError(std::string("checkpoint field ") + what + " has the wrong shape");
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

void save_checkpoint(const FaeNetwork& net, const std::string& path) {
  nlohmann::json j;
  j["config"] = {{"layer_widths", net.cfg.layer_widths},
                 {"latent_dim", net.cfg.latent_dim},
                 {"activation", net.cfg.activation},
                 {"net_basis_size", net.cfg.net_basis_size},
                 {"tau", net.cfg.tau},
                 {"lambda_w", net.cfg.lambda_w},
                 {"lambda_c", net.cfg.lambda_c},
                 {"alpha", net.cfg.alpha},
                 {"beta", net.cfg.beta},
                 {"batch_size", net.cfg.batch_size},
                 {"epochs", net.cfg.epochs},
                 {"seed", net.cfg.seed}};
  j["data_basis"] = {{"kind", to_string(net.data_basis.kind)},
                     {"size", net.data_basis.size},
                     {"degree", net.data_basis.degree},
                     {"a", net.data_basis.a},
                     {"b", net.data_basis.b}};
  j["p"] = net.p;

  nlohmann::json enc = nlohmann::json::array();
  for (const MatrixXd& m : net.enc_coeff) enc.push_back(matrix_json(m));
  j["enc_coeff"] = std::move(enc);
  j["enc_bias"] = vector_json(net.enc_bias);

  nlohmann::json mlp = nlohmann::json::array();
  for (int l = 0; l < 3; ++l) {
    const MlpLayer& L = mlp_layer(net, l);
    mlp.push_back({{"W", matrix_json(L.W)},
                   {"b", vector_json(L.b)},
                   {"gamma", vector_json(L.gamma)},
                   {"eta", vector_json(L.eta)},
                   {"run_mean", vector_json(L.run_mean)},
                   {"run_var", vector_json(L.run_var)}});
  }
  j["mlp"] = std::move(mlp);

  nlohmann::json dec = nlohmann::json::array();
  for (const FuncLayer& L : net.dec) {
    nlohmann::json coeff = nlohmann::json::array();
    for (const MatrixXd& m : L.coeff) coeff.push_back(matrix_json(m));
    dec.push_back({{"coeff", std::move(coeff)},
                   {"bias_coeff", L.bias_coeff.size() > 0
                                      ? matrix_json(L.bias_coeff)
                                      : nlohmann::json(nullptr)}});
  }
  j["dec"] = std::move(dec);

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint to " + tmp);
    out << j.dump(1);
    out << '\n';
    if (!out) throw DataError("short write while saving checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot move checkpoint into place at " + path);
}

FaeNetwork load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  try {
    const auto& jc = j.at("config");
    NetConfig cfg;
    cfg.layer_widths = jc.at("layer_widths").get<std::vector<int>>();
    cfg.latent_dim = jc.at("latent_dim").get<int>();
    cfg.activation = jc.at("activation").get<std::string>();
    cfg.net_basis_size = jc.at("net_basis_size").get<int>();
    cfg.tau = jc.at("tau").get<double>();
    cfg.lambda_w = jc.at("lambda_w").get<double>();
    cfg.lambda_c = jc.at("lambda_c").get<double>();
    cfg.alpha = jc.at("alpha").get<double>();
    cfg.beta = jc.at("beta").get<double>();
    cfg.batch_size = jc.at("batch_size").get<int>();
    cfg.epochs = jc.at("epochs").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();

    const auto& jb = j.at("data_basis");
    BasisSystem basis = build_basis(basis_kind_from_string(jb.at("kind").get<std::string>()),
                                    jb.at("size").get<int>(), jb.at("degree").get<int>(),
                                    jb.at("a").get<double>(), jb.at("b").get<double>());
    const int p = j.at("p").get<int>();
    FaeNetwork net = build_network(cfg, basis, p);

    const int ell = cfg.net_basis_size;
    const auto& enc = j.at("enc_coeff");
    if (static_cast<int>(enc.size()) != p)
      throw DataError("checkpoint encoder block does not match the data dimension");
    for (int d = 0; d < p; ++d)
      net.enc_coeff[d] = matrix_from_json(enc[d], net.q1(), ell, "enc_coeff");
    net.enc_bias = vector_from_json(j.at("enc_bias"), net.q1(), "enc_bias");

    const auto& mlp = j.at("mlp");
    if (mlp.size() != 3) throw DataError("checkpoint must hold three mlp layers");
    for (int l = 0; l < 3; ++l) {
      MlpLayer& L = mlp_layer(net, l);
      const auto& jl = mlp[l];
      const int fo = static_cast<int>(L.W.rows()), fi = static_cast<int>(L.W.cols());
      L.W = matrix_from_json(jl.at("W"), fo, fi, "W");
      L.b = vector_from_json(jl.at("b"), fo, "b");
      L.gamma = vector_from_json(jl.at("gamma"), fo, "gamma");
      L.eta = vector_from_json(jl.at("eta"), fo, "eta");
      L.run_mean = vector_from_json(jl.at("run_mean"), fo, "run_mean");
      L.run_var = vector_from_json(jl.at("run_var"), fo, "run_var");
    }

    const auto& dec = j.at("dec");
    if (dec.size() != 3) throw DataError("checkpoint must hold three decoder layers");
    for (int l = 0; l < 3; ++l) {
      FuncLayer& L = net.dec[l];
      const auto& jl = dec[l];
      const auto& coeff = jl.at("coeff");
      if (static_cast<int>(coeff.size()) != ell)
        throw DataError("checkpoint decoder block does not match net_basis_size");
      const int fo = static_cast<int>(L.coeff[0].rows());
      const int fi = static_cast<int>(L.coeff[0].cols());
      for (int u = 0; u < ell; ++u)
        L.coeff[u] = matrix_from_json(coeff[u], fo, fi, "dec coeff");
      if (L.bias_coeff.size() > 0)
        L.bias_coeff = matrix_from_json(jl.at("bias_coeff"), fo, ell, "bias_coeff");
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + " is malformed: " + e.what());
  }
}

}  // namespace faeclust
