#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "faeclust/basis.hpp"
#include "faeclust/fdata.hpp"

namespace faeclust {

enum class Activation { tanh_fn, elu, sigmoid };
Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

enum class Mode { train, eval };

struct NetConfig {
  // Output widths of the seven layers: functional encoder, two encoder MLP
  // layers (the second is the bottleneck), one decoder MLP layer, then the
  // three decoder functional layers. The last entry is a width ceiling; the
  // real output width is the data dimension.
  std::vector<int> layer_widths = {16, 12, 8, 12, 16, 16, 64};
  int latent_dim = 8;
  std::string activation = "tanh";
  int net_basis_size = 10;
  double tau = 0.9;  // dropout keep probability
  double lambda_w = 1e-3;
  double lambda_c = 1e-2;
  double alpha = 1e-2;
  double beta = 0.9;
  int batch_size = 32;
  int epochs = 200;
  std::uint64_t seed = 1;
};

struct LossWeights {
  double lambda_w = 0.0;
  double lambda_c = 0.0;
};

struct MlpLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  Eigen::VectorXd gamma, eta;          // batch-norm scale and shift
  Eigen::VectorXd run_mean, run_var;   // running moments (not trainable)
};

struct MlpStack {
  std::vector<MlpLayer> layers;
};

// Functional layer: weight functions expanded in the network basis, one
// (out x in) coefficient matrix per basis function, plus optional bias
// functions as an (out x ell) coefficient matrix (0 x 0 when absent).
struct FuncLayer {
  std::vector<Eigen::MatrixXd> coeff;
  Eigen::MatrixXd bias_coeff;
};

struct FaeNetwork {
  NetConfig cfg;
  Activation act = Activation::tanh_fn;
  int p = 0;  // data dimension
  BasisSystem net_basis;
  BasisSystem data_basis;

  std::vector<Eigen::MatrixXd> enc_coeff;  // p matrices, q1 x ell
  Eigen::VectorXd enc_bias;                // q1 (scalar bias)
  MlpStack encoder_mlp;                    // q1 -> w1 -> s
  MlpStack decoder_mlp;                    // s -> q3
  std::vector<FuncLayer> dec;              // q3 -> u1 -> u2 -> p

  // Precomputed contractions: CrossGram[u][v] = <b_u^net, b_v^data> and the
  // network basis evaluated on the data quadrature grid.
  Eigen::MatrixXd cross_gram;  // ell x m
  Eigen::MatrixXd net_quad;    // G x ell

  int q1() const { return cfg.layer_widths[0]; }
  int w1() const { return cfg.layer_widths[1]; }
  int s() const { return cfg.layer_widths[2]; }
  int q3() const { return cfg.layer_widths[3]; }
  int u1() const { return cfg.layer_widths[4]; }
  int u2() const { return cfg.layer_widths[5]; }
};

FaeNetwork build_network(const NetConfig& cfg, const BasisSystem& data_basis, int p);

struct MlpLayerGrad {
  Eigen::MatrixXd W;
  Eigen::VectorXd b, gamma, eta;
};
struct FuncLayerGrad {
  std::vector<Eigen::MatrixXd> coeff;
  Eigen::MatrixXd bias_coeff;
};
struct FaeGradients {
  std::vector<Eigen::MatrixXd> enc_coeff;
  Eigen::VectorXd enc_bias;
  std::vector<MlpLayerGrad> mlp;  // three layers in network order
  std::vector<FuncLayerGrad> dec;
};
FaeGradients zero_gradients(const FaeNetwork& net);

// Trainable parameters (and matching gradient slots) in one fixed order;
// running moments are excluded. Used by the optimizer and by finite
// difference checks.
std::vector<double*> parameter_view(FaeNetwork& net);
std::vector<double*> gradient_view(FaeGradients& grads);

struct MlpLayerCache {
  Eigen::MatrixXd input, u, uhat, act_out, out;
  Eigen::VectorXd mu, var;
  Eigen::MatrixXd mask;  // dropout keep mask, already scaled by 1/tau
  bool batch_stats = false;
  bool dropped = false;
};

// Decoder activations on the quadrature grid, stored as (width, B*G)
// matrices whose g-th column block of width B holds grid point g.
struct DecoderCache {
  Eigen::MatrixXd x3;
  Eigen::MatrixXd z1, y1, z2, y2, yhat;
  Eigen::MatrixXd w2grid, w3grid;        // flattened per-grid weight matrices
  Eigen::MatrixXd bias1grid, bias2grid;  // (u x G)
};

struct ForwardCache {
  std::vector<int> idx;
  bool train = false;
  Eigen::MatrixXd y;  // inputs on the grid, same layout as yhat
  std::vector<Eigen::MatrixXd> enc_feats;  // p of (ell x B)
  Eigen::MatrixXd z_enc, x1;
  std::vector<MlpLayerCache> mlp;
  Eigen::MatrixXd latent;  // s x B
  DecoderCache decoder;
};

struct Reconstruction {
  Eigen::MatrixXd grid;                 // (p, B*G)
  std::vector<Eigen::MatrixXd> coeffs;  // per sample, p x m (grid projection)
};

/**
 * Forward pass over a batch of samples (indices into the dataset). Train mode
 * samples dropout masks and, for batches of at least 8, normalizes with batch
 * statistics (updating the running moments); smaller batches and eval mode
 * normalize with the running moments, which at initialization is the identity
 * map. The RNG drives dropout only.
 */
Reconstruction forward(const FaeNetwork& net, const FunctionalDataset& data,
                       const std::vector<int>& idx, Mode mode, ForwardCache* cache,
                       std::mt19937_64* rng = nullptr);

// Latent embedding of the whole dataset (eval mode, batched internally).
Eigen::MatrixXd embed(const FaeNetwork& net, const FunctionalDataset& data);

double reconstruction_loss(const FaeNetwork& net, const ForwardCache& cache);
double orthogonality_penalty(const FaeNetwork& net);
// Gradient of the orthogonality penalty with respect to each encoder
// coefficient matrix: S M G with S = 2 offdiag(P) + 4 diag(P - I).
std::vector<Eigen::MatrixXd> orthogonality_grad(const FaeNetwork& net);

struct RoughnessValue {
  double l1 = 0.0;        // sum of |coefficients| over decoder weights/biases
  double integral = 0.0;  // diagnostic sum of int (w'')^2, not differentiated
};
RoughnessValue roughness_penalty(const FaeNetwork& net);

double clustering_loss(const Eigen::MatrixXd& latent, const std::vector<int>& labels);
Eigen::MatrixXd clustering_loss_grad(const Eigen::MatrixXd& latent,
                                     const std::vector<int>& labels);

struct LossBreakdown {
  double recon = 0.0;
  double orth = 0.0;
  double rough_l1 = 0.0;
  double rough_integral = 0.0;
  double clust = 0.0;
  double total(const LossWeights& w) const {
    return recon + w.lambda_w * (orth + rough_l1) + w.lambda_c * clust;
  }
};
// `labels` are per-batch-row cluster ids; pass an empty vector when the
// clustering term is off.
LossBreakdown loss_breakdown(const FaeNetwork& net, const ForwardCache& cache,
                             const std::vector<int>& labels);

/**
 * Analytic gradients of recon_weight * L_r + lambda_w (orthogonality + l1
 * roughness) + lambda_c * L_c for the batch the cache was built from. The
 * clustering term treats the partition as fixed; its mean terms cancel, so
 * the gradient is exact whether or not means are re-expanded.
 */
FaeGradients backward(const FaeNetwork& net, const ForwardCache& cache,
                      const std::vector<int>& labels, const LossWeights& weights,
                      double recon_weight = 1.0);

// Exposed for the decoder capacity check: run only the three functional
// decoder layers on a given bottleneck activation matrix (q3 x B).
Eigen::MatrixXd decoder_forward(const FaeNetwork& net, const Eigen::MatrixXd& x3,
                                DecoderCache* cache);
void decoder_backward(const FaeNetwork& net, const DecoderCache& cache,
                      const Eigen::MatrixXd& dyhat, FaeGradients& grads,
                      Eigen::MatrixXd* dx3 = nullptr);

// m <- beta m + (1 - beta) g; theta <- theta - alpha m.
void sgd_momentum_step(FaeNetwork& net, const FaeGradients& grads, FaeGradients& momentum,
                       double alpha, double beta);

/**
 * One epoch of mini-batch training: shuffles the sample order, then runs
 * forward/backward/update over consecutive batches. `labels` (dataset-sized)
 * feeds the clustering term; empty disables it. Returns the sample-weighted
 * mean total loss. `decoder_only` zeroes every non-decoder gradient block.
 */
double train_epoch(FaeNetwork& net, const FunctionalDataset& data,
                   const std::vector<int>& labels, const LossWeights& weights,
                   FaeGradients& momentum, std::mt19937_64& rng, bool decoder_only = false);

// Pretraining: epochs of reconstruction-only training (lambda_c = 0). Throws
// NumericError when an epoch loss exceeds 1e3 x the first epoch loss.
void pretrain(FaeNetwork& net, const FunctionalDataset& data, int epochs);

// Full network state (config, basis recipe, every parameter and running
// moment) as JSON. Doubles survive the round trip bit for bit.
void save_checkpoint(const FaeNetwork& net, const std::string& path);
FaeNetwork load_checkpoint(const std::string& path);

}  // namespace faeclust
