#pragma once

// Inter-agent similarity from the joint (state, reward) distribution observed
// under a common default action: a VAE shared by all agents maps samples to
// Gaussian posteriors, and the distance between two agents is the mean
// pairwise KL divergence between their posteriors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "netslice/env.hpp"
#include "netslice/tinynn.hpp"

namespace netslice::similarity {

/// One step of an agent's history: the observation produced by `action` and
/// the reward it earned.
struct AgentStep {
  std::int64_t t = 0;
  Eigen::VectorXd state;
  PartitionAction action;
  double reward = 0.0;
};

struct DefaultSample {
  Eigen::VectorXd x;  // [state, reward]
  int agent = 0;
  PartitionAction default_action;
};

/// Keeps exactly the steps whose action equals `default_action` (within
/// 1e-9). Throws EmptySetError naming the agent when none match.
std::vector<DefaultSample> collect_default_samples(std::span<const AgentStep> trace, int agent,
                                                   const PartitionAction& default_action);

// ---------------------------------------------------------------------------
// Closed-form divergences

/// KL(N(mu_p, diag(sigma_p^2)) || N(mu_q, diag(sigma_q^2))), sigmas are
/// standard deviations.
template <typename D1, typename D2, typename D3, typename D4>
typename D1::Scalar kl_gaussian(const Eigen::MatrixBase<D1>& mu_p, const Eigen::MatrixBase<D2>& sigma_p,
                                const Eigen::MatrixBase<D3>& mu_q, const Eigen::MatrixBase<D4>& sigma_q) {
  using S = typename D1::Scalar;
  const auto dim = mu_p.size();
  if (sigma_p.size() != dim || mu_q.size() != dim || sigma_q.size() != dim)
    throw DimensionError("kl_gaussian: mean/sigma dimensions differ");
  S total = 0;
  for (Eigen::Index l = 0; l < dim; ++l) {
    const S sq = sigma_q(l);
    if (!(sq > S(0))) throw SingularityError("kl_gaussian: zero variance in the second distribution");
    const S sp = sigma_p(l);
    if (sp < S(0)) throw DomainError("kl_gaussian: negative sigma");
    if (sp == S(0)) return std::numeric_limits<S>::infinity();
    // rho - 1 - log(rho) with rho = sigma_p^2 / sigma_q^2, written through
    // log1p so that rho == 1 contributes exactly zero.
    const S rho_minus_one = (sp * sp - sq * sq) / (sq * sq);
    const S diff = mu_p(l) - mu_q(l);
    total += (rho_minus_one - std::log1p(rho_minus_one)) + diff * diff / (sq * sq);
  }
  return std::max(S(0), S(0.5) * total);
}

/// Equal isotropic covariances sigma^2 I: sum (mu_n - mu_m)^2 / (2 sigma^2).
template <typename D1, typename D2>
typename D1::Scalar kl_mean_simplified(const Eigen::MatrixBase<D1>& mu_n, const Eigen::MatrixBase<D2>& mu_m,
                                       typename D1::Scalar sigma) {
  if (!(sigma > 0)) throw DomainError("kl_mean_simplified: sigma must be positive");
  if (mu_n.size() != mu_m.size()) throw DimensionError("kl_mean_simplified: mean dimensions differ");
  return (mu_n - mu_m).squaredNorm() / (2 * sigma * sigma);
}

struct LatentStats {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  int agent = 0;
};

inline double kl_gaussian(const LatentStats& p, const LatentStats& q) {
  return kl_gaussian(p.mu, p.sigma, q.mu, q.sigma);
}

// ---------------------------------------------------------------------------
// VAE

/// Per-dimension z-score; constant dimensions keep unit scale.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(std::span<const DefaultSample> samples);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

struct VaeConfig {
  std::vector<int> encoder_hidden{64, 24};
  int latent_dim = 4;
  std::vector<int> decoder_hidden{24, 64};
  double kl_weight = 1e-3;
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t min_samples = 50;
};

struct VaeModel {
  nn::Mlp<double> encoder;  // input -> ... -> 2L (mean, log-variance)
  nn::Mlp<double> decoder;  // L -> ... -> input
  double kl_weight = 1e-3;
  int latent_dim = 4;
  Standardizer standardizer;

  Eigen::Index input_dim() const { return encoder.input_size(); }
};

struct VaeTrainResult {
  VaeModel model;
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
};

/// Minibatch Adam on ||x - x_hat||^2 + alpha * KL(q(z|x) || N(0, I)) over
/// standardized features. Throws NumericError with the epoch index on
/// divergence, EmptySetError when fewer than `min_samples` samples are given.
VaeTrainResult vae_train(std::span<const DefaultSample> samples, const VaeConfig& config, std::uint64_t seed);

/// Posterior of one raw (unstandardized) sample.
LatentStats encode(const VaeModel& model, const Eigen::VectorXd& x, int agent = 0);

/// Mean squared reconstruction error per standardized feature, decoding the
/// posterior mean.
double reconstruction_mse(const VaeModel& model, std::span<const DefaultSample> samples);

// ---------------------------------------------------------------------------
// Distances

enum class DistanceMode { Exact, Simplified };
const char* mode_name(DistanceMode m);
DistanceMode parse_mode(const std::string& s);

struct DistanceOptions {
  DistanceMode mode = DistanceMode::Simplified;
  /// Shared sigma for the simplified form; <= 0 uses the median posterior
  /// sigma of the two sets.
  double shared_sigma = 0.0;
  /// The simplified form is used only when every posterior sigma is at most this.
  double simplified_sigma_limit = 1e-3;
  /// KL(source || target) when true, KL(target || source) otherwise.
  bool source_first = true;
};

struct DistanceValue {
  double value = 0.0;
  DistanceMode mode = DistanceMode::Exact;  // form actually evaluated
};

/// Mean KL over all (source sample, target sample) pairs.
DistanceValue inter_agent_distance(std::span<const LatentStats> source, std::span<const LatentStats> target,
                                   const DistanceOptions& options = {});

double median_sigma(std::span<const LatentStats> latents);

struct DistanceEntry {
  int source = 0;
  int target = 0;
  double distance = 0.0;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  DistanceMode mode = DistanceMode::Exact;
};

struct DistanceMatrix {
  std::vector<DistanceEntry> entries;

  const DistanceEntry& at(int source, int target) const;
  std::vector<DistanceEntry> row(int target) const;  // all candidate sources of `target`
};

/// Distances from every source in `sources` to every target in `targets`,
/// skipping identical ids.
DistanceMatrix distance_matrix(const std::map<int, std::vector<LatentStats>>& latents,
                               std::span<const int> sources, std::span<const int> targets,
                               const DistanceOptions& options = {}, std::size_t min_samples = 1);

/// argmin over candidates of the distance to `target`; ties go to the lowest id.
int select_source(const DistanceMatrix& distances, int target);

void write_distances_csv(const DistanceMatrix& m, const std::filesystem::path& path);
void write_latents_csv(const std::map<int, std::vector<LatentStats>>& latents, const std::filesystem::path& path);

}  // namespace netslice::similarity
