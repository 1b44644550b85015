#include "netslice/similarity.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace netslice::similarity {

std::vector<DefaultSample> collect_default_samples(std::span<const AgentStep> trace, int agent,
                                                   const PartitionAction& default_action) {
  std::vector<DefaultSample> out;
  for (const auto& step : trace) {
    if (!step.action.approx_equal(default_action)) continue;
    DefaultSample s;
    s.x.resize(step.state.size() + 1);
    s.x << step.state, step.reward;
    s.agent = agent;
    s.default_action = default_action;
    out.push_back(std::move(s));
  }
  if (out.empty())
    throw EmptySetError("agent " + std::to_string(agent) + " has no steps under the default action");
  return out;
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(std::span<const DefaultSample> samples) {
  if (samples.empty()) throw EmptySetError("cannot standardize an empty sample set");
  const auto d = samples.front().x.size();
  Standardizer st;
  st.mean = Eigen::VectorXd::Zero(d);
  for (const auto& s : samples) {
    if (s.x.size() != d) throw DimensionError("samples differ in length");
    st.mean += s.x;
  }
  st.mean /= static_cast<double>(samples.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& s : samples) var += (s.x - st.mean).array().square().matrix();
  var /= static_cast<double>(samples.size());
  st.scale = var.array().sqrt().matrix();
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(st.scale(i) > 1e-12)) st.scale(i) = 1.0;
  return st;
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
  if (x.size() != mean.size()) throw DimensionError("standardizer: sample length mismatch");
  return ((x - mean).array() / scale.array()).matrix();
}

namespace {

std::vector<int> chain(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

Eigen::MatrixXd standardized_matrix(const Standardizer& st, std::span<const DefaultSample> samples,
                                    std::span<const std::size_t> idx) {
  Eigen::MatrixXd x(st.mean.size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = st.apply(samples[idx[j]].x);
  return x;
}

}  // namespace

VaeTrainResult vae_train(std::span<const DefaultSample> samples, const VaeConfig& cfg, std::uint64_t seed) {
  if (samples.size() < std::max<std::size_t>(cfg.min_samples, 1))
    throw EmptySetError("VAE training needs at least " + std::to_string(cfg.min_samples) + " samples, got " +
                        std::to_string(samples.size()));
  if (cfg.latent_dim < 1 || cfg.batch_size < 1 || cfg.epochs < 0) throw ConfigError("invalid VAE configuration");

  nn::Rng rng(seed);
  VaeTrainResult result;
  auto& model = result.model;
  model.kl_weight = cfg.kl_weight;
  model.latent_dim = cfg.latent_dim;
  model.standardizer = Standardizer::fit(samples);
  const int d = static_cast<int>(model.standardizer.mean.size());
  const int latent = cfg.latent_dim;
  model.encoder = nn::Mlp<double>(chain(d, cfg.encoder_hidden, 2 * latent), nn::Activation::Relu,
                                  nn::Activation::Identity, rng);
  model.decoder = nn::Mlp<double>(chain(latent, cfg.decoder_hidden, d), nn::Activation::Relu,
                                  nn::Activation::Identity, rng);
  nn::AdamState<double> enc_opt(model.encoder), dec_opt(model.decoder);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double alpha = cfg.kl_weight;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Eigen::MatrixXd x = standardized_matrix(model.standardizer, samples, idx);
      const auto b = x.cols();
      const double inv_b = 1.0 / static_cast<double>(b);

      const auto enc = model.encoder.forward(x);
      const Eigen::MatrixXd mu = enc.output().topRows(latent);
      const Eigen::MatrixXd logvar = enc.output().bottomRows(latent);
      const Eigen::MatrixXd sigma = (0.5 * logvar.array()).exp().matrix();
      Eigen::MatrixXd eps(latent, b);
      for (Eigen::Index j = 0; j < b; ++j)
        for (Eigen::Index i = 0; i < latent; ++i) eps(i, j) = unit(rng);
      const Eigen::MatrixXd z = mu + sigma.cwiseProduct(eps);
      const auto dec = model.decoder.forward(z);
      const Eigen::MatrixXd err = dec.output() - x;

      const double rec = err.squaredNorm();
      const double kl = 0.5 * (sigma.array().square() + mu.array().square() - 1.0 - logvar.array()).sum();
      const double batch_loss = (rec + alpha * kl) * inv_b;
      if (!std::isfinite(batch_loss))
        throw NumericError("VAE loss diverged in epoch " + std::to_string(epoch), epoch);
      epoch_loss += batch_loss * static_cast<double>(b);

      const auto dec_grads = model.decoder.backward(dec, 2.0 * inv_b * err);
      const Eigen::MatrixXd& dz = dec_grads.input;
      Eigen::MatrixXd dhead(2 * latent, b);
      dhead.topRows(latent) = dz + alpha * inv_b * mu;
      dhead.bottomRows(latent) =
          (dz.array() * eps.array() * 0.5 * sigma.array() + alpha * inv_b * 0.5 * (sigma.array().square() - 1.0))
              .matrix();
      const auto enc_grads = model.encoder.backward(enc, dhead);
      try {
        nn::adam_step(dec_opt, model.decoder, dec_grads, cfg.learning_rate);
        nn::adam_step(enc_opt, model.encoder, enc_grads, cfg.learning_rate);
      } catch (const NumericError&) {
        throw NumericError("VAE gradients diverged in epoch " + std::to_string(epoch), epoch);
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(samples.size()));
  }
  return result;
}

LatentStats encode(const VaeModel& model, const Eigen::VectorXd& x, int agent) {
  if (x.size() != model.input_dim())
    throw DimensionError("encode: sample has " + std::to_string(x.size()) + " features, model expects " +
                         std::to_string(model.input_dim()));
  const Eigen::VectorXd h = model.encoder.predict(model.standardizer.apply(x));
  LatentStats s;
  s.mu = h.head(model.latent_dim);
  s.sigma = (0.5 * h.tail(model.latent_dim).array()).exp().matrix();
  s.agent = agent;
  return s;
}

double reconstruction_mse(const VaeModel& model, std::span<const DefaultSample> samples) {
  if (samples.empty()) throw EmptySetError("reconstruction_mse: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    const Eigen::VectorXd x = model.standardizer.apply(s.x);
    const Eigen::VectorXd mu = model.encoder.predict(x).head(model.latent_dim);
    total += (model.decoder.predict(mu) - x).squaredNorm();
  }
  return total / static_cast<double>(samples.size() * static_cast<std::size_t>(model.input_dim()));
}

// ---------------------------------------------------------------------------

const char* mode_name(DistanceMode m) { return m == DistanceMode::Exact ? "exact" : "simplified"; }

DistanceMode parse_mode(const std::string& s) {
  if (s == "exact") return DistanceMode::Exact;
  if (s == "simplified") return DistanceMode::Simplified;
  throw ConfigError("unknown distance mode '" + s + "'");
}

double median_sigma(std::span<const LatentStats> latents) {
  std::vector<double> all;
  for (const auto& l : latents) all.insert(all.end(), l.sigma.data(), l.sigma.data() + l.sigma.size());
  if (all.empty()) throw EmptySetError("median_sigma: no latents");
  const auto mid = all.begin() + static_cast<std::ptrdiff_t>(all.size() / 2);
  std::nth_element(all.begin(), mid, all.end());
  if (all.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(all.begin(), mid);
  return 0.5 * (lower + upper);
}

DistanceValue inter_agent_distance(std::span<const LatentStats> source, std::span<const LatentStats> target,
                                   const DistanceOptions& opt) {
  if (source.empty() || target.empty()) throw EmptySetError("inter_agent_distance: empty latent set");

  bool simplified = opt.mode == DistanceMode::Simplified;
  if (simplified) {
    for (const auto* set : {&source, &target})
      for (const auto& l : *set)
        if (l.sigma.maxCoeff() > opt.simplified_sigma_limit) simplified = false;
  }

  double sum = 0.0;
  if (simplified) {
    double sigma = opt.shared_sigma;
    if (!(sigma > 0.0)) {
      std::vector<LatentStats> both(source.begin(), source.end());
      both.insert(both.end(), target.begin(), target.end());
      sigma = median_sigma(both);
    }
    for (const auto& p : source)
      for (const auto& q : target) sum += kl_mean_simplified(p.mu, q.mu, sigma);
  } else {
    for (const auto& p : source)
      for (const auto& q : target) sum += opt.source_first ? kl_gaussian(p, q) : kl_gaussian(q, p);
  }
  return {sum / (static_cast<double>(source.size()) * static_cast<double>(target.size())),
          simplified ? DistanceMode::Simplified : DistanceMode::Exact};
}

const DistanceEntry& DistanceMatrix::at(int source, int target) const {
  for (const auto& e : entries)
    if (e.source == source && e.target == target) return e;
  throw EmptySetError("no distance from " + std::to_string(source) + " to " + std::to_string(target));
}

std::vector<DistanceEntry> DistanceMatrix::row(int target) const {
  std::vector<DistanceEntry> out;
  for (const auto& e : entries)
    if (e.target == target) out.push_back(e);
  return out;
}

DistanceMatrix distance_matrix(const std::map<int, std::vector<LatentStats>>& latents, std::span<const int> sources,
                               std::span<const int> targets, const DistanceOptions& options,
                               std::size_t min_samples) {
  auto get = [&](int id) -> const std::vector<LatentStats>& {
    auto it = latents.find(id);
    if (it == latents.end() || it->second.size() < min_samples)
      throw EmptySetError("agent " + std::to_string(id) + " has fewer than " + std::to_string(min_samples) +
                          " default-action samples");
    return it->second;
  };
  DistanceMatrix m;
  for (int k : targets) {
    const auto& zk = get(k);
    for (int i : sources) {
      if (i == k) continue;
      const auto& zi = get(i);
      const auto d = inter_agent_distance(zi, zk, options);
      m.entries.push_back({i, k, d.value, zi.size(), zk.size(), d.mode});
    }
  }
  return m;
}

int select_source(const DistanceMatrix& distances, int target) {
  const auto row = distances.row(target);
  if (row.empty()) throw EmptySetError("no candidate sources for target " + std::to_string(target));
  const DistanceEntry* best = &row.front();
  for (const auto& e : row)
    if (e.distance < best->distance || (e.distance == best->distance && e.source < best->source)) best = &e;
  return best->source;
}

void write_distances_csv(const DistanceMatrix& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "source,target,distance,n_source,n_target,mode\n";
  char buf[64];
  for (const auto& e : m.entries) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.distance);
    os << e.source << ',' << e.target << ',' << buf << ',' << e.n_source << ',' << e.n_target << ','
       << mode_name(e.mode) << '\n';
  }
}

void write_latents_csv(const std::map<int, std::vector<LatentStats>>& latents, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  const auto dim = latents.empty() || latents.begin()->second.empty() ? 0 : latents.begin()->second.front().mu.size();
  os << "agent,sample";
  for (Eigen::Index l = 0; l < dim; ++l) os << ",mu" << l;
  for (Eigen::Index l = 0; l < dim; ++l) os << ",sigma" << l;
  os << '\n';
  char buf[64];
  for (const auto& [agent, set] : latents) {
    for (std::size_t n = 0; n < set.size(); ++n) {
      os << agent << ',' << n;
      for (Eigen::Index l = 0; l < dim; ++l) {
        std::snprintf(buf, sizeof(buf), "%.17g", set[n].mu(l));
        os << ',' << buf;
      }
      for (Eigen::Index l = 0; l < dim; ++l) {
        std::snprintf(buf, sizeof(buf), "%.17g", set[n].sigma(l));
        os << ',' << buf;
      }
      os << '\n';
    }
  }
}

}  // namespace netslice::similarity
