#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "acr/features.hpp"
#include "acr/rng.hpp"

namespace acr {

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double inverse_softplus(double y) {
  if (y <= 0.0) throw std::invalid_argument("inverse_softplus: y must be > 0");
  // log(exp(y) - 1), stable for large y.
  return y > 30.0 ? y : std::log(std::expm1(y));
}

struct Hyperparams {
  double learning_rate = 0.005;
  double lr_decay = 0.995;  // per-epoch multiplier
  int epochs = 300;
  int batch_size = 32;
  int mc_samples = 1;          // weight draws per training step
  double prior_std = 1.0;
  double kl_weight_scale = 1.0;  // multiplies the KL term; 0 drops it
  int kl_anneal_epochs = 30;   // KL weight ramps 0 -> 1 over this many epochs
  int patience = 30;           // early-stop patience on validation NLL
  double val_fraction = 0.15;
  double grad_clip = 1000.0;   // global L2 norm cap; 0 disables
  double sigma_floor = 1e-3;   // lower bound on the aleatoric std, vehicles
  double rho_init = -3.0;
  double mu_init_range = 0.05;
  std::vector<int> hidden = {32, 32};
};

enum class BaclMode { bayesian, deterministic };

inline std::string to_string(BaclMode m) {
  return m == BaclMode::bayesian ? "bayesian" : "deterministic";
}

inline BaclMode bacl_mode_from_string(const std::string& s) {
  if (s == "bayesian") return BaclMode::bayesian;
  if (s == "deterministic") return BaclMode::deterministic;
  throw std::invalid_argument("unknown model mode: " + s);
}

/// One affine layer with a diagonal Gaussian posterior per weight. The
/// posterior std is softplus(rho), kept positive by construction. Weights are
/// stored row-major: w[i * out + j] connects input i to output j.
struct VariationalLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w_mu, w_rho;
  std::vector<double> b_mu, b_rho;
};

/// A sampled (or mean) concrete weight set; mirrors the layer shapes.
struct WeightDraw {
  struct Layer {
    std::vector<double> w, b;
  };
  std::vector<Layer> layers;
};

/// Standard-normal noise per weight entry; all zeros gives the posterior mean.
struct EpsDraw {
  struct Layer {
    std::vector<double> w, b;
  };
  std::vector<Layer> layers;
};

struct PredictiveDistribution {
  double mean = 0.0;        // vehicles, clamped at 0
  double raw_mean = 0.0;    // pre-clamp, for diagnostics
  double var_epistemic = 0.0;
  double var_aleatoric = 0.0;
  int sample_count = 0;

  double var_total() const { return var_epistemic + var_aleatoric; }
};

/// The Bayesian arrival curve learner: a small feedforward network with a
/// mean head and a softplus aleatoric-std head, a Gaussian variational
/// posterior over every weight, and a record of how it was trained. In
/// deterministic mode it degenerates to a plain feedforward network (the
/// lane-choice neural network baseline).
struct BaclModel {
  std::vector<VariationalLayer> layers;
  BaclMode mode = BaclMode::bayesian;
  Normalization norm;
  FeatureMode feature_mode = FeatureMode::per_lane;
  Hyperparams hyper;
  std::uint64_t seed = 0;
  std::string lane;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += 2 * (l.w_mu.size() + l.b_mu.size());
    return n;
  }

  void initialize(int in_dim, const Hyperparams& hp, Rng& rng) {
    hyper = hp;
    layers.clear();
    std::vector<int> dims;
    dims.push_back(in_dim);
    for (int h : hp.hidden) dims.push_back(h);
    dims.push_back(2);  // mean head + aleatoric head
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
      VariationalLayer l;
      l.in = dims[k];
      l.out = dims[k + 1];
      l.w_mu.resize(static_cast<std::size_t>(l.in) * l.out);
      l.w_rho.assign(l.w_mu.size(), hp.rho_init);
      l.b_mu.resize(l.out);
      l.b_rho.assign(l.b_mu.size(), hp.rho_init);
      for (auto& v : l.w_mu) v = rng.uniform(-hp.mu_init_range, hp.mu_init_range);
      for (auto& v : l.b_mu) v = rng.uniform(-hp.mu_init_range, hp.mu_init_range);
      layers.push_back(std::move(l));
    }
    norm = Normalization::identity(static_cast<std::size_t>(in_dim));
  }

  /// Flattened parameter vector (per layer: w_mu, b_mu, w_rho, b_rho),
  /// used by the finite-difference tests.
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& l : layers) {
      p.insert(p.end(), l.w_mu.begin(), l.w_mu.end());
      p.insert(p.end(), l.b_mu.begin(), l.b_mu.end());
      p.insert(p.end(), l.w_rho.begin(), l.w_rho.end());
      p.insert(p.end(), l.b_rho.begin(), l.b_rho.end());
    }
    return p;
  }

  void set_parameters(const std::vector<double>& p) {
    if (p.size() != parameter_count())
      throw std::invalid_argument("set_parameters: size mismatch");
    std::size_t k = 0;
    auto take = [&](std::vector<double>& dst) {
      std::copy(p.begin() + static_cast<std::ptrdiff_t>(k),
                p.begin() + static_cast<std::ptrdiff_t>(k + dst.size()), dst.begin());
      k += dst.size();
    };
    for (auto& l : layers) {
      take(l.w_mu);
      take(l.b_mu);
      take(l.w_rho);
      take(l.b_rho);
    }
  }
};

inline EpsDraw zero_eps(const BaclModel& model) {
  EpsDraw e;
  for (const auto& l : model.layers) {
    EpsDraw::Layer el;
    el.w.assign(l.w_mu.size(), 0.0);
    el.b.assign(l.b_mu.size(), 0.0);
    e.layers.push_back(std::move(el));
  }
  return e;
}

inline EpsDraw random_eps(const BaclModel& model, Rng& rng) {
  EpsDraw e;
  for (const auto& l : model.layers) {
    EpsDraw::Layer el;
    el.w.resize(l.w_mu.size());
    el.b.resize(l.b_mu.size());
    for (auto& v : el.w) v = rng.normal();
    for (auto& v : el.b) v = rng.normal();
    e.layers.push_back(std::move(el));
  }
  return e;
}

/// Reparameterized weight draw: w = mu + softplus(rho) * eps, elementwise.
inline WeightDraw sample_weights(const BaclModel& model, const EpsDraw& eps) {
  if (eps.layers.size() != model.layers.size())
    throw std::invalid_argument("sample_weights: eps shape mismatch");
  WeightDraw d;
  d.layers.resize(model.layers.size());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& l = model.layers[k];
    const auto& e = eps.layers[k];
    auto& out = d.layers[k];
    out.w.resize(l.w_mu.size());
    out.b.resize(l.b_mu.size());
    for (std::size_t i = 0; i < l.w_mu.size(); ++i)
      out.w[i] = l.w_mu[i] + softplus(l.w_rho[i]) * e.w[i];
    for (std::size_t i = 0; i < l.b_mu.size(); ++i)
      out.b[i] = l.b_mu[i] + softplus(l.b_rho[i]) * e.b[i];
  }
  return d;
}

namespace detail {

struct ForwardCache {
  // activations[0] is the input; the last entry is the raw 2-wide output.
  std::vector<std::vector<double>> activations;
};

// x must already be normalized. Returns (mean, sigma_raw) where the aleatoric
// std is softplus(sigma_raw) + sigma_floor.
inline void forward(const BaclModel& model, const WeightDraw& w,
                    const std::vector<double>& x, ForwardCache& cache) {
  cache.activations.assign(1, x);
  const std::vector<double>* prev = &cache.activations[0];
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& l = model.layers[k];
    const auto& wd = w.layers[k];
    std::vector<double> z(static_cast<std::size_t>(l.out));
    for (int j = 0; j < l.out; ++j) {
      double acc = wd.b[static_cast<std::size_t>(j)];
      for (int i = 0; i < l.in; ++i)
        acc += (*prev)[static_cast<std::size_t>(i)] *
               wd.w[static_cast<std::size_t>(i) * l.out + j];
      z[static_cast<std::size_t>(j)] = acc;
    }
    bool hidden = k + 1 < model.layers.size();
    if (hidden)
      for (auto& v : z) v = std::tanh(v);
    cache.activations.push_back(std::move(z));
    prev = &cache.activations.back();
  }
}

struct Output {
  double mean = 0.0;
  double sigma = 0.0;      // aleatoric std, includes the floor
  double sigma_raw = 0.0;  // pre-softplus head output
};

inline Output read_output(const BaclModel& model, const ForwardCache& cache) {
  const auto& z = cache.activations.back();
  Output o;
  o.mean = z[0];
  o.sigma_raw = z[1];
  o.sigma = softplus(z[1]) + model.hyper.sigma_floor;
  return o;
}

inline double gaussian_nll(double y, double mean, double sigma) {
  double r = y - mean;
  return 0.5 * std::log(2.0 * std::numbers::pi) + std::log(sigma) +
         r * r / (2.0 * sigma * sigma);
}

}  // namespace detail

/// Closed-form KL between the diagonal Gaussian posterior and the zero-mean
/// Gaussian prior, summed over every weight and bias.
inline double kl_divergence(const BaclModel& model) {
  double prior = model.hyper.prior_std;
  double kl = 0.0;
  auto term = [&](double mu, double rho) {
    double sq = softplus(rho);
    return std::log(prior / sq) + (sq * sq + mu * mu) / (2.0 * prior * prior) - 0.5;
  };
  for (const auto& l : model.layers) {
    for (std::size_t i = 0; i < l.w_mu.size(); ++i) kl += term(l.w_mu[i], l.w_rho[i]);
    for (std::size_t i = 0; i < l.b_mu.size(); ++i) kl += term(l.b_mu[i], l.b_rho[i]);
  }
  return kl;
}

struct Gradients {
  struct Layer {
    std::vector<double> w_mu, b_mu, w_rho, b_rho;
  };
  std::vector<Layer> layers;

  static Gradients zeros(const BaclModel& model) {
    Gradients g;
    for (const auto& l : model.layers) {
      Layer gl;
      gl.w_mu.assign(l.w_mu.size(), 0.0);
      gl.b_mu.assign(l.b_mu.size(), 0.0);
      gl.w_rho.assign(l.w_rho.size(), 0.0);
      gl.b_rho.assign(l.b_rho.size(), 0.0);
      g.layers.push_back(std::move(gl));
    }
    return g;
  }

  std::vector<double> flatten() const {
    std::vector<double> p;
    for (const auto& l : layers) {
      p.insert(p.end(), l.w_mu.begin(), l.w_mu.end());
      p.insert(p.end(), l.b_mu.begin(), l.b_mu.end());
      p.insert(p.end(), l.w_rho.begin(), l.w_rho.end());
      p.insert(p.end(), l.b_rho.begin(), l.b_rho.end());
    }
    return p;
  }

  double global_norm() const {
    double s = 0.0;
    for (const auto& l : layers) {
      for (double v : l.w_mu) s += v * v;
      for (double v : l.b_mu) s += v * v;
      for (double v : l.w_rho) s += v * v;
      for (double v : l.b_rho) s += v * v;
    }
    return std::sqrt(s);
  }

  void scale(double f) {
    for (auto& l : layers) {
      for (double& v : l.w_mu) v *= f;
      for (double& v : l.b_mu) v *= f;
      for (double& v : l.w_rho) v *= f;
      for (double& v : l.b_rho) v *= f;
    }
  }
};

/// Negative ELBO of a minibatch: kl_weight * KL[q || p] plus the summed
/// heteroscedastic Gaussian negative log-likelihood, averaged over the given
/// weight draws. Inputs must already be normalized.
inline double negative_elbo(const BaclModel& model,
                            const std::vector<std::vector<double>>& inputs,
                            const std::vector<double>& targets,
                            const std::vector<EpsDraw>& draws, double kl_weight) {
  if (inputs.empty() || inputs.size() != targets.size())
    throw std::invalid_argument("negative_elbo: empty or mismatched minibatch");
  if (draws.empty()) throw std::invalid_argument("negative_elbo: need >= 1 draw");
  double nll = 0.0;
  detail::ForwardCache cache;
  for (const auto& eps : draws) {
    WeightDraw w = sample_weights(model, eps);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      detail::forward(model, w, inputs[i], cache);
      auto o = detail::read_output(model, cache);
      nll += detail::gaussian_nll(targets[i], o.mean, o.sigma);
    }
  }
  nll /= static_cast<double>(draws.size());
  double kl = kl_weight != 0.0 ? kl_weight * kl_divergence(model) : 0.0;
  return nll + kl;
}

/// Loss and analytic gradients of the minibatch negative ELBO with respect to
/// every (mu, rho). The likelihood path reaches rho through the sampled
/// weights scaled by eps * sigmoid(rho); the KL path is differentiated in
/// closed form.
inline double compute_gradients(const BaclModel& model,
                                const std::vector<std::vector<double>>& inputs,
                                const std::vector<double>& targets,
                                const std::vector<EpsDraw>& draws,
                                double kl_weight, Gradients& grads,
                                double* nll_out = nullptr) {
  if (inputs.empty() || inputs.size() != targets.size())
    throw std::invalid_argument("compute_gradients: empty or mismatched minibatch");
  if (draws.empty()) throw std::invalid_argument("compute_gradients: need >= 1 draw");
  grads = Gradients::zeros(model);
  double nll_total = 0.0;
  double inv_draws = 1.0 / static_cast<double>(draws.size());
  detail::ForwardCache cache;
  std::size_t n_layers = model.layers.size();

  for (const auto& eps : draws) {
    WeightDraw w = sample_weights(model, eps);
    // dL/dw accumulated over the minibatch for this draw.
    Gradients dw = Gradients::zeros(model);
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      detail::forward(model, w, inputs[s], cache);
      auto o = detail::read_output(model, cache);
      nll_total += detail::gaussian_nll(targets[s], o.mean, o.sigma);

      double r = targets[s] - o.mean;
      double d_mean = -r / (o.sigma * o.sigma);
      double d_sigma = 1.0 / o.sigma - r * r / (o.sigma * o.sigma * o.sigma);
      std::vector<double> delta = {d_mean, d_sigma * sigmoid(o.sigma_raw)};

      for (std::size_t k = n_layers; k-- > 0;) {
        const auto& l = model.layers[k];
        const auto& a_prev = cache.activations[k];
        auto& gl = dw.layers[k];
        for (int j = 0; j < l.out; ++j) {
          double d = delta[static_cast<std::size_t>(j)];
          gl.b_mu[static_cast<std::size_t>(j)] += d;
          for (int i = 0; i < l.in; ++i)
            gl.w_mu[static_cast<std::size_t>(i) * l.out + j] +=
                a_prev[static_cast<std::size_t>(i)] * d;
        }
        if (k > 0) {
          std::vector<double> prev_delta(static_cast<std::size_t>(l.in), 0.0);
          for (int i = 0; i < l.in; ++i) {
            double acc = 0.0;
            for (int j = 0; j < l.out; ++j)
              acc += w.layers[k].w[static_cast<std::size_t>(i) * l.out + j] *
                     delta[static_cast<std::size_t>(j)];
            double a = cache.activations[k][static_cast<std::size_t>(i)];
            prev_delta[static_cast<std::size_t>(i)] = acc * (1.0 - a * a);
          }
          delta = std::move(prev_delta);
        }
      }
    }
    // Map dL/dw into the variational parameters for this draw's eps.
    for (std::size_t k = 0; k < n_layers; ++k) {
      const auto& l = model.layers[k];
      const auto& e = eps.layers[k];
      auto& gl = grads.layers[k];
      const auto& dl = dw.layers[k];
      for (std::size_t i = 0; i < l.w_mu.size(); ++i) {
        gl.w_mu[i] += dl.w_mu[i] * inv_draws;
        gl.w_rho[i] += dl.w_mu[i] * e.w[i] * sigmoid(l.w_rho[i]) * inv_draws;
      }
      for (std::size_t i = 0; i < l.b_mu.size(); ++i) {
        gl.b_mu[i] += dl.b_mu[i] * inv_draws;
        gl.b_rho[i] += dl.b_mu[i] * e.b[i] * sigmoid(l.b_rho[i]) * inv_draws;
      }
    }
  }
  nll_total *= inv_draws;

  double kl = 0.0;
  if (kl_weight != 0.0) {
    kl = kl_weight * kl_divergence(model);
    double prior2 = model.hyper.prior_std * model.hyper.prior_std;
    for (std::size_t k = 0; k < n_layers; ++k) {
      const auto& l = model.layers[k];
      auto& gl = grads.layers[k];
      for (std::size_t i = 0; i < l.w_mu.size(); ++i) {
        double sq = softplus(l.w_rho[i]);
        gl.w_mu[i] += kl_weight * l.w_mu[i] / prior2;
        gl.w_rho[i] += kl_weight * (sq / prior2 - 1.0 / sq) * sigmoid(l.w_rho[i]);
      }
      for (std::size_t i = 0; i < l.b_mu.size(); ++i) {
        double sq = softplus(l.b_rho[i]);
        gl.b_mu[i] += kl_weight * l.b_mu[i] / prior2;
        gl.b_rho[i] += kl_weight * (sq / prior2 - 1.0 / sq) * sigmoid(l.b_rho[i]);
      }
    }
  }
  return nll_total + kl;
}

inline void apply_gradients(BaclModel& model, const Gradients& grads, double lr) {
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    auto& l = model.layers[k];
    const auto& g = grads.layers[k];
    for (std::size_t i = 0; i < l.w_mu.size(); ++i) {
      l.w_mu[i] -= lr * g.w_mu[i];
      l.w_rho[i] -= lr * g.w_rho[i];
    }
    for (std::size_t i = 0; i < l.b_mu.size(); ++i) {
      l.b_mu[i] -= lr * g.b_mu[i];
      l.b_rho[i] -= lr * g.b_rho[i];
    }
  }
}

/// One plain SGD step on the minibatch negative ELBO: mu <- mu - lr * d_mu,
/// rho <- rho - lr * d_rho. Returns the pre-update loss.
inline double gradient_step(BaclModel& model,
                            const std::vector<std::vector<double>>& inputs,
                            const std::vector<double>& targets,
                            const std::vector<EpsDraw>& draws, double kl_weight,
                            double lr) {
  Gradients grads;
  double loss = compute_gradients(model, inputs, targets, draws, kl_weight, grads);
  if (!std::isfinite(loss))
    throw std::runtime_error("gradient_step: non-finite loss");
  apply_gradients(model, grads, lr);
  return loss;
}

struct TrainResult {
  std::vector<double> loss_trace;  // per-epoch negative ELBO over the train set
  std::vector<double> val_trace;   // per-epoch validation NLL per sample
  int epochs_run = 0;
  int best_epoch = -1;
  bool stopped_early = false;
};

/// Trains the model on raw samples: fits input normalization, initializes the
/// variational parameters, then runs minibatch SGD with the per-step KL scaled
/// by |batch| / |train set| so one epoch sums to the full negative ELBO.
/// Deterministic given the seed. Early-stops on a validation NLL plateau and
/// restores the best parameters seen.
inline TrainResult train(BaclModel& model,
                         const std::vector<TrainingSample>& samples,
                         const Hyperparams& hp, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  model.seed = seed;

  std::vector<std::vector<double>> raw;
  std::vector<double> targets;
  raw.reserve(samples.size());
  targets.reserve(samples.size());
  for (const auto& s : samples) {
    raw.push_back(to_input(s.features, model.feature_mode));
    targets.push_back(s.target);
  }
  Normalization norm = Normalization::fit(raw);
  std::vector<std::vector<double>> xs(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) xs[i] = norm.apply(raw[i]);

  Rng init_rng = Rng::stream(seed, "train.init");
  model.initialize(static_cast<int>(xs[0].size()), hp, init_rng);
  model.norm = norm;

  // Validation split for early stopping; small datasets train on everything.
  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::size_t> train_idx, val_idx;
  if (xs.size() >= 20 && hp.val_fraction > 0.0) {
    Rng split_rng = Rng::stream(seed, "train.split");
    split_rng.shuffle(order);
    auto n_val = static_cast<std::size_t>(
        std::floor(hp.val_fraction * static_cast<double>(xs.size())));
    n_val = std::max<std::size_t>(n_val, 1);
    val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  } else {
    train_idx = order;
  }
  double n_train = static_cast<double>(train_idx.size());

  Rng shuffle_rng = Rng::stream(seed, "train.shuffle");
  Rng eps_rng = Rng::stream(seed, "train.eps");

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params;
  int bad_epochs = 0;
  int diverged_epochs = 0;

  std::vector<std::vector<double>> batch_x;
  std::vector<double> batch_y;
  detail::ForwardCache cache;
  EpsDraw zero = zero_eps(model);

  // While the KL weight is still ramping up the objective keeps changing, so
  // early stopping only starts counting once the anneal has finished.
  int patience_start =
      model.mode == BaclMode::bayesian ? hp.kl_anneal_epochs : 0;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx);
    double anneal =
        hp.kl_anneal_epochs > 0
            ? std::min(1.0, static_cast<double>(epoch + 1) / hp.kl_anneal_epochs)
            : 1.0;
    double lr = hp.learning_rate * std::pow(hp.lr_decay, epoch);
    double epoch_loss = 0.0;
    std::size_t batch = static_cast<std::size_t>(std::max(hp.batch_size, 1));
    for (std::size_t ofs = 0; ofs < train_idx.size(); ofs += batch) {
      std::size_t end = std::min(ofs + batch, train_idx.size());
      batch_x.clear();
      batch_y.clear();
      for (std::size_t i = ofs; i < end; ++i) {
        batch_x.push_back(xs[train_idx[i]]);
        batch_y.push_back(targets[train_idx[i]]);
      }
      double kl_weight = 0.0;
      std::vector<EpsDraw> draws;
      if (model.mode == BaclMode::bayesian) {
        kl_weight = hp.kl_weight_scale * anneal *
                    static_cast<double>(batch_x.size()) / n_train;
        for (int d = 0; d < std::max(hp.mc_samples, 1); ++d)
          draws.push_back(random_eps(model, eps_rng));
      } else {
        draws.push_back(zero);
      }
      Gradients grads;
      double loss = compute_gradients(model, batch_x, batch_y, draws, kl_weight, grads);
      if (!std::isfinite(loss))
        throw std::runtime_error(
            "train: non-finite loss at epoch " + std::to_string(epoch) +
            ", batch starting at sample " + std::to_string(ofs));
      if (hp.grad_clip > 0.0) {
        double norm = grads.global_norm();
        if (norm > hp.grad_clip) grads.scale(hp.grad_clip / norm);
      }
      apply_gradients(model, grads, lr);
      epoch_loss += loss;
    }
    result.loss_trace.push_back(epoch_loss);

    // Divergence guard: loss far above its initial level for 5 straight epochs.
    double limit = 10.0 * std::abs(result.loss_trace.front()) + 10.0;
    diverged_epochs = epoch_loss > limit ? diverged_epochs + 1 : 0;
    if (diverged_epochs >= 5)
      throw std::runtime_error(
          "train: diverged (loss " + std::to_string(epoch_loss) + " vs initial " +
          std::to_string(result.loss_trace.front()) + " for 5 epochs)");

    double val_nll = std::numeric_limits<double>::quiet_NaN();
    if (!val_idx.empty()) {
      WeightDraw mean_w = sample_weights(model, zero);
      double acc = 0.0;
      for (std::size_t i : val_idx) {
        detail::forward(model, mean_w, xs[i], cache);
        auto o = detail::read_output(model, cache);
        acc += detail::gaussian_nll(targets[i], o.mean, o.sigma);
      }
      val_nll = acc / static_cast<double>(val_idx.size());
      if (epoch >= patience_start) {
        if (val_nll < best_val - 1e-9) {
          best_val = val_nll;
          best_params = model.parameters();
          result.best_epoch = epoch;
          bad_epochs = 0;
        } else if (++bad_epochs >= hp.patience) {
          result.val_trace.push_back(val_nll);
          result.epochs_run = epoch + 1;
          result.stopped_early = true;
          break;
        }
      }
    }
    result.val_trace.push_back(val_nll);
    result.epochs_run = epoch + 1;
  }
  if (!best_params.empty()) model.set_parameters(best_params);
  return result;
}

/// Monte-Carlo predictive distribution for a batch of raw (unnormalized)
/// inputs. The M weight draws are shared across the batch and reduced in a
/// fixed order, so results are reproducible given the seed. Epistemic
/// variance is the spread of the mean head across draws; aleatoric variance
/// is the average of the squared aleatoric-std head.
inline std::vector<PredictiveDistribution> predict_batch(
    const BaclModel& model, const std::vector<std::vector<double>>& raw_inputs,
    int m_samples, std::uint64_t seed) {
  std::vector<PredictiveDistribution> out(raw_inputs.size());
  if (raw_inputs.empty()) return out;
  std::vector<std::vector<double>> xs(raw_inputs.size());
  for (std::size_t i = 0; i < raw_inputs.size(); ++i)
    xs[i] = model.norm.apply(raw_inputs[i]);
  detail::ForwardCache cache;

  if (model.mode == BaclMode::deterministic) {
    WeightDraw w = sample_weights(model, zero_eps(model));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      detail::forward(model, w, xs[i], cache);
      auto o = detail::read_output(model, cache);
      auto& p = out[i];
      p.raw_mean = o.mean;
      p.mean = std::max(0.0, o.mean);
      p.var_epistemic = 0.0;
      p.var_aleatoric = o.sigma * o.sigma;
      p.sample_count = 1;
    }
    return out;
  }

  if (m_samples < 1) throw std::invalid_argument("predict: M must be >= 1");
  std::vector<double> sum(xs.size(), 0.0), sum_sq(xs.size(), 0.0),
      sum_var(xs.size(), 0.0);
  // Posterior stds are fixed across draws; compute them once.
  WeightDraw sigmas;
  sigmas.layers.resize(model.layers.size());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    auto& s = sigmas.layers[k];
    const auto& l = model.layers[k];
    s.w.resize(l.w_rho.size());
    s.b.resize(l.b_rho.size());
    for (std::size_t i = 0; i < l.w_rho.size(); ++i) s.w[i] = softplus(l.w_rho[i]);
    for (std::size_t i = 0; i < l.b_rho.size(); ++i) s.b[i] = softplus(l.b_rho[i]);
  }
  Rng rng(seed);
  WeightDraw w = sample_weights(model, zero_eps(model));
  for (int m = 0; m < m_samples; ++m) {
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
      const auto& l = model.layers[k];
      auto& wk = w.layers[k];
      for (std::size_t i = 0; i < wk.w.size(); ++i)
        wk.w[i] = l.w_mu[i] + sigmas.layers[k].w[i] * rng.normal();
      for (std::size_t i = 0; i < wk.b.size(); ++i)
        wk.b[i] = l.b_mu[i] + sigmas.layers[k].b[i] * rng.normal();
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      detail::forward(model, w, xs[i], cache);
      auto o = detail::read_output(model, cache);
      sum[i] += o.mean;
      sum_sq[i] += o.mean * o.mean;
      sum_var[i] += o.sigma * o.sigma;
    }
  }
  double inv = 1.0 / static_cast<double>(m_samples);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto& p = out[i];
    p.raw_mean = sum[i] * inv;
    p.mean = std::max(0.0, p.raw_mean);
    p.var_epistemic = std::max(0.0, sum_sq[i] * inv - p.raw_mean * p.raw_mean);
    p.var_aleatoric = sum_var[i] * inv;
    p.sample_count = m_samples;
  }
  return out;
}

struct ModelOutput {
  double mean = 0.0;
  double sigma = 0.0;  // aleatoric std, floor included
};

/// Forward pass of one concrete weight draw on a raw (unnormalized) input.
/// With a zero eps draw this is the posterior-mean network.
inline ModelOutput evaluate_at(const BaclModel& model, const WeightDraw& draw,
                               const std::vector<double>& raw_input) {
  detail::ForwardCache cache;
  detail::forward(model, draw, model.norm.apply(raw_input), cache);
  auto o = detail::read_output(model, cache);
  return {o.mean, o.sigma};
}

inline PredictiveDistribution predict(const BaclModel& model,
                                      const FeatureVector& features,
                                      int m_samples, std::uint64_t seed) {
  return predict_batch(model, {to_input(features, model.feature_mode)}, m_samples,
                       seed)[0];
}

inline std::vector<PredictiveDistribution> predict_features(
    const BaclModel& model, const std::vector<FeatureVector>& features,
    int m_samples, std::uint64_t seed) {
  std::vector<std::vector<double>> raw(features.size());
  for (std::size_t i = 0; i < features.size(); ++i)
    raw[i] = to_input(features[i], model.feature_mode);
  return predict_batch(model, raw, m_samples, seed);
}

// ---------------------------------------------------------------------------
// Model artifact serialization (versioned JSON).

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json to_json(const BaclModel& model) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["kind"] = "bacl-model";
  j["lane"] = model.lane;
  j["mode"] = to_string(model.mode);
  j["feature_mode"] = to_string(model.feature_mode);
  j["seed"] = model.seed;
  j["hyper"] = {{"learning_rate", model.hyper.learning_rate},
                {"lr_decay", model.hyper.lr_decay},
                {"epochs", model.hyper.epochs},
                {"batch_size", model.hyper.batch_size},
                {"mc_samples", model.hyper.mc_samples},
                {"prior_std", model.hyper.prior_std},
                {"kl_weight_scale", model.hyper.kl_weight_scale},
                {"kl_anneal_epochs", model.hyper.kl_anneal_epochs},
                {"patience", model.hyper.patience},
                {"val_fraction", model.hyper.val_fraction},
                {"grad_clip", model.hyper.grad_clip},
                {"sigma_floor", model.hyper.sigma_floor},
                {"rho_init", model.hyper.rho_init},
                {"mu_init_range", model.hyper.mu_init_range},
                {"hidden", model.hyper.hidden}};
  j["normalization"] = {{"shift", model.norm.shift}, {"scale", model.norm.scale}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers) {
    layers.push_back({{"in", l.in},
                      {"out", l.out},
                      {"w_mu", l.w_mu},
                      {"w_rho", l.w_rho},
                      {"b_mu", l.b_mu},
                      {"b_rho", l.b_rho}});
  }
  j["layers"] = std::move(layers);
  return j;
}

inline BaclModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("kind") || j.at("kind") != "bacl-model")
    throw std::runtime_error("model artifact: not a bacl-model file");
  if (!j.contains("format_version") ||
      j.at("format_version").get<int>() != kModelFormatVersion)
    throw std::runtime_error("model artifact: unsupported format version");
  BaclModel m;
  m.lane = j.at("lane").get<std::string>();
  m.mode = bacl_mode_from_string(j.at("mode").get<std::string>());
  m.feature_mode = feature_mode_from_string(j.at("feature_mode").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto& h = j.at("hyper");
  m.hyper.learning_rate = h.at("learning_rate").get<double>();
  m.hyper.lr_decay = h.at("lr_decay").get<double>();
  m.hyper.epochs = h.at("epochs").get<int>();
  m.hyper.batch_size = h.at("batch_size").get<int>();
  m.hyper.mc_samples = h.at("mc_samples").get<int>();
  m.hyper.prior_std = h.at("prior_std").get<double>();
  m.hyper.kl_weight_scale = h.at("kl_weight_scale").get<double>();
  m.hyper.kl_anneal_epochs = h.at("kl_anneal_epochs").get<int>();
  m.hyper.patience = h.at("patience").get<int>();
  m.hyper.val_fraction = h.at("val_fraction").get<double>();
  m.hyper.grad_clip = h.at("grad_clip").get<double>();
  m.hyper.sigma_floor = h.at("sigma_floor").get<double>();
  m.hyper.rho_init = h.at("rho_init").get<double>();
  m.hyper.mu_init_range = h.at("mu_init_range").get<double>();
  m.hyper.hidden = h.at("hidden").get<std::vector<int>>();
  m.norm.shift = j.at("normalization").at("shift").get<std::vector<double>>();
  m.norm.scale = j.at("normalization").at("scale").get<std::vector<double>>();
  if (m.norm.shift.size() != m.norm.scale.size())
    throw std::runtime_error("model artifact: inconsistent normalization");
  for (const auto& lj : j.at("layers")) {
    VariationalLayer l;
    l.in = lj.at("in").get<int>();
    l.out = lj.at("out").get<int>();
    l.w_mu = lj.at("w_mu").get<std::vector<double>>();
    l.w_rho = lj.at("w_rho").get<std::vector<double>>();
    l.b_mu = lj.at("b_mu").get<std::vector<double>>();
    l.b_rho = lj.at("b_rho").get<std::vector<double>>();
    auto wn = static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out);
    if (l.in <= 0 || l.out <= 0 || l.w_mu.size() != wn || l.w_rho.size() != wn ||
        l.b_mu.size() != static_cast<std::size_t>(l.out) ||
        l.b_rho.size() != static_cast<std::size_t>(l.out))
      throw std::runtime_error("model artifact: layer shape mismatch");
    m.layers.push_back(std::move(l));
  }
  if (m.layers.empty()) throw std::runtime_error("model artifact: no layers");
  for (std::size_t k = 1; k < m.layers.size(); ++k)
    if (m.layers[k].in != m.layers[k - 1].out)
      throw std::runtime_error("model artifact: layer widths do not chain");
  if (m.norm.shift.size() != static_cast<std::size_t>(m.layers.front().in))
    throw std::runtime_error("model artifact: normalization does not match input width");
  return m;
}

inline void save_model(const std::string& path, const BaclModel& model) {
  auto out = open_output(path);
  out << to_json(model).dump(1) << '\n';
}

inline BaclModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model artifact: " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace acr
