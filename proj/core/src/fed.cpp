#include "fedlips/fed.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "fedlips/cifar10.hpp"
#include "fedlips/error.hpp"
#include "fedlips/rng.hpp"

namespace fedlips::fed {

using model::LayerParams;
using model::LayerRole;
using model::ModelParams;

bool Policy::shares(const LayerParams& layer, int round) const noexcept {
  if (aggregation == Aggregation::kSeparate) return false;
  if (middle_fixed(round) && (layer.is_batchnorm() || layer.role == LayerRole::kMiddle)) {
    return false;
  }
  if (layer.is_batchnorm()) return aggregation == Aggregation::kFedAvg;
  return true;
}

bool Policy::frozen(const LayerParams& layer, int round) const noexcept {
  return fix_variant == FixVariant::kFreeze && middle_fixed(round) && layer.is_weight_layer() &&
         layer.role == LayerRole::kMiddle;
}

Policy policy_for(const ExperimentConfig& cfg) {
  Policy p;
  switch (cfg.method) {
    case Method::kSeparate: p.aggregation = Aggregation::kSeparate; break;
    case Method::kFedAvg: p.aggregation = Aggregation::kFedAvg; break;
    case Method::kFedBN:
    case Method::kLips: p.aggregation = Aggregation::kFedBN; break;
  }
  p.fix_round = cfg.fix_round;
  p.fix_variant = cfg.fix_variant;
  return p;
}

LocalTrainResult local_train(ClientState& client, const data::Dataset& ds,
                             const LocalTrainOptions& opt) {
  const auto& train = client.split.train;
  if (train.empty()) {
    throw ArgumentError("local_train: client " + std::to_string(client.id) + " has no training data");
  }
  if (opt.epochs < 1 || opt.batch_size == 0) {
    throw ArgumentError("local_train: epochs and batch_size must be positive");
  }
  client.prev_round_pre = client.model;

  std::vector<std::uint8_t> frozen(client.model.layers.size(), 0);
  if (opt.policy) {
    for (std::size_t i = 0; i < frozen.size(); ++i) {
      frozen[i] = opt.policy->frozen(client.model.layers[i], opt.round) ? 1 : 0;
    }
  }

  std::vector<double> norm_sum(client.model.layers.size(), 0.0);
  std::size_t steps = 0;
  std::vector<std::size_t> order = train;
  Rng rng = make_rng(opt.shuffle_seed);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t len = std::min(opt.batch_size, order.size() - start);
      const data::Batch batch =
          data::gather(ds, std::span<const std::size_t>(order).subspan(start, len));
      auto fb = model::forward_backward(client.model, batch.inputs, batch.labels);
      for (std::size_t i = 0; i < norm_sum.size(); ++i) {
        norm_sum[i] += fb.grad_norms[i];
        if (frozen[i]) {
          fb.grads[i].weight.fill(0.0);
          if (!fb.grads[i].bias.empty()) fb.grads[i].bias.fill(0.0);
        }
      }
      client.model = model::sgd_step(client.model, fb.grads, opt.lr);
      model::set_running_stats(client.model, fb.running);
      if (opt.hold) {
        lips::apply_mask_inplace(client.model, *opt.hold, opt.hold_reinit, &client.init_snapshot);
      }
      ++steps;
    }
  }

  client.last_delta = lips::weight_deltas(*client.prev_round_pre, client.model, opt.delta_scope);

  LocalTrainResult out;
  out.steps = steps;
  for (std::size_t i = 0; i < client.model.layers.size(); ++i) {
    if (client.model.layers[i].is_weight_layer()) {
      out.grad_norms.push_back(norm_sum[i] / static_cast<double>(steps));
    }
  }
  return out;
}

namespace {

void check_aligned(const ModelParams& a, const ModelParams& b, std::size_t who) {
  if (a.layers.size() != b.layers.size()) {
    throw ShapeError("aggregate: client " + std::to_string(who) + " has " +
                     std::to_string(b.layers.size()) + " layers, expected " +
                     std::to_string(a.layers.size()));
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const LayerParams& x = a.layers[l];
    const LayerParams& y = b.layers[l];
    const bool same = x.name == y.name && x.kind == y.kind &&
                      x.weight.shape() == y.weight.shape() && x.bias.shape() == y.bias.shape() &&
                      x.bn.has_value() == y.bn.has_value() &&
                      (!x.bn || x.bn->gamma.shape() == y.bn->gamma.shape());
    if (!same) {
      throw ShapeError("aggregate: layer '" + x.name + "' of client " + std::to_string(who) +
                       " does not match the global model");
    }
  }
}

// out = sum_i coef_i * block(models_i), reduced in client order.
template <class Get>
void weighted_sum(Tensor& out, std::span<const ModelParams* const> models,
                  std::span<const double> coef, Get get) {
  if (out.empty()) return;
  out.fill(0.0);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const Tensor& src = get(*models[i]);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += coef[i] * src[j];
  }
}

}  // namespace

ModelParams aggregate(const ModelParams& global, std::span<const ModelParams* const> models,
                      std::span<const double> data_sizes, const Policy& policy, int round) {
  if (models.empty()) throw ArgumentError("aggregate: no clients");
  if (data_sizes.size() != models.size()) {
    throw ArgumentError("aggregate: " + std::to_string(data_sizes.size()) + " sizes for " +
                        std::to_string(models.size()) + " clients");
  }
  for (std::size_t i = 0; i < models.size(); ++i) check_aligned(global, *models[i], i);
  if (policy.aggregation == Aggregation::kSeparate) return global;

  const double total = std::accumulate(data_sizes.begin(), data_sizes.end(), 0.0);
  if (!(total > 0.0)) throw ArgumentError("aggregate: total data size must be positive");
  std::vector<double> coef(data_sizes.size());
  for (std::size_t i = 0; i < coef.size(); ++i) {
    if (data_sizes[i] < 0.0) throw ArgumentError("aggregate: negative data size");
    coef[i] = data_sizes[i] / total;
  }

  ModelParams out = global;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    LayerParams& layer = out.layers[l];
    if (!policy.shares(layer, round)) continue;
    if (layer.is_weight_layer()) {
      weighted_sum(layer.weight, models, coef, [l](const ModelParams& m) -> const Tensor& {
        return m.layers[l].weight;
      });
      weighted_sum(layer.bias, models, coef, [l](const ModelParams& m) -> const Tensor& {
        return m.layers[l].bias;
      });
    } else {
      auto& bn = *layer.bn;
      weighted_sum(bn.gamma, models, coef,
                   [l](const ModelParams& m) -> const Tensor& { return m.layers[l].bn->gamma; });
      weighted_sum(bn.beta, models, coef,
                   [l](const ModelParams& m) -> const Tensor& { return m.layers[l].bn->beta; });
      weighted_sum(bn.running.mean, models, coef, [l](const ModelParams& m) -> const Tensor& {
        return m.layers[l].bn->running.mean;
      });
      weighted_sum(bn.running.var, models, coef, [l](const ModelParams& m) -> const Tensor& {
        return m.layers[l].bn->running.var;
      });
    }
  }
  return out;
}

ModelParams aggregate(const ModelParams& global, std::span<const ModelParams> models,
                      std::span<const double> data_sizes, const Policy& policy, int round) {
  std::vector<const ModelParams*> ptrs;
  ptrs.reserve(models.size());
  for (const auto& m : models) ptrs.push_back(&m);
  return aggregate(global, ptrs, data_sizes, policy, round);
}

void distribute(const ModelParams& global, ModelParams& client, const Policy& policy, int round) {
  check_aligned(global, client, 0);
  for (std::size_t l = 0; l < client.layers.size(); ++l) {
    if (policy.shares(global.layers[l], round)) client.layers[l] = global.layers[l];
  }
}

data::Dataset build_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == DatasetKind::kCifar10) {
    return data::load_cifar10(cfg.dataset.directory, data::Cifar10Split::kAll);
  }
  data::SyntheticSpec spec;
  spec.num_classes = cfg.dataset.num_classes;
  spec.sample_shape = cfg.dataset.sample_shape;
  spec.n_per_class = resolved_samples_per_class(cfg);
  spec.class_separation = cfg.dataset.class_separation;
  spec.noise = cfg.dataset.noise;
  spec.seed = derive_seed(cfg.seed, Stream::kData);
  return data::gen_synthetic(spec);
}

Simulation::Simulation(const ExperimentConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  data_ = build_dataset(cfg_);
  const data::Partition part =
      data::dirichlet_partition(data_, cfg_.n_clients, cfg_.alpha, cfg_.samples_per_client,
                                cfg_.test_per_client, derive_seed(cfg_.seed, Stream::kPartition));

  const Shape input_shape = data_.sample_shape();
  server_.policy = policy_for(cfg_);
  server_.global_model = model::build_model(cfg_.arch, input_shape, data_.num_classes,
                                            derive_seed(cfg_.seed, Stream::kModelInit), cfg_.width);
  scope_ = cfg_.lips.scope ? *cfg_.lips.scope : lips::default_scope(server_.global_model);
  if (cfg_.method == Method::kLips) {
    try {
      lips::check_scope(server_.global_model, scope_);
    } catch (const Error& e) {
      throw ConfigError("lips.scope", e.what());
    }
  }

  clients_.resize(cfg_.n_clients);
  for (std::size_t i = 0; i < cfg_.n_clients; ++i) {
    ClientState& c = clients_[i];
    c.id = static_cast<int>(i);
    c.split = part.clients[i];
    c.seed = derive_seed(cfg_.seed, Stream::kClientTrain, i);
    c.model = cfg_.common_init
                  ? server_.global_model
                  : model::build_model(cfg_.arch, input_shape, data_.num_classes,
                                       derive_seed(cfg_.seed, Stream::kClientInit, i), cfg_.width);
    c.init_snapshot = c.model;
  }
  masks_.resize(clients_.size());
}

std::vector<std::size_t> Simulation::participants(int round) const {
  std::vector<std::size_t> ids(clients_.size());
  std::iota(ids.begin(), ids.end(), 0);
  if (cfg_.participation >= 1.0) return ids;
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg_.participation * static_cast<double>(ids.size()))));
  Rng rng = make_rng(derive_seed(cfg_.seed, Stream::kParticipation, static_cast<std::uint64_t>(round)));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Simulation::for_each_client(std::span<const std::size_t> ids,
                                 const std::function<void(std::size_t)>& fn) const {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.parallel_workers), ids.size());
  if (workers <= 1) {
    for (auto id : ids) fn(id);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < ids.size();) {
      try {
        fn(ids[k]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

const metrics::RoundRecord& Simulation::run_round() {
  if (server_.round >= cfg_.rounds) {
    throw ArgumentError("run_round: all " + std::to_string(cfg_.rounds) + " rounds completed");
  }
  const int t = server_.round + 1;
  const Policy& policy = server_.policy;
  const auto active = participants(t);
  const bool mask_round = cfg_.method == Method::kLips && lips::is_mask_round(t, cfg_.lips.k);
  const double tau = mask_round ? lips::decayed_tau(t, cfg_.lips.tau0, cfg_.rounds) : 0.0;

  std::vector<std::vector<double>> grad_norms(clients_.size());
  for (auto& m : masks_) m.reset();

  for_each_client(active, [&](std::size_t i) {
    ClientState& c = clients_[i];
    // Sensitivity needs a delta from a completed local training.
    if (mask_round && !c.last_delta.empty()) {
      const auto weights = lips::collect_weights(c.model, scope_);
      std::vector<lips::LayerValues> values;
      switch (cfg_.lips.criterion) {
        case lips::Criterion::kSensitivity:
          values = lips::sensitivity_scores(weights, c.last_delta);
          break;
        case lips::Criterion::kMagnitude:
        case lips::Criterion::kRandom:
          values = weights;
          break;
      }
      const auto mask_seed = derive_seed(cfg_.seed, Stream::kClientMask, i, static_cast<std::uint64_t>(t));
      masks_[i] = lips::select_mask(c.model, values, tau, cfg_.lips.criterion, scope_, mask_seed);
      lips::apply_mask_inplace(c.model, *masks_[i], cfg_.lips.reinit, &c.init_snapshot);
    }

    LocalTrainOptions opt;
    opt.lr = cfg_.lr;
    opt.epochs = cfg_.local_epochs;
    opt.batch_size = cfg_.batch_size;
    opt.shuffle_seed = derive_seed(c.seed, static_cast<std::uint64_t>(t));
    opt.round = t;
    opt.policy = &policy;
    opt.hold = (cfg_.lips.hold_mask && masks_[i]) ? &*masks_[i] : nullptr;
    opt.hold_reinit = cfg_.lips.reinit;
    opt.delta_scope = scope_;
    grad_norms[i] = local_train(c, data_, opt).grad_norms;
  });

  std::vector<const ModelParams*> models;
  std::vector<double> sizes;
  for (auto i : active) {
    models.push_back(&clients_[i].model);
    sizes.push_back(static_cast<double>(clients_[i].split.train.size()));
  }
  server_.global_model = aggregate(server_.global_model, models, sizes, policy, t);
  server_.round = t;

  std::vector<std::size_t> everyone(clients_.size());
  std::iota(everyone.begin(), everyone.end(), 0);
  std::vector<double> accuracy(clients_.size(), 0.0);
  for_each_client(everyone, [&](std::size_t i) {
    distribute(server_.global_model, clients_[i].model, policy, t);
    accuracy[i] = metrics::evaluate_accuracy(clients_[i].model, data_, clients_[i].split.test);
  });

  // Cosines are only meaningful when a global model is actually formed.
  const bool has_global = policy.aggregation != Aggregation::kSeparate;
  if (has_global && t == cfg_.metrics_t0) reference_ = server_.global_model;
  std::vector<std::vector<double>> active_norms;
  for (auto i : active) active_norms.push_back(std::move(grad_norms[i]));
  metrics::record_round(log_, t, accuracy, server_.global_model,
                        (has_global && reference_) ? &*reference_ : nullptr, active_norms);
  return log_.rounds.back();
}

const metrics::MetricsLog& Simulation::run(const ProgressFn& progress) {
  while (server_.round < cfg_.rounds) {
    const auto& rec = run_round();
    if (progress) progress(rec.round, rec.mean_accuracy);
  }
  return log_;
}

metrics::MetricsLog run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  Simulation sim(cfg);
  return sim.run(progress);
}

}  // namespace fedlips::fed
