#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedlips/config.hpp"
#include "fedlips/dataset.hpp"
#include "fedlips/lips.hpp"
#include "fedlips/metrics.hpp"
#include "fedlips/model.hpp"
#include "fedlips/partition.hpp"

namespace fedlips::fed {

enum class Aggregation { kSeparate, kFedAvg, kFedBN };

struct Policy {
  Aggregation aggregation = Aggregation::kFedBN;
  std::optional<int> fix_round;
  FixVariant fix_variant = FixVariant::kFreeze;

  // True from fix_round onwards.
  bool middle_fixed(int round) const noexcept { return fix_round && round >= *fix_round; }
  // Whether the layer's blocks travel between server and clients in `round`.
  bool shares(const model::LayerParams& layer, int round) const noexcept;
  // Whether local SGD leaves the layer untouched in `round`.
  bool frozen(const model::LayerParams& layer, int round) const noexcept;
};

// LIPS aggregates like FedBN.
Policy policy_for(const ExperimentConfig& cfg);

struct ClientState {
  int id = 0;
  data::ClientSplit split;
  model::ModelParams model;  // batch-norm layers are this client's own
  model::ModelParams init_snapshot;
  // Weights before the most recent local training, and the change it made
  // to the masking scope (empty until the client has trained once).
  std::optional<model::ModelParams> prev_round_pre;
  std::vector<lips::LayerValues> last_delta;
  std::uint64_t seed = 0;  // root of this client's training and mask streams
};

struct ServerState {
  model::ModelParams global_model;
  int round = 0;
  Policy policy;
};

struct LocalTrainOptions {
  double lr = 0.1;
  int epochs = 5;
  std::size_t batch_size = 100;
  std::uint64_t shuffle_seed = 0;
  int round = 1;                              // selects frozen layers
  const Policy* policy = nullptr;             // null: nothing frozen
  const lips::SparsityMask* hold = nullptr;   // re-applied after every step
  lips::Reinit hold_reinit = lips::Reinit::kZero;
  std::span<const std::string> delta_scope;   // layers whose delta is kept
};

struct LocalTrainResult {
  // Mean over SGD steps of each layer's weight-gradient L2 norm, aligned
  // with model::weight_layer_names.
  std::vector<double> grad_norms;
  std::size_t steps = 0;
};

// E epochs of mini-batch SGD over the client's train split, reshuffled each
// epoch from `shuffle_seed`. Records prev_round_pre and last_delta.
LocalTrainResult local_train(ClientState& client, const data::Dataset& ds,
                             const LocalTrainOptions& opt);

// Per shared block: sum_i (n_i / n) * w_i. Blocks the policy keeps local
// (or fixes) are copied from `global`. Under kSeparate `global` is returned.
model::ModelParams aggregate(const model::ModelParams& global,
                             std::span<const model::ModelParams* const> models,
                             std::span<const double> data_sizes, const Policy& policy, int round);
model::ModelParams aggregate(const model::ModelParams& global,
                             std::span<const model::ModelParams> models,
                             std::span<const double> data_sizes, const Policy& policy, int round);

// Overwrites every shared block of `client` with the global value.
void distribute(const model::ModelParams& global, model::ModelParams& client,
                const Policy& policy, int round);

// Per-round progress hook: (round, mean accuracy).
using ProgressFn = std::function<void(int, double)>;

// Owns dataset, server, clients and metrics for one experiment.
class Simulation {
 public:
  explicit Simulation(const ExperimentConfig& cfg);

  // Runs round server.round + 1. Throws when all configured rounds are done.
  const metrics::RoundRecord& run_round();
  const metrics::MetricsLog& run(const ProgressFn& progress = {});

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const data::Dataset& dataset() const noexcept { return data_; }
  const ServerState& server() const noexcept { return server_; }
  const std::vector<ClientState>& clients() const noexcept { return clients_; }
  std::vector<ClientState>& clients() noexcept { return clients_; }
  const metrics::MetricsLog& log() const noexcept { return log_; }
  const std::vector<std::string>& mask_scope() const noexcept { return scope_; }
  // Masks applied in the latest round, one per client (empty when none).
  const std::vector<std::optional<lips::SparsityMask>>& last_masks() const noexcept {
    return masks_;
  }

 private:
  std::vector<std::size_t> participants(int round) const;
  void for_each_client(std::span<const std::size_t> ids,
                       const std::function<void(std::size_t)>& fn) const;

  ExperimentConfig cfg_;
  data::Dataset data_;
  ServerState server_;
  std::vector<ClientState> clients_;
  std::vector<std::string> scope_;
  std::optional<model::ModelParams> reference_;
  std::vector<std::optional<lips::SparsityMask>> masks_;
  metrics::MetricsLog log_;
};

data::Dataset build_dataset(const ExperimentConfig& cfg);

// Validates, runs every round, and returns the metrics.
metrics::MetricsLog run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

}  // namespace fedlips::fed
