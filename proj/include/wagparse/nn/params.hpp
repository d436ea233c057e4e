#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wagparse/nn/rng.hpp"
#include "wagparse/nn/tensor.hpp"

namespace wagparse::nn {

/// Owns named parameters with stable addresses, in registration order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  /// Parameters whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  void zero_grad();
  std::size_t scalar_count() const;

  /// Copies values for every name present in both stores; returns how many.
  std::size_t copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double grad_clip = 1.0;     // global L2 norm; <= 0 disables
};

/// Adam over the trainable parameters of a store. Frozen parameters are never
/// touched, whatever their gradient holds.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  /// One update with learning rate `lr`. Returns the pre-clip gradient norm.
  double step(ParameterStore& store, double lr);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t samples_per_parameter = 6;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_parameter;
};

/// Compares tape gradients of `loss` against central differences on sampled
/// coordinates of the trainable parameters in `params`. Error per coordinate
/// is |g_tape - g_fd| / max(1, |g_tape|, |g_fd|). `loss` must be a pure
/// function of the parameter values (reseed any randomness inside it).
GradCheckResult grad_check(const std::function<Var()>& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

/// Binary weight file: magic, version, then (name, rows, cols, values) per
/// parameter, little-endian doubles.
void save_parameters(const std::filesystem::path& path, const ParameterStore& store);
/// Loads values into existing parameters. Missing or mis-shaped entries are
/// errors unless `allow_missing` is set, in which case they are skipped.
void load_parameters(const std::filesystem::path& path, ParameterStore& store, bool allow_missing = false);

}  // namespace wagparse::nn
