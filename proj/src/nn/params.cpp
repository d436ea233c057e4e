#include "wagparse/nn/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "wagparse/errors.hpp"

namespace wagparse::nn {

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
  require(!index_.count(name), ErrorCategory::kStructural, "duplicate parameter " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCategory::kStructural, "unknown parameter " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCategory::kStructural, "unknown parameter " + name);
  return *params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::size_t ParameterStore::copy_values_from(const ParameterStore& other) {
  std::size_t copied = 0;
  for (auto& p : params_) {
    auto it = other.index_.find(p->name);
    if (it == other.index_.end()) continue;
    const auto& src = other.params_[it->second]->value;
    require(src.rows() == p->value.rows() && src.cols() == p->value.cols(), ErrorCategory::kStructural,
            "shape mismatch copying parameter " + p->name);
    p->value = src;
    ++copied;
  }
  return copied;
}

Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = stddev * rng.normal();
  return t;
}

double Adam::step(ParameterStore& store, double lr) {
  ++steps_;
  double norm_sq = 0.0;
  for (const auto* p : store.all()) {
    if (p->trainable) norm_sq += p->grad.matrix().squaredNorm();
  }
  const double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm)) fail(ErrorCategory::kNumeric, "non-finite gradient norm");
  const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));

  for (auto* p : store.all()) {
    if (!p->trainable) continue;
    auto& mom = moments_[p->name];
    auto& w = p->value.matrix();
    if (mom.m.size() == 0) {
      mom.m = Matrix::Zero(w.rows(), w.cols());
      mom.v = Matrix::Zero(w.rows(), w.cols());
    }
    const Matrix g = p->grad.matrix() * clip;
    mom.m = config_.beta1 * mom.m + (1.0 - config_.beta1) * g;
    mom.v = config_.beta2 * mom.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    if (config_.weight_decay > 0.0) w *= (1.0 - lr * config_.weight_decay);
    w.array() -= lr * (mom.m.array() / bc1) / ((mom.v.array() / bc2).sqrt() + config_.eps);
  }
  return norm;
}

namespace {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(in.good(), ErrorCategory::kInput, "truncated binary stream");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  require(n < (1u << 20), ErrorCategory::kInput, "implausible string length in binary stream");
  std::string s(n, '\0');
  in.read(s.data(), n);
  require(in.good(), ErrorCategory::kInput, "truncated binary stream");
  return s;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

Matrix read_matrix(std::istream& in) {
  const auto rows = read_pod<std::uint64_t>(in);
  const auto cols = read_pod<std::uint64_t>(in);
  require(rows * cols < (1ull << 32), ErrorCategory::kInput, "implausible matrix size in binary stream");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
  require(in.good() || (rows * cols == 0), ErrorCategory::kInput, "truncated matrix in binary stream");
  return m;
}

constexpr char kWeightsMagic[4] = {'W', 'G', 'P', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;
constexpr char kAdamMagic[4] = {'W', 'G', 'P', 'A'};

}  // namespace

void Adam::save(std::ostream& out) const {
  out.write(kAdamMagic, 4);
  write_pod<std::int64_t>(out, steps_);
  write_pod<std::uint64_t>(out, moments_.size());
  for (const auto& [name, mom] : moments_) {
    write_string(out, name);
    write_matrix(out, mom.m);
    write_matrix(out, mom.v);
  }
}

void Adam::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, kAdamMagic, 4) == 0, ErrorCategory::kInput, "bad optimizer state header");
  steps_ = read_pod<std::int64_t>(in);
  const auto n = read_pod<std::uint64_t>(in);
  moments_.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto name = read_string(in);
    Moments mom;
    mom.m = read_matrix(in);
    mom.v = read_matrix(in);
    moments_.emplace(std::move(name), std::move(mom));
  }
}

GradCheckResult grad_check(const std::function<Var()>& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  {
    const Var l = loss();
    require(std::isfinite(l.scalar()), ErrorCategory::kNumeric, "grad_check: non-finite loss");
    backward(l);
  }
  std::vector<Matrix> tape;
  for (auto* p : params) tape.push_back(p->grad.matrix());

  auto evaluate = [&]() {
    NoGradGuard guard;
    const double v = loss().scalar();
    if (!std::isfinite(v)) fail(ErrorCategory::kNumeric, "grad_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    if (!p->trainable) continue;
    const std::size_t n = p->value.size();
    const std::size_t samples = std::min(n, options.samples_per_parameter);
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t idx = samples == n ? s : rng.below(n);
      double& w = p->value.values()[idx];
      const double saved = w;
      w = saved + options.step;
      const double up = evaluate();
      w = saved - options.step;
      const double down = evaluate();
      w = saved;
      const double fd = (up - down) / (2.0 * options.step);
      const double g = tape[pi].data()[idx];
      const double err = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
      ++result.coordinates;
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p->name;
      }
    }
  }
  return result;
}

void save_parameters(const std::filesystem::path& path, const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::kIo, "cannot write " + path.string());
  out.write(kWeightsMagic, 4);
  write_pod<std::uint32_t>(out, kWeightsVersion);
  const auto params = store.all();
  write_pod<std::uint64_t>(out, params.size());
  for (const auto* p : params) {
    write_string(out, p->name);
    write_matrix(out, p->value.matrix());
  }
  require(out.good(), ErrorCategory::kIo, "failed writing " + path.string());
}

void load_parameters(const std::filesystem::path& path, ParameterStore& store, bool allow_missing) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::kIo, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, kWeightsMagic, 4) == 0, ErrorCategory::kInput, "not a weight file: " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  require(version == kWeightsVersion, ErrorCategory::kInput, "unsupported weight file version " + std::to_string(version));
  const auto n = read_pod<std::uint64_t>(in);
  std::size_t loaded = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = read_string(in);
    Matrix m = read_matrix(in);
    if (!store.contains(name)) {
      require(allow_missing, ErrorCategory::kInput, "weight file has unknown parameter " + name);
      continue;
    }
    auto& p = store.get(name);
    require(p.value.rows() == static_cast<std::size_t>(m.rows()) && p.value.cols() == static_cast<std::size_t>(m.cols()),
            ErrorCategory::kInput, "shape mismatch for parameter " + name);
    p.value.matrix() = std::move(m);
    ++loaded;
  }
  require(allow_missing || loaded == store.all().size(), ErrorCategory::kInput, "weight file is missing parameters");
}

}  // namespace wagparse::nn
