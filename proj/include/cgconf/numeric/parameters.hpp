#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace cgconf {

// The generator behind every stochastic step; its state is what checkpoints
// record, so swapping it changes the on-disk format.
class Rng {
 public:
  static constexpr const char* kName = "mt19937_64";

  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::uint64_t next() { return engine_(); }
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  std::uint64_t seed() const { return seed_; }
  std::string state() const;
  void restore(const std::string& state);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

// Named, ordered collection of trainable arrays.  Insertion order is the
// serialization order.
class ParameterStore {
 public:
  ParameterStore() = default;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  Eigen::MatrixXd& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                       Eigen::Index fan_in, Rng& rng);
  Eigen::MatrixXd& add(const std::string& name, Eigen::MatrixXd value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Eigen::MatrixXd& value(const std::string& name) { return at(name).value; }
  const Eigen::MatrixXd& value(const std::string& name) const { return at(name).value; }

  std::vector<Parameter>& entries() { return entries_; }
  const std::vector<Parameter>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // value -= lr * grad
  void sgd_step(double lr);

  // Bitwise comparison of names, shapes and values.
  bool identical(const ParameterStore& other) const;

 private:
  std::vector<Parameter> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cgconf
