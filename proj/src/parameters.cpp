#include "cgconf/numeric/parameters.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace cgconf {

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (in.fail()) throw std::runtime_error("corrupt RNG state");
}

Eigen::MatrixXd& ParameterStore::add(const std::string& name, Eigen::Index rows,
                                     Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  Eigen::MatrixXd value(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) value(r, c) = rng.uniform(-bound, bound);
  return add(name, std::move(value));
}

Eigen::MatrixXd& ParameterStore::add(const std::string& name, Eigen::MatrixXd value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  Parameter p{name, std::move(value), {}};
  p.grad = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
  entries_.push_back(std::move(p));
  return entries_.back().value;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : entries_) p.grad.setZero();
}

void ParameterStore::sgd_step(double lr) {
  for (auto& p : entries_) p.value -= lr * p.grad;
}

bool ParameterStore::identical(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
    if (std::memcmp(a.value.data(), b.value.data(), sizeof(double) * a.value.size()) != 0)
      return false;
  }
  return true;
}

}  // namespace cgconf
