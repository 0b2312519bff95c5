#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>

#include "wsical/diffcore.hpp"
#include "wsical/slidedata/bag.hpp"

namespace wsical::agg {

using ad::ParamSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
template <typename T>
void add_uniform(ParamSet<T>& ps, const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in,
                 std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> w = Tensor<T>::matrix(rows, cols);
  for (T& v : w.data) v = T(u(rng));
  ps.add(name, std::move(w));
}

template <typename T>
void add_linear(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  add_uniform(ps, name + ".W", in, out, in, rng);
  ps.add(name + ".b", Tensor<T>::matrix(1, out));
}

template <typename T>
void add_layer_norm(ParamSet<T>& ps, const std::string& name, std::size_t dim) {
  ps.add(name + ".gamma", Tensor<T>::matrix(1, dim, T{1}));
  ps.add(name + ".beta", Tensor<T>::matrix(1, dim));
}

// P is ParamSet<T> (trainable) or const ParamSet<T> (frozen).
template <typename T, typename P>
Var<T> linear(Tape<T>& tape, P& ps, const std::string& name, const Var<T>& x) {
  return ad::add_row(ad::matmul(x, tape.param(ps, name + ".W")), tape.param(ps, name + ".b"));
}

template <typename T, typename P>
Var<T> layer_norm(Tape<T>& tape, P& ps, const std::string& name, const Var<T>& x) {
  return ad::add_row(ad::mul_row(ad::layer_norm_rows(x), tape.param(ps, name + ".gamma")),
                     tape.param(ps, name + ".beta"));
}

template <typename T>
Tensor<T> bag_matrix(const data::FeatureBag& bag) {
  if (bag.features.size() != bag.n_patches() * bag.dim) {
    throw std::invalid_argument("bag '" + bag.slide_id + "': feature buffer does not hold n_patches x dim values");
  }
  Tensor<T> x = Tensor<T>::matrix(bag.n_patches(), bag.dim);
  for (std::size_t i = 0; i < bag.features.size(); ++i) x.data[i] = T(bag.features[i]);
  return x;
}

inline void check_bag(const data::FeatureBag& bag, std::size_t input_dim, const char* model) {
  if (bag.n_patches() == 0) throw std::invalid_argument(std::string(model) + ": empty bag '" + bag.slide_id + "'");
  if (bag.dim != input_dim) {
    throw std::invalid_argument(std::string(model) + ": bag '" + bag.slide_id + "' has feature dim " +
                                std::to_string(bag.dim) + ", model expects " + std::to_string(input_dim));
  }
  if (bag.features.size() != bag.n_patches() * bag.dim) {
    throw std::invalid_argument(std::string(model) + ": bag '" + bag.slide_id + "' feature buffer size mismatch");
  }
}

}  // namespace wsical::agg
