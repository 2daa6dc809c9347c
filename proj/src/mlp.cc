#include "mlp.h"

#include <cmath>
#include <stdexcept>

namespace forcelens::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least two layer sizes");
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layers(); ++l) {
    n += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  return n;
}

std::size_t Mlp::weight_offset(int layer) const {
  std::size_t n = 0;
  for (int l = 0; l < layer; ++l) n += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
  return n;
}

std::size_t Mlp::bias_offset(int layer) const {
  return weight_offset(layer) + static_cast<std::size_t>(sizes_[layer + 1]) * sizes_[layer];
}

Eigen::MatrixXd Mlp::forward(std::span<const double> params, const Eigen::MatrixXd& X,
                             Cache* cache) const {
  Eigen::MatrixXd a = X;
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(a);
  }
  for (int l = 0; l < layers(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const RowMat> W(params.data() + weight_offset(l), out, in);
    Eigen::Map<const Eigen::VectorXd> b(params.data() + bias_offset(l), out);
    Eigen::MatrixXd z = W * a;
    z.colwise() += b;
    if (l + 1 < layers()) z = z.array().tanh().matrix();
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

Eigen::MatrixXd Mlp::backward(std::span<const double> params, const Cache& cache,
                              const Eigen::MatrixXd& grad_out,
                              std::span<double> grad_params) const {
  Eigen::MatrixXd g = grad_out;
  for (int l = layers() - 1; l >= 0; --l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    if (l + 1 < layers()) {
      const Eigen::MatrixXd& act = cache.activations[l + 1];
      g = (g.array() * (1.0 - act.array().square())).matrix();
    }
    const Eigen::MatrixXd& prev = cache.activations[l];
    Eigen::Map<RowMat> dW(grad_params.data() + weight_offset(l), out, in);
    Eigen::Map<Eigen::VectorXd> db(grad_params.data() + bias_offset(l), out);
    dW.noalias() += g * prev.transpose();
    db += g.rowwise().sum();
    Eigen::Map<const RowMat> W(params.data() + weight_offset(l), out, in);
    g = W.transpose() * g;
  }
  return g;
}

void Mlp::init(std::span<double> params, std::mt19937_64& rng, double output_gain) const {
  for (int l = 0; l < layers(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const bool last = l + 1 == layers();
    const double stddev = (last ? output_gain : 1.0) / std::sqrt(static_cast<double>(in));
    std::normal_distribution<double> normal(0.0, 1.0);
    double* w = params.data() + weight_offset(l);
    for (int i = 0; i < out * in; ++i) w[i] = stddev == 0.0 ? 0.0 : stddev * normal(rng);
    double* b = params.data() + bias_offset(l);
    for (int i = 0; i < out; ++i) b[i] = 0.0;
  }
}

}  // namespace forcelens::detail
