#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace forcelens::detail {

// Dense network with tanh hidden layers and a linear output layer. Weights
// live in an external flat buffer: per layer W (out x in, row-major) then b.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes);

  std::size_t param_count() const;
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }

  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // one per layer boundary, columns = batch
  };

  // X is input_size x batch. Returns output_size x batch.
  Eigen::MatrixXd forward(std::span<const double> params, const Eigen::MatrixXd& X,
                          Cache* cache = nullptr) const;

  // Accumulates parameter gradients into grad_params (same layout) and returns
  // d loss / d X given d loss / d output.
  Eigen::MatrixXd backward(std::span<const double> params, const Cache& cache,
                           const Eigen::MatrixXd& grad_out, std::span<double> grad_params) const;

  // Normal(0, gain^2 / fan_in) weights; biases zero; output layer scaled by
  // `output_gain` (0 gives a zero output layer).
  void init(std::span<double> params, std::mt19937_64& rng, double output_gain) const;

  // Offsets of W and b for layer l.
  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;
  int layers() const { return static_cast<int>(sizes_.size()) - 1; }

 private:
  std::vector<int> sizes_;
};

}  // namespace forcelens::detail
