#pragma once
// Fully connected tanh network with exact reverse-mode gradients.
//
// Parameters live in one flat vector, layer-major; within a layer the
// row-major weight matrix (out x in) precedes the bias vector. The layout is
// fixed so optimizer state and checkpoints stay stable.

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "sglmm/rng.hpp"

namespace sglmm {

class MlpMixer {
 public:
  MlpMixer() = default;
  // All parameters zero.
  explicit MlpMixer(std::vector<std::size_t> dims);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t num_layers() const { return dims_.size() - 1; }
  std::size_t num_params() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + dims_[layer] * dims_[layer + 1];
  }
  // Row-major (out x in) weights of `layer`.
  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  bool operator==(const MlpMixer&) const = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
MlpMixer mlp_init(const std::vector<std::size_t>& dims, Rng& rng);

Eigen::VectorXd mlp_forward(const MlpMixer& net, const Eigen::VectorXd& input);

struct MlpGradients {
  std::vector<double> params;  // same layout as MlpMixer::params()
  Eigen::VectorXd input;
};

// Gradients of <upstream, mlp_forward(net, input)>.
MlpGradients mlp_backward(const MlpMixer& net, const Eigen::VectorXd& input,
                          const Eigen::VectorXd& upstream);

// Batched evaluation over row-major (batch x dim) buffers. Keeps every
// layer's activations for a subsequent backward pass.
class MlpBatch {
 public:
  // inputs: batch x input_dim, row-major.
  void forward(const MlpMixer& net, std::span<const double> inputs, std::size_t batch);
  // Row-major batch x output_dim.
  std::span<const double> outputs() const { return acts_.back(); }
  std::span<double> outputs() { return acts_.back(); }
  std::size_t batch() const { return batch_; }

  // Accumulates into grad_params the gradient of sum_b <upstream_b, out_b>.
  // upstream: batch x output_dim, row-major. grad_inputs is optional.
  void backward(const MlpMixer& net, std::span<const double> upstream, std::span<double> grad_params,
                std::span<double> grad_inputs = {});

 private:
  std::size_t batch_ = 0;
  std::vector<std::vector<double>> acts_;  // acts_[0] = inputs, acts_[L] = outputs
  std::vector<double> delta_;
  std::vector<double> delta_next_;
};

// Little-endian: "SGLMMMLP", uint32 version, uint32 n_dims, uint32 dims[],
// uint64 n_params, float64 params[].
void write_mlp(std::ostream& os, const MlpMixer& net);
MlpMixer read_mlp(std::istream& is);

}  // namespace sglmm
