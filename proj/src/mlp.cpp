#include "sglmm/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "sglmm/simd.hpp"

namespace sglmm {

MlpMixer::MlpMixer(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw std::invalid_argument("MlpMixer: need at least input and output dims");
  for (std::size_t d : dims_) {
    if (d == 0) throw std::invalid_argument("MlpMixer: layer dims must be positive");
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offsets_.push_back(off);
    off += dims_[l] * dims_[l + 1] + dims_[l + 1];
  }
  params_.assign(off, 0.0);
}

std::span<double> MlpMixer::weights(std::size_t layer) {
  return std::span<double>(params_).subspan(weight_offset(layer), dims_[layer] * dims_[layer + 1]);
}
std::span<const double> MlpMixer::weights(std::size_t layer) const {
  return std::span<const double>(params_).subspan(weight_offset(layer), dims_[layer] * dims_[layer + 1]);
}
std::span<double> MlpMixer::bias(std::size_t layer) {
  return std::span<double>(params_).subspan(bias_offset(layer), dims_[layer + 1]);
}
std::span<const double> MlpMixer::bias(std::size_t layer) const {
  return std::span<const double>(params_).subspan(bias_offset(layer), dims_[layer + 1]);
}

MlpMixer mlp_init(const std::vector<std::size_t>& dims, Rng& rng) {
  MlpMixer net(dims);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    for (double& w : net.weights(l)) w = rng.uniform(-bound, bound);
  }
  return net;
}

void MlpBatch::forward(const MlpMixer& net, std::span<const double> inputs, std::size_t batch) {
  const auto& dims = net.dims();
  if (inputs.size() != batch * dims.front()) throw std::invalid_argument("MlpBatch::forward: input size mismatch");
  const std::size_t L = net.num_layers();
  batch_ = batch;
  acts_.resize(L + 1);
  acts_[0].assign(inputs.begin(), inputs.end());
  const auto& k = simd::active_kernels();
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    acts_[l + 1].resize(batch * out);
    const double* W = net.weights(l).data();
    const double* b = net.bias(l).data();
    const bool hidden = l + 1 < L;
    for (std::size_t s = 0; s < batch; ++s) {
      double* y = acts_[l + 1].data() + s * out;
      k.gemv(W, acts_[l].data() + s * in, b, y, out, in);
      if (hidden) {
        for (std::size_t o = 0; o < out; ++o) y[o] = std::tanh(y[o]);
      }
    }
  }
}

void MlpBatch::backward(const MlpMixer& net, std::span<const double> upstream, std::span<double> grad_params,
                        std::span<double> grad_inputs) {
  const auto& dims = net.dims();
  const std::size_t L = net.num_layers();
  if (upstream.size() != batch_ * dims.back() || grad_params.size() != net.num_params()) {
    throw std::invalid_argument("MlpBatch::backward: size mismatch");
  }
  if (!grad_inputs.empty() && grad_inputs.size() != batch_ * dims.front()) {
    throw std::invalid_argument("MlpBatch::backward: grad_inputs size mismatch");
  }
  const auto& k = simd::active_kernels();
  delta_.assign(upstream.begin(), upstream.end());
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const double* W = net.weights(l).data();
    double* gW = grad_params.data() + net.weight_offset(l);
    double* gb = grad_params.data() + net.bias_offset(l);
    const std::vector<double>& x = acts_[l];
    for (std::size_t s = 0; s < batch_; ++s) {
      const double* d = delta_.data() + s * out;
      const double* xs = x.data() + s * in;
      for (std::size_t o = 0; o < out; ++o) {
        if (d[o] != 0.0) k.axpy(d[o], xs, gW + o * in, in);
      }
      k.axpy(1.0, d, gb, out);
    }
    const bool need_prev = l > 0 || !grad_inputs.empty();
    if (!need_prev) break;
    delta_next_.assign(batch_ * in, 0.0);
    for (std::size_t s = 0; s < batch_; ++s) {
      double* dp = delta_next_.data() + s * in;
      k.gemv_t_acc(W, delta_.data() + s * out, dp, out, in);
      if (l > 0) {
        const double* h = x.data() + s * in;
        for (std::size_t i = 0; i < in; ++i) dp[i] *= 1.0 - h[i] * h[i];
      }
    }
    std::swap(delta_, delta_next_);
  }
  if (!grad_inputs.empty()) {
    for (std::size_t i = 0; i < grad_inputs.size(); ++i) grad_inputs[i] += delta_[i];
  }
}

Eigen::VectorXd mlp_forward(const MlpMixer& net, const Eigen::VectorXd& input) {
  if (static_cast<std::size_t>(input.size()) != net.input_dim()) {
    throw std::invalid_argument("mlp_forward: input has dimension " + std::to_string(input.size()) +
                                ", network expects " + std::to_string(net.input_dim()));
  }
  MlpBatch batch;
  batch.forward(net, {input.data(), static_cast<std::size_t>(input.size())}, 1);
  const auto out = batch.outputs();
  return Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

MlpGradients mlp_backward(const MlpMixer& net, const Eigen::VectorXd& input, const Eigen::VectorXd& upstream) {
  if (static_cast<std::size_t>(upstream.size()) != net.output_dim()) {
    throw std::invalid_argument("mlp_backward: upstream gradient dimension mismatch");
  }
  MlpBatch batch;
  batch.forward(net, {input.data(), static_cast<std::size_t>(input.size())}, 1);
  MlpGradients g;
  g.params.assign(net.num_params(), 0.0);
  g.input = Eigen::VectorXd::Zero(input.size());
  batch.backward(net, {upstream.data(), static_cast<std::size_t>(upstream.size())}, g.params,
                 {g.input.data(), static_cast<std::size_t>(g.input.size())});
  return g;
}

namespace {

constexpr char kMagic[8] = {'S', 'G', 'L', 'M', 'M', 'M', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("read_mlp: truncated stream");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

}  // namespace

void write_mlp(std::ostream& os, const MlpMixer& net) {
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.dims().size()));
  for (std::size_t d : net.dims()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  put_le<std::uint64_t>(os, net.num_params());
  for (double v : net.params()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("write_mlp: stream error");
}

MlpMixer read_mlp(std::istream& is) {
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("read_mlp: bad magic");
  }
  if (get_le<std::uint32_t>(is) != kVersion) throw std::runtime_error("read_mlp: unsupported version");
  const auto n_dims = get_le<std::uint32_t>(is);
  if (n_dims < 2 || n_dims > 64) throw std::runtime_error("read_mlp: implausible layer count");
  std::vector<std::size_t> dims(n_dims);
  for (auto& d : dims) d = get_le<std::uint32_t>(is);
  MlpMixer net(dims);
  if (get_le<std::uint64_t>(is) != net.num_params()) throw std::runtime_error("read_mlp: parameter count mismatch");
  for (double& v : net.params()) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return net;
}

}  // namespace sglmm
