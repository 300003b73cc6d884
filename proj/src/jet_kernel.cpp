#include "abh/jet_kernel.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "abh/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace abh::kernel {

namespace {

using Matrix = Eigen::MatrixXd;
using Block = Eigen::Block<Matrix>;

int dimension_of(Channel c) {
  switch (c) {
    case Channel::d_a:
    case Channel::d_aa:
      return 0;
    case Channel::d_z:
    case Channel::d_zz:
      return 1;
    case Channel::d_t:
      return 2;
    case Channel::value:
      break;
  }
  return -1;
}

bool is_second(Channel c) { return c == Channel::d_aa || c == Channel::d_zz; }

Channel first_of(Channel second) { return second == Channel::d_aa ? Channel::d_a : Channel::d_z; }

}  // namespace

int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

ChannelSet::ChannelSet(std::initializer_list<Channel> channels) {
  for (Channel c : channels) {
    const unsigned bit = 1U << static_cast<unsigned>(c);
    if (mask_ & bit) continue;
    mask_ |= static_cast<std::uint8_t>(bit);
  }
  if (has(Channel::d_aa) && !has(Channel::d_a)) throw ConfigError("jet channels: d_aa requires d_a");
  if (has(Channel::d_zz) && !has(Channel::d_z)) throw ConfigError("jet channels: d_zz requires d_z");
  order_.clear();
  for (std::size_t k = 0; k < kChannelKinds; ++k) {
    if (has(static_cast<Channel>(k))) {
      slot_[k] = order_.size();
      order_.push_back(static_cast<Channel>(k));
    }
  }
}

std::size_t ChannelSet::slot(Channel c) const {
  if (!has(c)) throw ConfigError("jet channels: requested channel was not computed");
  return slot_[static_cast<std::size_t>(c)];
}

struct BatchJets::Chunk {
  std::size_t begin = 0;
  std::size_t n = 0;
  Matrix input;              // 3 x (C n)
  std::vector<Matrix> pre;   // per layer, pre-activation
  std::vector<Matrix> post;  // per hidden layer, post-activation
};

namespace {

// Channel block k of a (rows x C n) matrix.
template <class M>
auto cols(M& m, std::size_t k, std::size_t n) {
  return m.middleCols(static_cast<Eigen::Index>(k * n), static_cast<Eigen::Index>(n)).array();
}

void activate(const Matrix& z, Matrix& h, const ChannelSet& ch, std::size_t n) {
  h.resize(z.rows(), z.cols());
  const std::size_t v = ch.slot(Channel::value);
  cols(h, v, n) = cols(z, v, n).tanh();
  if (ch.count() == 1) return;
  const Eigen::ArrayXXd h0 = cols(h, v, n);
  const Eigen::ArrayXXd s1 = 1.0 - h0.square();
  const Eigen::ArrayXXd s2 = -2.0 * h0 * s1;
  for (std::size_t k = 0; k < ch.count(); ++k) {
    const Channel c = ch.at(k);
    if (c == Channel::value) continue;
    if (is_second(c)) {
      const std::size_t d = ch.slot(first_of(c));
      cols(h, k, n) = s2 * cols(z, d, n).square() + s1 * cols(z, k, n);
    } else {
      cols(h, k, n) = s1 * cols(z, k, n);
    }
  }
}

// Adjoint of the pre-activation given the adjoint of the post-activation.
void activate_backward(const Matrix& z, const Matrix& h, const Matrix& h_bar, Matrix& z_bar, const ChannelSet& ch,
                       std::size_t n) {
  z_bar.resize(z.rows(), z.cols());
  const std::size_t v = ch.slot(Channel::value);
  const Eigen::ArrayXXd h0 = cols(h, v, n);
  const Eigen::ArrayXXd s1 = 1.0 - h0.square();
  cols(z_bar, v, n) = s1 * cols(h_bar, v, n);
  if (ch.count() == 1) return;
  const Eigen::ArrayXXd s2 = -2.0 * h0 * s1;
  const Eigen::ArrayXXd s3 = -2.0 * s1.square() + 4.0 * h0.square() * s1;
  for (std::size_t k = 0; k < ch.count(); ++k) {
    const Channel c = ch.at(k);
    if (c == Channel::value || is_second(c)) continue;
    cols(z_bar, k, n) = s1 * cols(h_bar, k, n);
    cols(z_bar, v, n) += s2 * cols(z, k, n) * cols(h_bar, k, n);
  }
  for (std::size_t k = 0; k < ch.count(); ++k) {
    const Channel c = ch.at(k);
    if (!is_second(c)) continue;
    const std::size_t d = ch.slot(first_of(c));
    cols(z_bar, k, n) = s1 * cols(h_bar, k, n);
    cols(z_bar, d, n) += 2.0 * s2 * cols(z, d, n) * cols(h_bar, k, n);
    cols(z_bar, v, n) += (s3 * cols(z, d, n).square() + s2 * cols(z, k, n)) * cols(h_bar, k, n);
  }
}

void check_points(const InputScaler& scaler, std::span<const Point3> points) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!scaler.contains(points[i].a, points[i].z, points[i].t)) {
      throw DomainError("jet kernel: point " + std::to_string(i) + " outside the domain box");
    }
  }
}

// Forward pass of one chunk; fills chunk activations and writes output jets.
void forward_chunk(const MlpParams& params, const InputScaler& scaler, std::span<const Point3> points,
                   const ChannelSet& ch, std::size_t begin, std::size_t n, Matrix& input,
                   std::vector<Matrix>& pre, std::vector<Matrix>& post, std::span<double> outputs) {
  const std::size_t c_count = ch.count();
  const std::size_t layers = params.layer_count();
  input.setZero(3, static_cast<Eigen::Index>(c_count * n));
  const std::size_t v = ch.slot(Channel::value);
  for (std::size_t p = 0; p < n; ++p) {
    const Point3& pt = points[begin + p];
    const auto col = static_cast<Eigen::Index>(v * n + p);
    input(0, col) = scaler.scale(0, pt.a);
    input(1, col) = scaler.scale(1, pt.z);
    input(2, col) = scaler.scale(2, pt.t);
  }
  for (std::size_t k = 0; k < c_count; ++k) {
    const Channel c = ch.at(k);
    if (c == Channel::value || is_second(c)) continue;
    const int d = dimension_of(c);
    cols(input, k, n).row(d).setConstant(scaler.slope(static_cast<std::size_t>(d)));
  }
  pre.resize(layers);
  post.resize(layers > 0 ? layers - 1 : 0);
  const Matrix* prev = &input;
  for (std::size_t l = 0; l < layers; ++l) {
    pre[l].noalias() = params.weight(l) * (*prev);
    pre[l].middleCols(static_cast<Eigen::Index>(v * n), static_cast<Eigen::Index>(n)).colwise() += params.bias(l);
    if (l + 1 < layers) {
      activate(pre[l], post[l], ch, n);
      prev = &post[l];
    }
  }
  const Matrix& out = pre.back();
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t k = 0; k < c_count; ++k) {
      outputs[(begin + p) * c_count + k] = out(0, static_cast<Eigen::Index>(k * n + p));
    }
  }
}

}  // namespace

BatchJets::BatchJets(const MlpParams& params, const InputScaler& scaler, std::span<const Point3> points,
                     const ChannelSet& channels)
    : params_(&params), scaler_(scaler), channels_(channels), points_(points.begin(), points.end()) {}

BatchJets::BatchJets(BatchJets&&) noexcept = default;
BatchJets& BatchJets::operator=(BatchJets&&) noexcept = default;
BatchJets::~BatchJets() = default;

BatchJets BatchJets::forward(const MlpParams& params, const InputScaler& scaler, std::span<const Point3> points,
                             const ChannelSet& channels) {
  if (params.layer_sizes().front() != 3 || params.layer_sizes().back() != 1) {
    throw ConfigError("jet kernel: network must map 3 inputs to 1 output");
  }
  check_points(scaler, points);
  BatchJets jets(params, scaler, points, channels);
  const std::size_t n_points = points.size();
  const std::size_t n_chunks = (n_points + kChunkPoints - 1) / kChunkPoints;
  jets.outputs_.assign(n_points * channels.count(), 0.0);
  jets.chunks_.resize(n_chunks);
  for (auto& c : jets.chunks_) c = std::make_unique<Chunk>();
  const std::span<const Point3> pts = jets.points_;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n_chunks); ++k) {
    Chunk& chunk = *jets.chunks_[static_cast<std::size_t>(k)];
    chunk.begin = static_cast<std::size_t>(k) * kChunkPoints;
    chunk.n = std::min(kChunkPoints, n_points - chunk.begin);
    forward_chunk(params, scaler, pts, channels, chunk.begin, chunk.n, chunk.input, chunk.pre, chunk.post,
                  jets.outputs_);
  }
  return jets;
}

void BatchJets::backward(std::span<const double> output_adjoints, std::span<double> grad) const {
  const MlpParams& params = *params_;
  if (output_adjoints.size() != outputs_.size()) throw ConfigError("jet kernel: adjoint size mismatch");
  if (grad.size() != params.parameter_count()) throw ConfigError("jet kernel: gradient size mismatch");
  const std::size_t layers = params.layer_count();
  const std::size_t c_count = channels_.count();
  const std::size_t v = channels_.slot(Channel::value);
  const std::size_t n_chunks = chunks_.size();
  const std::size_t workers = static_cast<std::size_t>(std::max(1, worker_count()));
  std::vector<std::vector<double>> partial(std::min(workers, std::max<std::size_t>(n_chunks, 1)),
                                           std::vector<double>(params.parameter_count()));

  // Waves of `partial.size()` chunks; each wave is reduced in chunk order.
  for (std::size_t wave = 0; wave < n_chunks; wave += partial.size()) {
    const std::size_t wave_end = std::min(n_chunks, wave + partial.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t kk = static_cast<std::ptrdiff_t>(wave); kk < static_cast<std::ptrdiff_t>(wave_end); ++kk) {
      const Chunk& chunk = *chunks_[static_cast<std::size_t>(kk)];
      std::vector<double>& g = partial[static_cast<std::size_t>(kk) - wave];
      std::fill(g.begin(), g.end(), 0.0);
      const std::size_t n = chunk.n;
      Matrix bar(1, static_cast<Eigen::Index>(c_count * n));
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t k = 0; k < c_count; ++k) {
          bar(0, static_cast<Eigen::Index>(k * n + p)) = output_adjoints[(chunk.begin + p) * c_count + k];
        }
      }
      Matrix h_bar;
      for (std::size_t l = layers; l-- > 0;) {
        const Matrix& prev = l == 0 ? chunk.input : chunk.post[l - 1];
        Eigen::Map<RowMatrix> g_w(g.data() + params.weight_offset(l), static_cast<Eigen::Index>(params.layer_sizes()[l + 1]),
                                  static_cast<Eigen::Index>(params.layer_sizes()[l]));
        Eigen::Map<Eigen::VectorXd> g_b(g.data() + params.bias_offset(l),
                                        static_cast<Eigen::Index>(params.layer_sizes()[l + 1]));
        // Product into an aligned temporary: Eigen's vectorised paths peel by destination alignment.
        Matrix tmp_w;
        tmp_w.noalias() = bar * prev.transpose();
        g_w = tmp_w;
        Eigen::VectorXd tmp_b = bar.middleCols(static_cast<Eigen::Index>(v * n), static_cast<Eigen::Index>(n)).rowwise().sum();
        g_b = tmp_b;
        if (l == 0) break;
        h_bar.noalias() = params.weight(l).transpose() * bar;
        Matrix z_bar;
        activate_backward(chunk.pre[l - 1], chunk.post[l - 1], h_bar, z_bar, channels_, n);
        bar = std::move(z_bar);
      }
    }
    for (std::size_t kk = wave; kk < wave_end; ++kk) {
      const std::vector<double>& g = partial[kk - wave];
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
  }
}

std::vector<double> raw_outputs(const MlpParams& params, const InputScaler& scaler, std::span<const Point3> points) {
  check_points(scaler, points);
  const ChannelSet ch{Channel::value};
  const std::size_t n_points = points.size();
  const std::size_t n_chunks = (n_points + kChunkPoints - 1) / kChunkPoints;
  std::vector<double> out(n_points);
#pragma omp parallel
  {
    Matrix input;
    std::vector<Matrix> pre;
    std::vector<Matrix> post;
#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n_chunks); ++k) {
      const std::size_t begin = static_cast<std::size_t>(k) * kChunkPoints;
      const std::size_t n = std::min(kChunkPoints, n_points - begin);
      forward_chunk(params, scaler, points, ch, begin, n, input, pre, post, out);
    }
  }
  return out;
}

}  // namespace abh::kernel
