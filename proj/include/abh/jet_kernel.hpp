#pragma once

// Batched evaluation of a tanh MLP together with its input derivatives.
//
// Each point carries a small jet: the raw output and a chosen subset of
// d/da, d/dz, d/dt, d2/da2, d2/dz2, propagated forward through the layers
// (Taylor mode). All channels of a chunk of points are stacked side by side so
// that every layer is one matrix-matrix product. `backward` pulls adjoints of
// the output jets back to the flat parameter gradient.
//
// Points are split into fixed-size chunks processed in parallel with OpenMP;
// per-chunk gradients are summed in chunk order, so results do not depend on
// the thread count.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "abh/net.hpp"
#include "abh/sampler.hpp"

namespace abh::kernel {

enum class Channel : std::uint8_t { value = 0, d_a = 1, d_z = 2, d_t = 3, d_aa = 4, d_zz = 5 };

inline constexpr std::size_t kChannelKinds = 6;
inline constexpr std::size_t kChunkPoints = 32;

class ChannelSet {
 public:
  ChannelSet() = default;
  ChannelSet(std::initializer_list<Channel> channels);

  bool has(Channel c) const noexcept { return (mask_ >> static_cast<unsigned>(c)) & 1U; }
  std::size_t count() const noexcept { return order_.size(); }
  /// Position of `c` among the active channels.
  std::size_t slot(Channel c) const;
  Channel at(std::size_t k) const { return order_.at(k); }

 private:
  std::uint8_t mask_ = 1;  // value is always present
  std::vector<Channel> order_{Channel::value};
  std::array<std::size_t, kChannelKinds> slot_{};
};

class BatchJets {
 public:
  /// Throws DomainError if a point lies outside the scaler's box.
  static BatchJets forward(const MlpParams& params, const InputScaler& scaler, std::span<const Point3> points,
                           const ChannelSet& channels);

  BatchJets(BatchJets&&) noexcept;
  BatchJets& operator=(BatchJets&&) noexcept;
  ~BatchJets();

  std::size_t size() const noexcept { return points_.size(); }
  const ChannelSet& channels() const noexcept { return channels_; }
  double operator()(std::size_t point, Channel c) const { return outputs_[point * channels_.count() + channels_.slot(c)]; }
  /// Output jets, laid out [point][active channel].
  std::span<const double> outputs() const noexcept { return outputs_; }

  /// Adds d(loss)/d(params) to `grad` given d(loss)/d(output jets) in the same
  /// layout as `outputs()`.
  void backward(std::span<const double> output_adjoints, std::span<double> grad) const;

 private:
  struct Chunk;
  BatchJets(const MlpParams& params, const InputScaler& scaler, std::span<const Point3> points,
            const ChannelSet& channels);

  const MlpParams* params_;
  InputScaler scaler_;
  ChannelSet channels_;
  std::vector<Point3> points_;
  std::vector<double> outputs_;
  std::vector<std::unique_ptr<Chunk>> chunks_;
};

/// Forward-only convenience: raw outputs of `params` at `points`.
std::vector<double> raw_outputs(const MlpParams& params, const InputScaler& scaler, std::span<const Point3> points);

/// Worker count used by the kernels (OpenMP max threads, or 1).
int worker_count();

}  // namespace abh::kernel
