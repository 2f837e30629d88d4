#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "gliopipe/nn/layers.hpp"

namespace gliopipe::nn {

enum class BlockKind { basic, bottleneck };

std::string to_string(BlockKind kind);

struct ResNetSpec {
  int dim = 2;
  int depth = 18;
  BlockKind block = BlockKind::basic;
  std::array<int, 4> stage_blocks{2, 2, 2, 2};
  int base_width = 64;
  int in_channels = 1;
  int out_logits = 1;
  double dropout_p = 0.2;

  /// Canonical spec for a depth; throws ConfigError for unsupported (dim, depth).
  static ResNetSpec canonical(int dim, int depth, int base_width = 64, double dropout_p = 0.2);
  /// Throws ConfigError if the fields are inconsistent with the canonical table.
  void validate() const;
  int expansion() const { return block == BlockKind::bottleneck ? 4 : 1; }
  std::string name() const;
};

struct ManifestEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t count = 0;
};

template <typename T>
class Block {
 public:
  virtual ~Block() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect(std::vector<Parameter<T>*>& params, std::vector<Buffer<T>*>& buffers,
                       std::vector<Conv<T>*>& convs) = 0;
  /// Convolutions on the main path (excludes the projection shortcut).
  virtual int main_path_convs() const = 0;
};

template <typename T>
class ResNet {
 public:
  /// Builds the network and initializes parameters from `init_seed`.
  explicit ResNet(const ResNetSpec& spec, std::uint64_t init_seed = 0);
  ~ResNet();
  ResNet(const ResNet&) = delete;
  ResNet& operator=(const ResNet&) = delete;

  /// `x` has shape (1, N, D, H, W). Returns one logit per sample. In training
  /// mode `rs` supplies the dropout mask.
  std::vector<T> forward(const Tensor<T>& x, Mode mode, RandomStream* rs = nullptr);
  /// Accumulates parameter gradients for dL/dlogits from the last forward.
  void backward(const std::vector<T>& dlogits);
  void zero_grad();

  const ResNetSpec& spec() const { return spec_; }
  std::vector<Parameter<T>*>& parameters() { return params_; }
  std::vector<Buffer<T>*>& buffers() { return buffers_; }
  std::vector<ManifestEntry> manifest() const;
  std::size_t parameter_count() const;
  /// Stem conv + main-path block convs + final linear.
  int weighted_layer_count() const;

  Linear<T>& head() { return fc_; }

 private:
  void check_input(const Tensor<T>& x) const;

  ResNetSpec spec_;
  Conv<T> conv1_;
  BatchNorm<T> bn1_;
  Relu<T> relu_;
  MaxPool<T> pool_;
  std::vector<std::unique_ptr<Block<T>>> blocks_;
  GlobalAvgPool<T> gap_;
  Dropout<T> dropout_;
  Linear<T> fc_;
  std::vector<Parameter<T>*> params_;
  std::vector<Buffer<T>*> buffers_;
};

/// Spatial extent after the stem and each stage for an input of extent `n`.
std::array<std::size_t, 5> stage_extents(std::size_t n);

extern template class ResNet<float>;
extern template class ResNet<double>;

}  // namespace gliopipe::nn
