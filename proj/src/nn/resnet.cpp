#include "gliopipe/nn/resnet.hpp"

#include <algorithm>
#include <cmath>

#include "gliopipe/error.hpp"

namespace gliopipe::nn {

std::string to_string(BlockKind kind) { return kind == BlockKind::basic ? "basic" : "bottleneck"; }

ResNetSpec ResNetSpec::canonical(int dim, int depth, int base_width, double dropout_p) {
  ResNetSpec s;
  s.dim = dim;
  s.depth = depth;
  s.base_width = base_width;
  s.dropout_p = dropout_p;
  switch (depth) {
    case 10: s.block = BlockKind::basic; s.stage_blocks = {1, 1, 1, 1}; break;
    case 18: s.block = BlockKind::basic; s.stage_blocks = {2, 2, 2, 2}; break;
    case 34: s.block = BlockKind::basic; s.stage_blocks = {3, 4, 6, 3}; break;
    case 50: s.block = BlockKind::bottleneck; s.stage_blocks = {3, 4, 6, 3}; break;
    case 101: s.block = BlockKind::bottleneck; s.stage_blocks = {3, 4, 23, 3}; break;
    case 152: s.block = BlockKind::bottleneck; s.stage_blocks = {3, 8, 36, 3}; break;
    default: throw ConfigError("unsupported ResNet depth " + std::to_string(depth));
  }
  s.validate();
  return s;
}

void ResNetSpec::validate() const {
  if (dim != 2 && dim != 3) throw ConfigError("ResNet dim must be 2 or 3, got " + std::to_string(dim));
  ResNetSpec ref;
  switch (depth) {
    case 10: ref.block = BlockKind::basic; ref.stage_blocks = {1, 1, 1, 1}; break;
    case 18: ref.block = BlockKind::basic; ref.stage_blocks = {2, 2, 2, 2}; break;
    case 34: ref.block = BlockKind::basic; ref.stage_blocks = {3, 4, 6, 3}; break;
    case 50: ref.block = BlockKind::bottleneck; ref.stage_blocks = {3, 4, 6, 3}; break;
    case 101: ref.block = BlockKind::bottleneck; ref.stage_blocks = {3, 4, 23, 3}; break;
    case 152: ref.block = BlockKind::bottleneck; ref.stage_blocks = {3, 8, 36, 3}; break;
    default: throw ConfigError("unsupported ResNet depth " + std::to_string(depth));
  }
  if (dim == 3 && depth != 10 && depth != 18 && depth != 34)
    throw ConfigError("3D ResNet supports depths 10, 18 and 34 only, got " + std::to_string(depth));
  if (block != ref.block || stage_blocks != ref.stage_blocks)
    throw ConfigError("block layout does not match depth " + std::to_string(depth));
  if (base_width < 1) throw ConfigError("base_width must be positive");
  if (in_channels != 1) throw ConfigError("in_channels must be 1");
  if (out_logits != 1) throw ConfigError("out_logits must be 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0,1)");
}

std::string ResNetSpec::name() const {
  return "resnet" + std::to_string(depth) + "_" + std::to_string(dim) + "d";
}

std::array<std::size_t, 5> stage_extents(std::size_t n) {
  auto down = [](std::size_t v, std::size_t k, std::size_t s, std::size_t p) {
    return v + 2 * p < k ? 0 : (v + 2 * p - k) / s + 1;
  };
  std::array<std::size_t, 5> e{};
  e[0] = down(down(n, 7, 2, 3), 3, 2, 1);
  e[1] = e[0];
  for (int i = 2; i < 5; ++i) e[i] = down(e[i - 1], 1, 2, 0);
  return e;
}

namespace {

Triple cube(int dim, std::size_t v) { return dim == 2 ? Triple{1, v, v} : Triple{v, v, v}; }
Triple pad(int dim, std::size_t v) { return dim == 2 ? Triple{0, v, v} : Triple{v, v, v}; }

template <typename T>
class BasicBlock final : public Block<T> {
 public:
  BasicBlock(const std::string& prefix, int dim, std::size_t in_c, std::size_t width, std::size_t stride)
      : conv1_(prefix + ".conv1.weight", in_c, width, cube(dim, 3), cube(dim, stride), pad(dim, 1), dim),
        bn1_(prefix + ".bn1", width),
        conv2_(prefix + ".conv2.weight", width, width, cube(dim, 3), cube(dim, 1), pad(dim, 1), dim),
        bn2_(prefix + ".bn2", width, true) {
    if (stride != 1 || in_c != width) {
      ds_conv_ = std::make_unique<Conv<T>>(prefix + ".downsample.0.weight", in_c, width, cube(dim, 1),
                                           cube(dim, stride), pad(dim, 0), dim);
      ds_bn_ = std::make_unique<BatchNorm<T>>(prefix + ".downsample.1", width);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x), mode));
    h = bn2_.forward(conv2_.forward(h), mode);
    if (ds_conv_) {
      const Tensor<T> sc = ds_bn_->forward(ds_conv_->forward(x), mode);
      for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += sc.data[i];
    } else {
      for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
    }
    return relu_out_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const Tensor<T> d = relu_out_.backward(dy);
    Tensor<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(d)))));
    if (ds_conv_) {
      const Tensor<T> ds = ds_conv_->backward(ds_bn_->backward(d));
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
    } else {
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d.data[i];
    }
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& p, std::vector<Buffer<T>*>& b, std::vector<Conv<T>*>& c) override {
    p.insert(p.end(), {&conv1_.weight, &bn1_.gamma, &bn1_.beta, &conv2_.weight, &bn2_.gamma, &bn2_.beta});
    b.insert(b.end(), {&bn1_.running_mean, &bn1_.running_var, &bn2_.running_mean, &bn2_.running_var});
    c.insert(c.end(), {&conv1_, &conv2_});
    if (ds_conv_) {
      p.insert(p.end(), {&ds_conv_->weight, &ds_bn_->gamma, &ds_bn_->beta});
      b.insert(b.end(), {&ds_bn_->running_mean, &ds_bn_->running_var});
      c.push_back(ds_conv_.get());
    }
  }

  int main_path_convs() const override { return 2; }

 private:
  Conv<T> conv1_;
  BatchNorm<T> bn1_;
  Relu<T> relu1_;
  Conv<T> conv2_;
  BatchNorm<T> bn2_;
  std::unique_ptr<Conv<T>> ds_conv_;
  std::unique_ptr<BatchNorm<T>> ds_bn_;
  Relu<T> relu_out_;
};

template <typename T>
class BottleneckBlock final : public Block<T> {
 public:
  BottleneckBlock(const std::string& prefix, int dim, std::size_t in_c, std::size_t width, std::size_t stride)
      : conv1_(prefix + ".conv1.weight", in_c, width, cube(dim, 1), cube(dim, 1), pad(dim, 0), dim),
        bn1_(prefix + ".bn1", width),
        conv2_(prefix + ".conv2.weight", width, width, cube(dim, 3), cube(dim, stride), pad(dim, 1), dim),
        bn2_(prefix + ".bn2", width),
        conv3_(prefix + ".conv3.weight", width, width * 4, cube(dim, 1), cube(dim, 1), pad(dim, 0), dim),
        bn3_(prefix + ".bn3", width * 4, true) {
    if (stride != 1 || in_c != width * 4) {
      ds_conv_ = std::make_unique<Conv<T>>(prefix + ".downsample.0.weight", in_c, width * 4, cube(dim, 1),
                                           cube(dim, stride), pad(dim, 0), dim);
      ds_bn_ = std::make_unique<BatchNorm<T>>(prefix + ".downsample.1", width * 4);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x), mode));
    h = relu2_.forward(bn2_.forward(conv2_.forward(h), mode));
    h = bn3_.forward(conv3_.forward(h), mode);
    if (ds_conv_) {
      const Tensor<T> sc = ds_bn_->forward(ds_conv_->forward(x), mode);
      for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += sc.data[i];
    } else {
      for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
    }
    return relu_out_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const Tensor<T> d = relu_out_.backward(dy);
    Tensor<T> g = relu2_.backward(conv3_.backward(bn3_.backward(d)));
    Tensor<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
    if (ds_conv_) {
      const Tensor<T> ds = ds_conv_->backward(ds_bn_->backward(d));
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
    } else {
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d.data[i];
    }
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& p, std::vector<Buffer<T>*>& b, std::vector<Conv<T>*>& c) override {
    p.insert(p.end(), {&conv1_.weight, &bn1_.gamma, &bn1_.beta, &conv2_.weight, &bn2_.gamma, &bn2_.beta,
                       &conv3_.weight, &bn3_.gamma, &bn3_.beta});
    b.insert(b.end(), {&bn1_.running_mean, &bn1_.running_var, &bn2_.running_mean, &bn2_.running_var,
                       &bn3_.running_mean, &bn3_.running_var});
    c.insert(c.end(), {&conv1_, &conv2_, &conv3_});
    if (ds_conv_) {
      p.insert(p.end(), {&ds_conv_->weight, &ds_bn_->gamma, &ds_bn_->beta});
      b.insert(b.end(), {&ds_bn_->running_mean, &ds_bn_->running_var});
      c.push_back(ds_conv_.get());
    }
  }

  int main_path_convs() const override { return 3; }

 private:
  Conv<T> conv1_;
  BatchNorm<T> bn1_;
  Relu<T> relu1_;
  Conv<T> conv2_;
  BatchNorm<T> bn2_;
  Relu<T> relu2_;
  Conv<T> conv3_;
  BatchNorm<T> bn3_;
  std::unique_ptr<Conv<T>> ds_conv_;
  std::unique_ptr<BatchNorm<T>> ds_bn_;
  Relu<T> relu_out_;
};

std::size_t final_width(const ResNetSpec& s) {
  return static_cast<std::size_t>(s.base_width) * 8 * static_cast<std::size_t>(s.expansion());
}

}  // namespace

template <typename T>
ResNet<T>::ResNet(const ResNetSpec& spec, std::uint64_t init_seed)
    : spec_((spec.validate(), spec)),
      conv1_("conv1.weight", 1, static_cast<std::size_t>(spec.base_width), cube(spec.dim, 7), cube(spec.dim, 2),
             pad(spec.dim, 3), spec.dim),
      bn1_("bn1", static_cast<std::size_t>(spec.base_width)),
      pool_(cube(spec.dim, 3), cube(spec.dim, 2), pad(spec.dim, 1)),
      dropout_(spec.dropout_p),
      fc_("fc", final_width(spec)) {
  const int dim = spec.dim;
  std::size_t in_c = static_cast<std::size_t>(spec.base_width);
  for (int stage = 0; stage < 4; ++stage) {
    const std::size_t width = static_cast<std::size_t>(spec.base_width) << stage;
    for (int i = 0; i < spec.stage_blocks[static_cast<std::size_t>(stage)]; ++i) {
      const std::size_t stride = (stage > 0 && i == 0) ? 2 : 1;
      const std::string prefix = "layer" + std::to_string(stage + 1) + "." + std::to_string(i);
      if (spec.block == BlockKind::basic) {
        blocks_.push_back(std::make_unique<BasicBlock<T>>(prefix, dim, in_c, width, stride));
        in_c = width;
      } else {
        blocks_.push_back(std::make_unique<BottleneckBlock<T>>(prefix, dim, in_c, width, stride));
        in_c = width * 4;
      }
    }
  }

  std::vector<Conv<T>*> convs{&conv1_};
  params_ = {&conv1_.weight, &bn1_.gamma, &bn1_.beta};
  buffers_ = {&bn1_.running_mean, &bn1_.running_var};
  for (auto& b : blocks_) b->collect(params_, buffers_, convs);
  params_.push_back(&fc_.weight);
  params_.push_back(&fc_.bias);

  RandomStream rs(mix_key(init_seed, 0x1A17ULL));
  for (Conv<T>* c : convs) c->init_he(rs);
  fc_.init_default(rs);
}

template <typename T>
ResNet<T>::~ResNet() = default;

template <typename T>
void ResNet<T>::check_input(const Tensor<T>& x) const {
  if (x.shape.c != 1) throw DataError("shape error: expected 1 input channel, got " + std::to_string(x.shape.c));
  if (x.shape.n == 0) throw DataError("shape error: empty batch");
  if (spec_.dim == 2 && x.shape.d != 1) throw DataError("shape error: 2D network given a volume");
  std::vector<std::size_t> axes{x.shape.h, x.shape.w};
  if (spec_.dim == 3) axes.insert(axes.begin(), x.shape.d);
  static const char* const kStages[] = {"stem", "layer1", "layer2", "layer3", "layer4"};
  for (std::size_t a : axes) {
    if (a >= 32) continue;
    // Report the first stage at which a 32-extent input would still have room.
    const auto e = stage_extents(a);
    const auto ref = stage_extents(32);
    std::size_t s = 0;
    while (s < 5 && e[s] >= ref[s]) ++s;
    throw DataError("shape error: spatial extent " + std::to_string(a) + " below 32 collapses at " + kStages[std::min<std::size_t>(s, 4)]);
  }
}

template <typename T>
std::vector<T> ResNet<T>::forward(const Tensor<T>& x, Mode mode, RandomStream* rs) {
  check_input(x);
  Tensor<T> h = pool_.forward(relu_.forward(bn1_.forward(conv1_.forward(x), mode)));
  for (auto& b : blocks_) h = b->forward(h, mode);
  h = gap_.forward(h);
  h = dropout_.forward(h, mode, rs);
  return fc_.forward(h);
}

template <typename T>
void ResNet<T>::backward(const std::vector<T>& dlogits) {
  Tensor<T> d = dropout_.backward(fc_.backward(dlogits));
  d = gap_.backward(d);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
  d = bn1_.backward(relu_.backward(pool_.backward(d)));
  conv1_.backward(d, false);
}

template <typename T>
void ResNet<T>::zero_grad() {
  for (Parameter<T>* p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
std::vector<ManifestEntry> ResNet<T>::manifest() const {
  std::vector<ManifestEntry> out;
  out.reserve(params_.size());
  for (const Parameter<T>* p : params_) out.push_back({p->name, p->shape, p->count()});
  return out;
}

template <typename T>
std::size_t ResNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter<T>* p : params_) n += p->count();
  return n;
}

template <typename T>
int ResNet<T>::weighted_layer_count() const {
  int n = 2;
  for (const auto& b : blocks_) n += b->main_path_convs();
  return n;
}

template class ResNet<float>;
template class ResNet<double>;

}  // namespace gliopipe::nn
