#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gliopipe/error.hpp"
#include "gliopipe/nn/checkpoint.hpp"
#include "gliopipe/nn/optim.hpp"
#include "gliopipe/nn/resnet.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace gliopipe;
using namespace gliopipe::nn;

namespace {

// Parameter count written out from the construction rule.
std::size_t expected_params(int dim, int depth, std::size_t w) {
  auto kk = [&](std::size_t k) { return dim == 2 ? k * k : k * k * k; };
  std::array<int, 4> blocks{};
  bool bottleneck = depth >= 50;
  switch (depth) {
    case 10: blocks = {1, 1, 1, 1}; break;
    case 18: blocks = {2, 2, 2, 2}; break;
    case 34:
    case 50: blocks = {3, 4, 6, 3}; break;
    case 101: blocks = {3, 4, 23, 3}; break;
    case 152: blocks = {3, 8, 36, 3}; break;
  }
  std::size_t n = w * kk(7) + 2 * w;
  std::size_t in = w;
  for (int s = 0; s < 4; ++s) {
    const std::size_t mid = w << s;
    for (int b = 0; b < blocks[s]; ++b) {
      const bool stride = s > 0 && b == 0;
      if (!bottleneck) {
        n += in * mid * kk(3) + 2 * mid + mid * mid * kk(3) + 2 * mid;
        if (stride || in != mid) n += in * mid + 2 * mid;
        in = mid;
      } else {
        const std::size_t out = 4 * mid;
        n += in * mid + 2 * mid + mid * mid * kk(3) + 2 * mid + mid * out + 2 * out;
        if (stride || in != out) n += in * out + 2 * out;
        in = out;
      }
    }
  }
  return n + in + 1;
}

Tensor<float> random_input(std::size_t n, std::size_t d, std::size_t h, std::uint64_t seed) {
  Tensor<float> x(Shape{1, n, d, h, h});
  RandomStream rs(seed);
  for (float& v : x.data) v = static_cast<float>(rs.uniform());
  return x;
}

}  // namespace

TEST_CASE("weighted layer counts") {
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 34, 4)).weighted_layer_count() == 34);
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 50, 4)).weighted_layer_count() == 50);
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 10, 4)).weighted_layer_count() == 10);
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 101, 2)).weighted_layer_count() == 101);
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 152, 2)).weighted_layer_count() == 152);
  CHECK(ResNet<float>(ResNetSpec::canonical(3, 18, 2)).weighted_layer_count() == 18);
}

TEST_CASE("unsupported specs") {
  CHECK_THROWS_AS(ResNetSpec::canonical(3, 50), ConfigError);
  CHECK_THROWS_AS(ResNetSpec::canonical(2, 20), ConfigError);
  CHECK_THROWS_AS(ResNetSpec::canonical(4, 10), ConfigError);
}

TEST_CASE("parameter manifest") {
  const ResNet<float> a(ResNetSpec::canonical(2, 18)), b(ResNetSpec::canonical(2, 18));
  const auto ma = a.manifest(), mb = b.manifest();
  REQUIRE(ma.size() == mb.size());
  for (std::size_t i = 0; i < ma.size(); ++i) {
    CHECK(ma[i].name == mb[i].name);
    CHECK(ma[i].shape == mb[i].shape);
  }
  bool found = false;
  for (const auto& e : ma)
    if (e.name == "layer1.0.conv1.weight") {
      found = true;
      CHECK(e.shape == std::vector<std::size_t>{64, 64, 3, 3});
    }
  CHECK(found);
}

TEST_CASE("parameter counts") {
  // torchvision 3-channel, 1000-class totals with the stem and head adjusted to 1 in, 1 out.
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 18)).parameter_count() == 11689512 - 6272 - 512487);
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 34)).parameter_count() == 21797672 - 6272 - 512487);
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 50)).parameter_count() == 25557032 - 6272 - 2046951);
  for (int dim : {2, 3})
    for (int depth : {10, 18, 34}) {
      const ResNet<float> net(ResNetSpec::canonical(dim, depth, 8));
      CHECK(net.parameter_count() == expected_params(dim, depth, 8));
    }
  for (int depth : {50, 101, 152})
    CHECK(ResNet<float>(ResNetSpec::canonical(2, depth, 4)).parameter_count() == expected_params(2, depth, 4));

  std::size_t prev = 0;
  for (int depth : {10, 18, 34, 50, 101, 152}) {
    const std::size_t n = expected_params(2, depth, 64);
    CHECK(n > prev);
    prev = n;
  }
  CHECK(ResNet<float>(ResNetSpec::canonical(2, 34)).parameter_count() >
        ResNet<float>(ResNetSpec::canonical(2, 18)).parameter_count());
}

TEST_CASE("logit shapes") {
  ResNet<float> net2(ResNetSpec::canonical(2, 10, 8));
  CHECK(net2.forward(random_input(4, 1, 64, 1), Mode::eval).size() == 4);
  ResNet<float> net3(ResNetSpec::canonical(3, 10, 8));
  CHECK(net3.forward(random_input(2, 32, 32, 2), Mode::eval).size() == 2);
}

TEST_CASE("inputs below 32 are rejected") {
  ResNet<float> net(ResNetSpec::canonical(2, 10, 4));
  CHECK_THROWS_WITH_AS(net.forward(random_input(1, 1, 16, 1), Mode::eval), doctest::Contains("shape error"),
                       DataError);
  Tensor<float> two(Shape{2, 1, 1, 32, 32});
  CHECK_THROWS_AS(net.forward(two, Mode::eval), DataError);
}

TEST_CASE("zero head gives a zero logit") {
  ResNet<float> net(ResNetSpec::canonical(2, 18, 8));
  std::fill(net.head().weight.value.begin(), net.head().weight.value.end(), 0.0F);
  std::fill(net.head().bias.value.begin(), net.head().bias.value.end(), 0.0F);
  Tensor<float> x(Shape{1, 2, 1, 32, 32});
  for (float z : net.forward(x, Mode::eval)) CHECK(z == 0.0F);
}

TEST_CASE("eval mode is deterministic and sample independent") {
  for (int dim : {2, 3}) {
    ResNet<float> net(ResNetSpec::canonical(dim, 10, 8), 3);
    const std::size_t d = dim == 3 ? 32 : 1;
    const auto x = random_input(5, d, 32, 9);
    const auto a = net.forward(x, Mode::eval);
    const auto b = net.forward(x, Mode::eval);
    CHECK(a == b);

    // Reverse the batch; logits reverse with it.
    Tensor<float> r(x.shape);
    const std::size_t per = x.shape.spatial();
    for (std::size_t i = 0; i < 5; ++i)
      std::copy_n(x.data.begin() + (4 - i) * per, per, r.data.begin() + i * per);
    const auto c = net.forward(r, Mode::eval);
    for (std::size_t i = 0; i < 5; ++i) CHECK(c[i] == doctest::Approx(a[4 - i]).epsilon(1e-5));

    // One sample alone gives the same logit as inside the batch.
    Tensor<float> one(Shape{1, 1, x.shape.d, x.shape.h, x.shape.w});
    std::copy_n(x.data.begin() + 2 * per, per, one.data.begin());
    CHECK(net.forward(one, Mode::eval)[0] == doctest::Approx(a[2]).epsilon(1e-5));
  }
}

TEST_CASE("training mode updates running statistics") {
  ResNet<float> net(ResNetSpec::canonical(2, 10, 4));
  const auto before = net.buffers()[0]->value;
  RandomStream rs(0);
  net.forward(random_input(4, 1, 32, 3), Mode::train, &rs);
  CHECK(net.buffers()[0]->value != before);
}

TEST_CASE("gradient check on a reduced 2D network") {
  const auto r = gradcheck::run(2, 10, 4, 32, 120, 1e-6, 1e-4, 17);
  MESSAGE("max rel error " << r.max_rel_error << ", median " << r.median_rel_error << ", worst " << r.worst);
  CHECK(r.checked >= 100);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("gradient check on reduced bottleneck and 3D networks") {
  const auto b = gradcheck::run(2, 50, 2, 32, 60, 1e-6, 1e-4, 5);
  MESSAGE("bottleneck worst " << b.worst);
  CHECK(b.max_rel_error <= 1e-4);
  const auto v = gradcheck::run(3, 10, 2, 32, 60, 1e-6, 1e-4, 6);
  MESSAGE("3D worst " << v.worst);
  CHECK(v.max_rel_error <= 1e-4);
}

TEST_CASE("AdamW single step") {
  Parameter<float> w;
  w.name = "w";
  w.shape = {2};
  w.value = {1.0F, -2.0F};
  w.grad = {0.5F, -0.25F};
  Parameter<float> b;
  b.name = "b";
  b.shape = {1};
  b.value = {3.0F};
  b.grad = {0.0F};
  b.decay = false;
  AdamW opt({&w, &b}, {0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step();
  // First step moves each coordinate by lr * sign(g) plus decoupled decay lr * wd * w.
  CHECK(w.value[0] == doctest::Approx(1.0 - 0.1 - 0.1 * 0.01 * 1.0).epsilon(1e-6));
  CHECK(w.value[1] == doctest::Approx(-2.0 + 0.1 + 0.1 * 0.01 * 2.0).epsilon(1e-6));
  CHECK(b.value[0] == 3.0F);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("checkpoint round-trip and corruption") {
  TempDir dir("ckpt");
  ResNet<float> net(ResNetSpec::canonical(2, 10, 4), 1);
  AdamW opt(net.parameters(), {});
  RandomStream rs(1);
  const auto x = random_input(2, 1, 32, 4);
  net.forward(x, Mode::train, &rs);
  net.backward({0.3F, -0.7F});
  opt.step();
  Checkpoint c = capture(net, &opt);
  c.epoch = 7;
  c.tune_loss = 0.4321;
  c.config_hash = "abc";
  write_checkpoint(dir / "m.ckpt", c);
  const Checkpoint back = read_checkpoint(dir / "m.ckpt");
  CHECK(back.epoch == 7);
  CHECK(back.tune_loss == 0.4321);
  CHECK(back.config_hash == "abc");
  CHECK(back.parameters == c.parameters);
  CHECK(back.buffers == c.buffers);
  CHECK(back.adam_m == c.adam_m);
  CHECK(back.optimizer_step == 1);

  ResNet<float> other(ResNetSpec::canonical(2, 10, 4), 99);
  restore(back, other);
  CHECK(other.forward(x, Mode::eval) == net.forward(x, Mode::eval));

  ResNet<float> wrong(ResNetSpec::canonical(2, 18, 4));
  CHECK_THROWS_AS(restore(back, wrong), DataError);

  auto bytes = encode_checkpoint(c);
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_WITH_AS(decode_checkpoint(flipped), doctest::Contains("checksum"), DataError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(magic), doctest::Contains("bad magic"), DataError);
  bytes.resize(bytes.size() - 9);
  CHECK_THROWS_AS(decode_checkpoint(bytes), DataError);
}
