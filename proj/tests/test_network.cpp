#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "umct/errors.hpp"
#include "umct/losses.hpp"
#include "umct/network.hpp"

using namespace umct;
using namespace umct::testing;

namespace {

ArchitectureDescriptor tiny(KernelMode mode = KernelMode::Asymmetric) {
  auto d = ArchitectureDescriptor::with_kernel_mode(mode);
  d.base_channels = 2;
  d.set_depth(1);
  return d;
}

// Independent count from the layer list: stem, per-stage residual blocks
// (two convs) and downsampling, bottleneck block, per decoder stage a 2x
// transposed conv and a conv on the concatenation, 1x1x1 head.
std::int64_t expected_params(const ArchitectureDescriptor& d) {
  auto vol = [](const std::array<int, 3>& k) { return std::int64_t{k[0]} * k[1] * k[2]; };
  auto ch = [&](int s) { return std::int64_t{d.base_channels} << s; };
  const std::int64_t sk = vol(d.stem_kernel), bk = vol(d.body_kernel);
  std::int64_t n = ch(0) * d.in_channels * sk + ch(0);
  auto block = [&](std::int64_t c) { return 2 * (c * c * bk + c); };
  for (int s = 0; s < d.depth; ++s) n += block(ch(s)) + ch(s + 1) * ch(s) * bk + ch(s + 1);
  n += block(ch(d.depth));
  for (int s = 0; s < d.depth; ++s) n += ch(s + 1) * ch(s) * 8 + ch(s) + ch(s) * 2 * ch(s) * bk + ch(s);
  n += d.num_classes * ch(0) + d.num_classes;
  return n;
}

template <typename T>
bool same_params(const SegNet<T>& a, const SegNet<T>& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& x = a.parameters()[i].second.data();
    const auto& y = b.parameters()[i].second.data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

Tensor<float> input(const Shape& s, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>(s, std::move(v));
}

}  // namespace

TEST_CASE("parameter counts follow the layer list in both kernel modes") {
  for (auto mode : {KernelMode::Asymmetric, KernelMode::Symmetric}) {
    auto d = ArchitectureDescriptor::with_kernel_mode(mode);
    SegNet<float> net(d);
    CHECK(static_cast<std::int64_t>(net.parameter_count()) == expected_params(d));
  }
  const auto a = SegNet<float>(ArchitectureDescriptor::with_kernel_mode(KernelMode::Asymmetric)).parameter_count();
  const auto s = SegNet<float>(ArchitectureDescriptor::with_kernel_mode(KernelMode::Symmetric)).parameter_count();
  CHECK(s > a);
  CHECK(ArchitectureDescriptor::with_kernel_mode(KernelMode::Asymmetric).body_kernel == std::array<int, 3>{3, 3, 1});
  CHECK(ArchitectureDescriptor::with_kernel_mode(KernelMode::Symmetric).body_kernel == std::array<int, 3>{3, 3, 3});
}

TEST_CASE("descriptor encode/decode round trip and validation") {
  auto d = ArchitectureDescriptor::with_kernel_mode(KernelMode::Symmetric);
  d.upsampling = Upsampling::Trilinear;
  d.dropout_sites = {0};
  CHECK(ArchitectureDescriptor::decode(d.encode()) == d);
  d.body_kernel = {2, 3, 3};
  CHECK_THROWS_AS(d.validate(), ConfigError);
  CHECK_THROWS_AS(SegNet<float>{d}, ConfigError);
}

TEST_CASE("model init is a pure function of the seed") {
  const auto d = tiny();
  const auto a = build_model<float>(d, ViewTransform{}, 5);
  const auto b = build_model<float>(d, ViewTransform{}, 5);
  const auto c = build_model<float>(d, ViewTransform{}, 6);
  CHECK(same_params(a.net, b.net));
  CHECK_FALSE(same_params(a.net, c.net));
  // Biases start at zero, weights within the fan-in bound.
  for (const auto& [name, t] : a.net.parameters()) {
    if (name.ends_with(".bias")) {
      for (float v : t.data()) CHECK(v == 0.0f);
    } else {
      const auto& s = t.shape();
      // a 2x transposed conv with stride 2 feeds each output voxel from Cin inputs
      const double fan_in = name.starts_with("up") ? double(s[0]) : double(shape_numel(s)) / double(s[0]);
      const double bound = std::sqrt(6.0 / fan_in) + 1e-6;
      for (float v : t.data()) CHECK(std::abs(v) <= bound);
    }
  }
}

TEST_CASE("forward shapes, softmax output, input checks") {
  for (int depth : {1, 2, 3}) {
    auto d = tiny();
    d.set_depth(depth);
    const auto m = build_model<float>(d, ViewTransform::from_id(13), 1);
    const std::int64_t e = 8;
    const auto y = forward(m, input({2, 1, e, e, e}, 2), ForwardMode::Eval, nullptr);
    CHECK(y.shape() == Shape{2, 2, e, e, e});
    const std::int64_t vox = e * e * e;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < vox; i += 37)
        CHECK(y.data()[n * 2 * vox + i] + y.data()[(n * 2 + 1) * vox + i] == doctest::Approx(1.0).epsilon(1e-5));
  }
  const auto m = build_model<float>(tiny(), ViewTransform{}, 1);
  CHECK_THROWS_AS(forward(m, input({1, 1, 5, 4, 4}, 1), ForwardMode::Eval, nullptr), ShapeError);
  CHECK_THROWS_AS(forward(m, input({1, 2, 4, 4, 4}, 1), ForwardMode::Eval, nullptr), ShapeError);
}

TEST_CASE("predict_through_view equals inverse(view) o net o view") {
  const auto x = input({1, 1, 4, 8, 6}, 3);
  for (int id : {0, 13, 29, 47}) {
    const auto t = ViewTransform::from_id(id);
    const auto m = build_model<float>(tiny(), t, 9);
    const auto y = predict_through_view(m, x, ForwardMode::Eval, nullptr);
    const auto ref = inverse(t).apply(m.net.forward(t.apply(x), ForwardMode::Eval, nullptr));
    CHECK(y.shape() == Shape{1, 2, 4, 8, 6});
    CHECK(std::equal(y.data().begin(), y.data().end(), ref.data().begin(), ref.data().end()));
  }
}

TEST_CASE("MC sampling: passes differ, pass k is reproducible on its own") {
  auto d = tiny();
  d.dropout_p = 0.3;
  const auto m = build_model<float>(d, ViewTransform::from_id(20), 4);
  const auto x = input({2, 1, 4, 4, 4}, 5);
  const RngStream rng(77);
  const auto samples = sample_through_view(m, x, 4, rng);
  REQUIRE(samples.size() == 4);
  CHECK_FALSE(std::equal(samples[0].data().begin(), samples[0].data().end(), samples[1].data().begin()));
  for (int k = 0; k < 4; ++k) {
    const auto stream = mc_pass_stream(rng, k);
    const auto single = predict_through_view(m, x, ForwardMode::McSample, &stream);
    CHECK(std::equal(single.data().begin(), single.data().end(), samples[k].data().begin()));
  }
  const auto e1 = predict_through_view(m, x, ForwardMode::Eval, nullptr);
  const auto e2 = predict_through_view(m, x, ForwardMode::Eval, nullptr);
  CHECK(std::equal(e1.data().begin(), e1.data().end(), e2.data().begin()));
}

TEST_CASE("end-to-end gradient of the tiny network (double)") {
  for (auto mode : {KernelMode::Asymmetric, KernelMode::Symmetric}) {
    auto d = tiny(mode);
    d.stem_kernel = {3, 3, 1};
    if (mode == KernelMode::Symmetric) d.stem_kernel = {3, 3, 3};
    d.dropout_p = 0.2;
    auto m = build_model<double>(d, ViewTransform::from_id(13), 3);
    // target: a fixed one-hot map
    const Shape s{1, 2, 4, 4, 2};
    std::vector<double> t(static_cast<std::size_t>(shape_numel(s)), 0.0);
    const std::int64_t vox = 32;
    for (std::int64_t i = 0; i < vox; ++i) t[static_cast<std::size_t>((i % 3 == 0) ? vox + i : i)] = 1.0;
    const TensorD target(s, t);
    const RngStream rng(12);

    std::vector<TensorD> inputs;
    for (const auto& [name, p] : m.net.parameters()) inputs.push_back(p);
    inputs.push_back(random_tensor({1, 1, 4, 4, 2}, 13));
    auto f = [&](const std::vector<TensorD>& in) {
      return dice_loss(predict_through_view(m, in.back(), ForwardMode::Train, &rng), target).loss;
    };
    const auto r = grad_check(f, inputs);
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("checkpoint round trip reproduces outputs; file is self-describing") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "umct_test_ckpt";
  fs::remove_all(dir);
  auto d = tiny(KernelMode::Symmetric);
  const auto m = build_model<float>(d, ViewTransform::from_id(11), 21);
  save_model(dir / "m.ckpt", m);
  const auto back = load_model(dir / "m.ckpt");
  CHECK(back.net.descriptor() == d);
  CHECK(back.view == m.view);
  CHECK(back.seed == m.seed);
  CHECK(same_params(back.net, m.net));
  const auto x = input({1, 1, 4, 4, 4}, 2);
  const auto y1 = predict_through_view(m, x, ForwardMode::Eval, nullptr);
  const auto y2 = predict_through_view(back, x, ForwardMode::Eval, nullptr);
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
  const auto ck = to_checkpoint(m);
  CHECK(decode_checkpoint(encode_checkpoint(ck)).entries.size() == ck.entries.size());
  CHECK(checkpoint_digest(decode_checkpoint(encode_checkpoint(ck))) == checkpoint_digest(ck));
  std::string bytes = encode_checkpoint(ck);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bytes), IoError);
  CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(ck).substr(0, 40)), IoError);
  fs::remove_all(dir);
}

TEST_CASE("2-D kernels load into the flat-slice axis of 3x3x1 slots") {
  auto net = SegNet<float>(tiny());
  const auto& slot = net.param("enc0.conv1.weight");
  const Shape s = slot.shape();
  REQUIRE(s.back() == 1);
  NamedArray e{"enc0.conv1.weight", {s[0], s[1], s[2], s[3]}, {}};
  for (std::int64_t i = 0; i < shape_numel(e.shape); ++i) e.values.push_back(0.5f + static_cast<float>(i));
  load_parameters(net, Checkpoint{"", {e}});
  const auto v = net.param("enc0.conv1.weight").data();
  CHECK(std::equal(v.begin(), v.end(), e.values.begin(), e.values.end()));
}

TEST_CASE("load_parameters names every mismatching entry") {
  auto net = SegNet<float>(tiny());
  Checkpoint ck{"", {{"nope.weight", {1}, {0.f}}, {"stem.bias", {3}, {0.f, 0.f, 0.f}}}};
  try {
    load_parameters(net, ck);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("nope.weight") != std::string::npos);
    CHECK(msg.find("stem.bias") != std::string::npos);
  }
}
