#include <doctest.h>

#include <cmath>

#include "mfs/models.hpp"
#include "mfs/tensor.hpp"
#include "refmath.hpp"

using namespace mfs;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f,
                     float hi = 1.0f) {
  Tensor t(shape);
  for (float& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Rng rng(1);
  Tensor x = random_tensor({1, 4, 4}, rng);
  Tensor k = Tensor::from_data({1, 1, 1, 1}, {1.0f});
  Tensor y = conv2d(x, k, 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (int i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d 2x2 ones stride 2 sums blocks") {
  Tensor x = Tensor::from_data({1, 4, 4}, std::vector<float>(16, 1.0f));
  Tensor k = Tensor::from_data({1, 1, 2, 2}, std::vector<float>(4, 1.0f));
  Tensor y = conv2d(x, k, 2, 0);
  REQUIRE(y.shape() == std::vector<int>({1, 2, 2}));
  for (float v : y.values()) CHECK(v == doctest::Approx(4.0f));
}

TEST_CASE("conv2d matches the direct-loop oracle") {
  Rng rng(7);
  Tensor x = random_tensor({1, 5, 5}, rng);
  Tensor k = random_tensor({2, 1, 3, 3}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor y = conv2d(x, k, stride, pad);
      int ho = 0, wo = 0;
      auto ref = refmath::conv2d(refmath::from_floats(x.values()), 1, 5, 5,
                                 refmath::from_floats(k.values()), 2, 3, 3,
                                 stride, pad, &ho, &wo);
      REQUIRE(y.shape() == std::vector<int>({2, ho, wo}));
      for (int i = 0; i < y.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("conv2d rejects mismatched shapes with a diagnostic") {
  Tensor x = Tensor::zeros({3, 5, 5});
  Tensor k = Tensor::zeros({4, 2, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d(x, k, 1, 0),
                       doctest::Contains("[3,5,5]"), std::invalid_argument);
  Tensor big = Tensor::zeros({2, 2, 2});
  Tensor k2 = Tensor::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(big, k2, 1, 0), std::invalid_argument);
}

TEST_CASE("conv2d_transpose is the exact adjoint of conv2d") {
  // Odd spatial sizes: the stride-2 stacks in the models only ever use
  // shape-reproducing configurations.
  Rng rng(11);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor x = random_tensor({2, 5, 5}, rng);
      Tensor k = random_tensor({4, 2, 3, 3}, rng);
      Tensor cx = conv2d(x, k, stride, pad);
      Tensor y = random_tensor(cx.shape(), rng);
      Tensor ty = conv2d_transpose(y, k, stride, pad);
      REQUIRE(ty.shape() == x.shape());
      const double lhs = dot(cx.values(), y.values());
      const double rhs = dot(x.values(), ty.values());
      CHECK(std::abs(lhs - rhs) / (std::abs(lhs) + 1e-8) < 1e-4);
    }
  }
}

TEST_CASE("conv2d_transpose identity and scatter") {
  Rng rng(3);
  Tensor x = random_tensor({1, 4, 4}, rng);
  Tensor k1 = Tensor::from_data({1, 1, 1, 1}, {1.0f});
  Tensor y = conv2d_transpose(x, k1, 1, 0);
  for (int i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);

  Tensor ones = Tensor::from_data({1, 2, 2}, std::vector<float>(4, 1.0f));
  Tensor k2 = Tensor::from_data({1, 1, 2, 2}, std::vector<float>(4, 1.0f));
  Tensor scattered = conv2d_transpose(ones, k2, 2, 0);
  REQUIRE(scattered.shape() == std::vector<int>({1, 4, 4}));
  int ho = 0, wo = 0;
  auto ref = refmath::conv2d_transpose(refmath::from_floats(ones.values()), 1, 2, 2,
                                       refmath::from_floats(k2.values()), 1, 2, 2,
                                       2, 0, &ho, &wo);
  for (int i = 0; i < scattered.size(); ++i)
    CHECK(scattered.values()[i] == doctest::Approx(ref[i]));
}

TEST_CASE("lstm_cell zero weights give zero state") {
  const int m = 5, d = 4;
  LstmCellWeights w;
  w.wx = Tensor::zeros({4 * d, m});
  w.wh = Tensor::zeros({4 * d, d});
  w.b = Tensor::zeros({4 * d});
  w.hidden_dim = d;
  Rng rng(5);
  Tensor x = random_tensor({m}, rng);
  auto [h, c] = lstm_cell(x, Tensor::zeros({d}), Tensor::zeros({d}), w);
  for (float v : h.values()) CHECK(v == 0.0f);
  for (float v : c.values()) CHECK(v == 0.0f);
}

TEST_CASE("lstm_cell output bounds and oracle agreement") {
  const int m = 3, d = 4;
  Rng rng(17);
  LstmCellWeights w;
  w.wx = random_tensor({4 * d, m}, rng);
  w.wh = random_tensor({4 * d, d}, rng);
  w.b = random_tensor({4 * d}, rng);
  w.hidden_dim = d;
  Tensor x = random_tensor({m}, rng, -2.0f, 2.0f);
  Tensor h0 = random_tensor({d}, rng);
  Tensor c0 = random_tensor({d}, rng);
  auto [h, c] = lstm_cell(x, h0, c0, w);
  for (float v : h.values()) CHECK(std::abs(v) < 1.0f);
  // |c'| <= |c| + 1 elementwise
  for (int i = 0; i < d; ++i)
    CHECK(std::abs(c.values()[i]) <= std::abs(c0.values()[i]) + 1.0f);

  refmath::Vec rh = refmath::from_floats(h0.values());
  refmath::Vec rc = refmath::from_floats(c0.values());
  refmath::lstm_cell(refmath::from_floats(x.values()), m, rh, rc, d,
                     refmath::from_floats(w.wx.values()),
                     refmath::from_floats(w.wh.values()),
                     refmath::from_floats(w.b.values()));
  for (int i = 0; i < d; ++i) {
    CHECK(h.values()[i] == doctest::Approx(rh[i]).epsilon(1e-5));
    CHECK(c.values()[i] == doctest::Approx(rc[i]).epsilon(1e-5));
  }
}

TEST_CASE("backward: d sum(x*x) = 2x") {
  Tensor x = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f}, true);
  Tape tape;
  Tensor loss = sum(mul(x, x));
  backward(loss, tape);
  CHECK(x.grad()[0] == doctest::Approx(2.0f));
  CHECK(x.grad()[1] == doctest::Approx(4.0f));
  CHECK(x.grad()[2] == doctest::Approx(6.0f));
}

TEST_CASE("backward: constant loss leaves no gradients") {
  Tensor c = Tensor::scalar(3.0f);
  Tape tape;
  CHECK(tape.node_count() == 0);
  backward(c, tape);  // no-op, nothing recorded
  CHECK(!c.requires_grad());
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  Tape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y, tape), std::invalid_argument);
}

TEST_CASE("backward accumulates across fan-out") {
  Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  Tape tape;
  Tensor loss = sum(add(mul(x, x), mul(x, x)));
  backward(loss, tape);
  CHECK(x.grad()[0] == doctest::Approx(4.0f));
  CHECK(x.grad()[1] == doctest::Approx(8.0f));
}

TEST_CASE("toy autoencoder loss gradient matches finite differences") {
  // 3-layer toy net: conv encoder stage + fc, fc + transpose-conv decoder.
  Rng rng(23);
  CaeArch arch = CaeArch::derive(System::burgers, 9, 8);
  CaePair pair = CaePair::init(arch, rng);
  Tensor input = random_tensor({2, 9, 9}, rng, 0.1f, 0.9f);
  const refmath::Vec input_ref = refmath::from_floats(input.values());

  // Check a conv kernel, the encoder fc and a decoder kernel.
  std::vector<Tensor> leaves = {pair.enc_kernels[0], pair.enc_fc_w,
                                pair.dec_kernels[0]};
  DiffFunction f;
  f.build = [&](const std::vector<Tensor>&) {
    Tensor recon = cae_decode(pair, cae_encode(pair, input));
    return sum_sq_diff(recon, input);
  };
  f.value = [&](const std::vector<std::vector<double>>& p) {
    refmath::EncoderRef enc = refmath::encoder_ref(pair);
    refmath::DecoderRef dec = refmath::decoder_ref(pair);
    enc.kernels[0] = p[0];
    enc.fc_w = p[1];
    dec.kernels[0] = p[2];
    auto recon = refmath::decode(dec, refmath::encode(enc, input_ref));
    double acc = 0.0;
    for (size_t i = 0; i < recon.size(); ++i) {
      const double d = recon[i] - input_ref[i];
      acc += d * d;
    }
    return acc;
  };
  const float err = grad_check(f, leaves, 1e-3f);
  CHECK(err < 1e-4f);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
  std::vector<Tensor> params = {p};
  AdamState st;
  st.init(params, {"p"}, 1e-3f);
  adam_step(params, st);
  CHECK(st.step == 1);
  CHECK(p.values()[0] == 1.0f);
  CHECK(p.values()[1] == -2.0f);
  CHECK(p.values()[2] == 0.5f);
}

TEST_CASE("adam: first bias-corrected step moves by ~lr") {
  Tensor p = Tensor::from_data({1}, {1.0f}, true);
  p.grad()[0] = 1.0f;
  std::vector<Tensor> params = {p};
  AdamState st;
  st.init(params, {"p"}, 1e-3f);
  adam_step(params, st);
  CHECK(std::abs(p.values()[0] - (1.0f - 1e-3f)) < 1e-6f);
}

TEST_CASE("adam: identical state and gradients give identical results") {
  auto run = [] {
    Tensor p = Tensor::from_data({2}, {0.3f, -0.7f}, true);
    p.grad()[0] = 0.11f;
    p.grad()[1] = -0.02f;
    std::vector<Tensor> params = {p};
    AdamState st;
    st.init(params, {"p"}, 3e-3f);
    adam_step(params, st);
    adam_step(params, st);
    return std::vector<float>(p.values().begin(), p.values().end());
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}

TEST_CASE("adam aborts on NaN gradient naming the parameter") {
  Tensor p = Tensor::from_data({2}, {1.0f, 1.0f}, true);
  p.grad()[1] = std::nanf("");
  std::vector<Tensor> params = {p};
  AdamState st;
  st.init(params, {"theta_lstm"}, 1e-3f);
  CHECK_THROWS_WITH_AS(adam_step(params, st), doctest::Contains("theta_lstm"),
                       std::runtime_error);
}

TEST_CASE("grad_check: sum of squares") {
  Tensor x = Tensor::from_data({3}, {0.5f, -1.25f, 2.0f});
  DiffFunction f;
  f.build = [](const std::vector<Tensor>& leaves) {
    return sum(mul(leaves[0], leaves[0]));
  };
  f.value = [](const std::vector<std::vector<double>>& p) {
    double acc = 0.0;
    for (double v : p[0]) acc += v * v;
    return acc;
  };
  CHECK(grad_check(f, {x}, 1e-3f) < 1e-6f);
}

TEST_CASE("grad_check: |sum(x)| away from the kink") {
  Tensor x = Tensor::from_data({3}, {0.4f, 0.9f, -0.2f});
  DiffFunction f;
  f.build = [](const std::vector<Tensor>& leaves) {
    return abs_scalar(sum(leaves[0]));
  };
  f.value = [](const std::vector<std::vector<double>>& p) {
    double acc = 0.0;
    for (double v : p[0]) acc += v;
    return std::abs(acc);
  };
  CHECK(grad_check(f, {x}, 1e-3f) < 1e-6f);
}

TEST_CASE("forward and backward are deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(99);
    Tensor x = random_tensor({2, 9, 9}, rng, 0.0f, 1.0f);
    CaeArch arch = CaeArch::derive(System::burgers, 9, 8);
    CaePair pair = CaePair::init(arch, rng);
    pair.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum_sq_diff(cae_decode(pair, cae_encode(pair, x)), x);
    backward(loss, tape);
    std::vector<float> out{loss.item()};
    auto g = pair.enc_fc_w.grad();
    out.insert(out.end(), g.begin(), g.end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite values are rejected, not propagated") {
  Tensor a = Tensor::from_data({2}, {1.0f, std::numeric_limits<float>::infinity()});
  Tensor b = Tensor::from_data({2}, {1.0f, 1.0f});
  CHECK_THROWS_AS(add(a, b), std::runtime_error);
}

TEST_CASE("elementwise ops reject shape mismatches naming both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
}
