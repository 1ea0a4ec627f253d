#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "../support/gradcheck.hpp"
#include "spoofmeta/error.hpp"
#include "spoofmeta/tensor.hpp"

using namespace spoofmeta;
using namespace spoofmeta::tensor;

TEST_CASE("every op passes a finite-difference check") {
  for (const auto& op : gradcheck::all_ops()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const double err = gradcheck::check(op, 1000 + seed);
      CHECK_MESSAGE(err < 1e-4, op.name << " seed " << seed << " rel err " << err);
    }
  }
}

TEST_CASE("conv2d forward matches a direct loop") {
  std::mt19937_64 rng(4);
  const Tensor x = gradcheck::randn({2, 3, 6, 5}, rng);
  const Tensor k = gradcheck::randn({4, 3, 3, 2}, rng);
  const Tensor b = gradcheck::randn({4}, rng);
  Tape tape;
  const Tensor y = conv2d(tape.leaf(x), tape.leaf(k), tape.leaf(b), 2).value();
  REQUIRE(y.shape() == Shape{2, 4, 2, 2});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          double acc = b[f];
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t u = 0; u < 3; ++u)
              for (std::size_t v = 0; v < 2; ++v)
                acc += x[((n * 3 + c) * 6 + 2 * i + u) * 5 + 2 * j + v] * k[((f * 3 + c) * 3 + u) * 2 + v];
          CHECK(y[((n * 4 + f) * 2 + i) * 2 + j] == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("maxpool drops odd edges and routes gradient to the winner") {
  Tape tape;
  Tensor x({1, 1, 3, 3}, std::vector<double>{1, 5, 0, 2, 3, 9, 7, 8, 6});
  Var in = tape.leaf(x);
  Var y = maxpool2(in);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value()[0] == 5.0);
  tape.backward(mean(y));
  CHECK(in.grad()[1] == 1.0);
  CHECK(in.grad()[5] == 0.0);
}

TEST_CASE("sq_euclidean_rows and softmax cross entropy values") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 2}, std::vector<double>{0, 0, 1, 1}));
  Var b = tape.leaf(Tensor({1, 2}, std::vector<double>{3, 4}));
  const Tensor d = sq_euclidean_rows(a, b).value();
  CHECK(d[0] == 25.0);
  CHECK(d[1] == 13.0);
  Var logits = tape.leaf(Tensor({1, 2}, std::vector<double>{0.0, std::log(3.0)}));
  const std::vector<int> label{1};
  CHECK(softmax_cross_entropy(logits, label).value().item() == doctest::Approx(-std::log(0.75)));
  Var big = tape.leaf(Tensor({1, 2}, std::vector<double>{1000.0, 0.0}));
  CHECK(softmax_cross_entropy(big, label).value().item() == doctest::Approx(1000.0));
}

TEST_CASE("shape errors name the op") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, tape.leaf(Tensor({3, 2}))), ValidationError);
  CHECK_THROWS_AS(reshape(a, {4}), ValidationError);
  CHECK_THROWS_AS(conv2d(tape.leaf(Tensor({1, 1, 2, 2})), tape.leaf(Tensor({1, 1, 3, 3})), tape.leaf(Tensor({1}))),
                  ValidationError);
  const std::vector<int> bad{5, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(a, bad), ValidationError);
}

TEST_CASE("tape rules") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, std::vector<double>{1.0, 2.0}));
  Var c = tape.constant(Tensor({2}, std::vector<double>{3.0, 4.0}));
  Var l = mean(mul(x, c));
  tape.backward(l);
  CHECK(x.grad()[0] == 1.5);
  CHECK(x.grad()[1] == 2.0);
  CHECK_THROWS(tape.backward(l));
  tape.zero_grad();
  Var inf = tape.leaf(Tensor({1}, std::vector<double>{std::numeric_limits<double>::max()}));
  CHECK_THROWS_AS(scale(inf, 10.0), NumericError);
  Tape other;
  Var y = other.leaf(Tensor({2}));
  CHECK_THROWS_AS(add(x, y), ValidationError);
  CHECK_THROWS(mean(Var{}));
}

TEST_CASE("optimizer steps") {
  ParamSet p{{"w", Tensor({2}, std::vector<double>{1.0, -1.0})}};
  ParamSet g{{"w", Tensor({2}, std::vector<double>{0.5, -2.0})}};
  const ParamSet s = sgd_step(p, g, 0.1);
  CHECK(s.at("w")[0] == doctest::Approx(0.95));
  CHECK(s.at("w")[1] == doctest::Approx(-0.8));

  AdamState adam;
  const ParamSet a1 = adam_step(adam, p, g, 0.01);
  // First Adam step moves each coordinate by lr * sign(g) (up to eps).
  CHECK(a1.at("w")[0] == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(a1.at("w")[1] == doctest::Approx(-0.99).epsilon(1e-9));
  CHECK(adam.step == 1);
  ParamSet wrong{{"v", Tensor({2})}};
  CHECK_THROWS_AS(sgd_step(p, wrong, 0.1), ValidationError);
  CHECK(l2_norm(g) == doctest::Approx(std::sqrt(4.25)));
}

TEST_CASE("checkpoint round trip and corruption") {
  ParamSet p{{"a.w", Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, -6.5})}, {"b", Tensor::scalar(0.25)}};
  auto bytes = encode_checkpoint(p);
  CHECK(bytes[0] == 'S');
  CHECK(bytes[3] == '1');
  CHECK(decode_checkpoint(bytes) == p);
  bytes[10] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(bytes), DataError);
  bytes[10] ^= 0x01;
  bytes.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(bytes), DataError);

  const auto path = std::filesystem::temp_directory_path() / "spoofmeta_ckpt_test.spl";
  save_checkpoint(path, p);
  CHECK(load_checkpoint(path) == p);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}
