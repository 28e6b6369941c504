#include <doctest.h>

#include <cmath>

#include "fasn/attention_gate.hpp"
#include "support.hpp"

using namespace fasn;
using namespace fasn::test;

TEST_CASE("gate inner width is half the skip width, at least one") {
  Random rng(1);
  CHECK(AttentionGate<float>(8, 16, rng).inner_channels() == 4);
  CHECK(AttentionGate<float>(5, 3, rng).inner_channels() == 2);
  CHECK(AttentionGate<float>(1, 3, rng).inner_channels() == 1);
  AttentionGate<float> g(6, 4, rng);
  NamedTensors<float> named;
  g.collect_parameters("gate", named);
  std::size_t count = 0;
  for (const auto& [name, t] : named) count += t.numel();
  // w_g: 4*3+3, w_x: 6*3+3, psi: 3+1
  CHECK(count == 15 + 21 + 4);
  CHECK(named.front().first == "gate.w_g.weight");
  CHECK(named.back().first == "gate.psi.bias");
}

TEST_CASE("saturated gates pass or block the skip features") {
  Random rng(2);
  const Tensor skip = random_tensor<float>({2, 4, 5, 3}, rng);
  const Tensor dec = random_tensor<float>({2, 6, 5, 3}, rng);
  AttentionGate<float> gate(4, 6, rng);
  Tape tape(false);

  gate.force_open();
  const Tensor open = gate.forward(tape, skip, dec);
  for (std::size_t i = 0; i < skip.numel(); ++i) CHECK(std::abs(open.data()[i] - skip.data()[i]) < 1e-6);

  auto w = gate.psi().weight().mutable_data();
  std::fill(w.begin(), w.end(), 0.0f);
  gate.psi().bias().mutable_data()[0] = -20.0f;
  const Tensor closed = gate.forward(tape, skip, dec);
  for (float v : closed.data()) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("gate output equals skip times a step-by-step recomputed coefficient map") {
  Random rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    AttentionGate<float> gate(4, 3, rng);
    const Tensor skip = random_tensor<float>({2, 4, 4, 4}, rng, -3, 3);
    const Tensor dec = random_tensor<float>({2, 3, 4, 4}, rng, -3, 3);
    Tape tape(false);
    const Tensor alpha = gate.coefficients(tape, skip, dec);
    REQUIRE(alpha.shape() == Shape{2, 1, 4, 4});

    const Tensor oracle = sigmoid(
        tape, gate.psi().forward(tape, relu(tape, add(tape, gate.decoder_projection().forward(tape, dec),
                                                      gate.skip_projection().forward(tape, skip)))));
    for (std::size_t i = 0; i < alpha.numel(); ++i) {
      CHECK(alpha.data()[i] == oracle.data()[i]);
      CHECK(alpha.data()[i] > 0.0f);
      CHECK(alpha.data()[i] < 1.0f);
    }
    const Tensor out = gate.forward(tape, skip, dec);
    REQUIRE(out.shape() == skip.shape());
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t j = 0; j < 4; ++j) {
            CHECK(out.at(n, c, i, j) == skip.at(n, c, i, j) * alpha.at(n, 0, i, j));
            CHECK(std::abs(out.at(n, c, i, j)) <= std::abs(skip.at(n, c, i, j)));
          }
  }
}

TEST_CASE("scaling the skip input keeps output = skip * alpha") {
  Random rng(4);
  AttentionGate<float> gate(2, 2, rng);
  const Tensor skip = random_tensor<float>({1, 2, 3, 3}, rng);
  const Tensor dec = random_tensor<float>({1, 2, 3, 3}, rng);
  Tape tape(false);
  const Tensor scaled = mul(tape, skip, Tensor::from_data({1, 2, 1, 1}, {4.0f, 4.0f}));
  const Tensor alpha = gate.coefficients(tape, scaled, dec);
  const Tensor out = gate.forward(tape, scaled, dec);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(out.at(0, c, i, j) == scaled.at(0, c, i, j) * alpha.at(0, 0, i, j));
}

TEST_CASE("gate rejects spatial or batch mismatches") {
  Random rng(5);
  AttentionGate<float> gate(2, 2, rng);
  Tape tape(false);
  CHECK_THROWS_AS(gate.forward(tape, Tensor::full({1, 2, 4, 4}, 1.0f), Tensor::full({1, 2, 2, 2}, 1.0f)),
                  ShapeError);
  CHECK_THROWS_AS(gate.forward(tape, Tensor::full({2, 2, 4, 4}, 1.0f), Tensor::full({1, 2, 4, 4}, 1.0f)),
                  ShapeError);
  CHECK_THROWS_AS(gate.forward(tape, Tensor::full({1, 3, 4, 4}, 1.0f), Tensor::full({1, 2, 4, 4}, 1.0f)),
                  ShapeError);
}

TEST_CASE("gate gradients match finite differences") {
  Random rng(6);
  Random init(7);
  AttentionGate<double> gate(4, 3, init);
  DTensor skip = random_tensor<double>({2, 4, 3, 3}, rng, -1, 1, true);
  DTensor dec = random_tensor<double>({2, 3, 3, 3}, rng, -1, 1, true);
  auto f = [&](DTape& t) { return gate.forward(t, skip, dec); };
  DTape tape;
  const DTensor y = f(tape);
  const DTensor p = probe_weights(y.shape(), 8);
  tape.backward(sum(tape, mul(tape, y, p)));
  auto objective = [&] {
    DTape t(false);
    return sum(t, mul(t, f(t), p)).item();
  };
  std::vector<DTensor> wrt = {skip, dec};
  NamedTensors<double> params;
  gate.collect_parameters("g", params);
  for (auto& [name, t] : params) wrt.push_back(t);
  for (auto& t : wrt) {
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    // A small step keeps the ReLU inside the gate on one side of its kink.
    CHECK(max_fd_error(t, g, all_indices(t.numel()), objective, 1e-5) < 1e-3);
  }
}
