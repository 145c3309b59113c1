#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <functional>

#include "core/autodiff.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace hand3r;
using namespace testutil;
using ad::Tape;
using Id = Tape::Id;

namespace {

Mat randmat(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * nrand(rng);
  return m;
}

// Central finite differences of a scalar graph against tape gradients.
void check_grads(const std::vector<Mat>& inputs,
                 const std::function<Id(Tape&, const std::vector<Id>&)>& build,
                 double tol = 1e-4) {
  Tape t;
  std::vector<Id> ids;
  for (const Mat& m : inputs) ids.push_back(t.input(m, true));
  const Id loss = build(t, ids);
  REQUIRE(t.val(loss).size() == 1);
  t.backward(loss);

  auto value_at = [&](const std::vector<Mat>& xs) {
    Tape vt(false);
    std::vector<Id> vids;
    for (const Mat& m : xs) vids.push_back(vt.input(m, false));
    return vt.val(build(vt, vids))(0, 0);
  };

  for (size_t k = 0; k < inputs.size(); ++k) {
    const Mat& g = t.grad(ids[k]);
    REQUIRE(g.rows() == inputs[k].rows());
    REQUIRE(g.cols() == inputs[k].cols());
    for (int i = 0; i < inputs[k].rows(); ++i)
      for (int j = 0; j < inputs[k].cols(); ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(inputs[k](i, j)));
        std::vector<Mat> xp = inputs, xm = inputs;
        xp[k](i, j) += h;
        xm[k](i, j) -= h;
        const double num = (value_at(xp) - value_at(xm)) / (2 * h);
        const double ana = g(i, j);
        CHECK(std::abs(ana - num) < tol * std::max(1.0, std::abs(ana) + std::abs(num)));
      }
  }
}

Id weighted_sum(Tape& t, Id x, const Mat& w) { return t.sum_all(t.mul_const(x, w)); }

}  // namespace

TEST_CASE("elementwise and linear ops pass finite differences") {
  std::mt19937_64 rng(41);
  const Mat a = randmat(rng, 3, 4), b = randmat(rng, 3, 4);
  const Mat w = randmat(rng, 3, 4);

  check_grads({a, b}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.add(in[0], in[1]), w);
  });
  check_grads({a, b}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.sub(in[0], in[1]), w);
  });
  check_grads({a, b}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.mul(in[0], in[1]), w);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.scale(in[0], -1.7), w);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.mul_const(in[0], b), w);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.add_const(in[0], 2.5), w);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.square(in[0]), w);
  });

  const Mat m1 = randmat(rng, 3, 5), m2 = randmat(rng, 5, 2), wm = randmat(rng, 3, 2);
  check_grads({m1, m2}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.matmul(in[0], in[1]), wm);
  });
  const Mat wt = randmat(rng, 4, 3);
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.transpose(in[0]), wt);
  });
  const Mat row = randmat(rng, 1, 4);
  check_grads({a, row}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.add_row_broadcast(in[0], in[1]), w);
  });
}

TEST_CASE("nonlinear activations pass finite differences") {
  std::mt19937_64 rng(42);
  const Mat a = randmat(rng, 3, 4);
  const Mat w = randmat(rng, 3, 4);
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.gelu(in[0]), w);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.softplus(in[0]), w);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.softmax_rows(in[0]), w);
  });

  Mat pos = a.array().abs() + 0.5;
  check_grads({pos}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.log(in[0]), w);
  });
  check_grads({pos}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.reciprocal(in[0]), w);
  });
  // Keep all entries away from the clamp kink by more than the FD step.
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.clamp_min(in[0], -20.0), w);
  });
}

TEST_CASE("clamp_min zeroes gradient below the bound") {
  Tape t;
  Mat x(1, 3);
  x << -1.0, 0.05, 2.0;
  const Id xi = t.input(x, true);
  const Id loss = t.sum_all(t.clamp_min(xi, 0.1));
  CHECK(t.val(loss)(0, 0) == doctest::Approx(0.1 + 0.1 + 2.0));
  t.backward(loss);
  CHECK(t.grad(xi)(0, 0) == 0.0);
  CHECK(t.grad(xi)(0, 1) == 0.0);
  CHECK(t.grad(xi)(0, 2) == 1.0);
}

TEST_CASE("layernorm passes finite differences") {
  std::mt19937_64 rng(43);
  const Mat x = randmat(rng, 4, 6);
  const Mat gain = randmat(rng, 1, 6).array() + 2.0;
  const Mat bias = randmat(rng, 1, 6);
  const Mat w = randmat(rng, 4, 6);
  check_grads({x, gain, bias}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.layernorm(in[0], in[1], in[2]), w);
  });
}

TEST_CASE("shape ops pass finite differences") {
  std::mt19937_64 rng(44);
  const Mat a = randmat(rng, 6, 4), b = randmat(rng, 2, 4);
  const Mat w2 = randmat(rng, 2, 4), w8 = randmat(rng, 8, 4);
  const Mat wc = randmat(rng, 6, 6), w3 = randmat(rng, 3, 4);
  const Mat w1 = randmat(rng, 1, 4), ws = randmat(rng, 1, 1);

  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.slice_rows(in[0], 2, 2), w2);
  });
  const Mat w62 = randmat(rng, 6, 2);
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.slice_cols(in[0], 1, 2), w62);
  });
  check_grads({a, b}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.concat_rows({in[0], in[1]}), w8);
  });
  const Mat w68 = randmat(rng, 6, 8);
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.concat_cols({in[0], in[0]}), w68);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.gather_rows(in[0], {5, 0, 0}), w3);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.mean_rows(in[0]), w1);
  });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) { return t.sum_all(in[0]); });
  check_grads({a}, [&](Tape& t, const std::vector<Id>& in) { return t.mean_all(in[0]); });
}

TEST_CASE("rotation ops pass finite differences") {
  std::mt19937_64 rng(45);
  Mat six = randmat(rng, 1, 6);
  six(0, 0) += 2.0;  // keep the Gram-Schmidt basis well-conditioned
  six(0, 4) += 2.0;
  const Mat w = randmat(rng, 3, 3);
  check_grads({six}, [&](Tape& t, const std::vector<Id>& in) {
    return weighted_sum(t, t.rot6d_to_matrix(in[0]), w);
  });

  const Mat3 target = random_rotation(rng);
  check_grads({six}, [&](Tape& t, const std::vector<Id>& in) {
    return t.geodesic_sq(t.rot6d_to_matrix(in[0]), target);
  }, 2e-4);
}

TEST_CASE("rot6d output is a proper rotation") {
  std::mt19937_64 rng(46);
  for (int i = 0; i < 100; ++i) {
    Tape t(false);
    const Mat R = t.val(t.rot6d_to_matrix(t.input(randmat(rng, 1, 6))));
    CHECK((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("custom nodes integrate with the tape") {
  std::mt19937_64 rng(47);
  const Mat x = randmat(rng, 2, 3);
  const Mat w = randmat(rng, 2, 3);
  check_grads({x}, [&](Tape& t, const std::vector<Id>& in) {
    const Id a = in[0];
    const Mat cube = t.val(a).array().cube();
    Id node = t.custom(cube, t.needs_grad(a), [a](Tape& tt, const Mat& g) {
      if (tt.needs_grad(a))
        tt.grad(a) += (3.0 * tt.val(a).array().square() * g.array()).matrix();
    });
    return weighted_sum(t, node, w);
  });
}

TEST_CASE("needs_grad propagation keeps constant branches grad-free") {
  Tape t;
  const Id c = t.input(Mat::Ones(2, 2), false);
  const Id x = t.input(Mat::Ones(2, 2) * 2.0, true);
  const Id cc = t.mul(c, c);
  CHECK_FALSE(t.needs_grad(cc));
  const Id mixed = t.add(cc, x);
  CHECK(t.needs_grad(mixed));
  t.backward(t.sum_all(mixed));
  CHECK(t.grad(x) == Mat::Ones(2, 2));
}

TEST_CASE("params, freezing, and Adam") {
  std::mt19937_64 rng(48);
  ad::ParamStore store;
  ad::Param& w1 = store.create("a.w", 2, 2, 0.5, rng);
  ad::Param& w2 = store.add("b.w", w1.value);
  ad::Param& frozen = store.add("c.w", w1.value);
  frozen.trainable = false;
  w2.lr_scale = 0.5;

  CHECK(store.find("a.w") == &w1);
  CHECK(store.find("missing") == nullptr);
  CHECK(store.group("a.").size() == 1);

  const Mat before = w1.value;
  {
    Tape t;
    const Id loss = t.sum_all(
        t.add(t.param(w1), t.add(t.param(w2), t.param(frozen))));
    // Frozen param nodes do not require gradients at all.
    CHECK_FALSE(t.needs_grad(t.param(frozen)));
    t.backward(loss);
    t.collect_param_grads();
  }
  CHECK(w1.grad == Mat::Ones(2, 2));
  CHECK(w2.grad == Mat::Ones(2, 2));
  CHECK(frozen.grad == Mat::Zero(2, 2));  // structurally untouched

  auto params = store.all();
  ad::Adam adam({.lr = 1e-2});
  adam.step(params);
  CHECK(frozen.value == before);  // bit-identical: frozen params never move
  // First Adam step moves by ~lr * lr_scale regardless of gradient magnitude.
  CHECK((before - w1.value).cwiseAbs().maxCoeff() == doctest::Approx(1e-2).epsilon(1e-4));
  CHECK((before - w2.value).cwiseAbs().maxCoeff() == doctest::Approx(5e-3).epsilon(1e-4));

  store.zero_grads();
  CHECK(w1.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("value-only tapes skip gradient bookkeeping") {
  Tape t(false);
  const Id x = t.input(Mat::Ones(2, 2), true);
  CHECK_FALSE(t.needs_grad(x));
  const Id y = t.square(x);
  CHECK(t.val(y) == Mat::Ones(2, 2));
}
