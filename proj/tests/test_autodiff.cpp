#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "mixdiff/autodiff.hpp"
#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"

using namespace mixdiff;
using namespace mixdiff::ad;

namespace {

RowMatrix random_matrix(int r, int c, Rng& rng, double s = 1.0) {
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

using Builder = std::function<Var(Tape&, const ParamStore&)>;

double weighted_sum(const ParamStore& store, const Builder& f, const RowMatrix& w) {
  Tape tape(false);
  const Var out = f(tape, store);
  return (tape.value(out).array() * w.array()).sum();
}

// Tape gradient of sum(w * f) against central differences on every scalar.
void check_gradient(ParamStore store, const Builder& f, std::uint64_t seed, double tol = 1e-7) {
  Rng rng(seed);
  Tape tape;
  const Var out = f(tape, store);
  const RowMatrix w = random_matrix(static_cast<int>(tape.value(out).rows()), static_cast<int>(tape.value(out).cols()), rng);
  Gradients g = store.zeros_like();
  tape.backward({{out, w}}, g);
  const double h = 1e-6;
  for (std::size_t k = 0; k < store.scalar_count(); ++k) {
    const double orig = store.flat(k);
    store.flat(k) = orig + h;
    const double fp = weighted_sum(store, f, w);
    store.flat(k) = orig - h;
    const double fm = weighted_sum(store, f, w);
    store.flat(k) = orig;
    const double fd = (fp - fm) / (2 * h);
    INFO("flat ", k);
    CHECK(flat_at(g, k) == doctest::Approx(fd).epsilon(tol).scale(1.0));
  }
}

}  // namespace

TEST_CASE("param store flat view") {
  ParamStore s;
  s.add("a", RowMatrix::Constant(2, 3, 1.0));
  s.add("b", RowMatrix::Constant(1, 2, 2.0));
  CHECK(s.scalar_count() == 8);
  s.flat(7) = 5.0;
  CHECK(s.value("b")(0, 1) == 5.0);
  s.flat(4) = 3.0;
  CHECK(s.value(0)(1, 1) == 3.0);
  CHECK_THROWS_AS(s.flat(8), InvalidInput);
  CHECK_THROWS_AS(s.add("a", RowMatrix::Zero(1, 1)), InvalidInput);
  CHECK_THROWS_AS(s.index_of("c"), InvalidInput);
}

TEST_CASE("forward values against direct formulas") {
  Rng rng(1);
  Tape tape(false);
  const RowMatrix X = random_matrix(3, 4, rng), W = random_matrix(4, 2, rng), b = random_matrix(1, 2, rng);
  const RowMatrix y = tape.value(linear(tape, tape.constant(X), tape.constant(W), tape.constant(b)));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double s = b(0, j);
      for (int k = 0; k < 4; ++k) s += X(i, k) * W(k, j);
      CHECK(y(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
  const RowMatrix g = tape.value(gelu(tape, tape.constant(X)));
  CHECK(g(0, 0) == doctest::Approx(X(0, 0) * 0.5 * std::erfc(-X(0, 0) / std::sqrt(2.0))).epsilon(1e-14));

  const RowMatrix ln = tape.value(layer_norm(tape, tape.constant(X), 0.0));
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(ln.row(i).sum()) < 1e-12);
    CHECK(ln.row(i).squaredNorm() / 4 == doctest::Approx(1.0).epsilon(1e-12));
  }

  // single-head attention on one group by hand
  const RowMatrix Q = random_matrix(2, 2, rng), K = random_matrix(3, 2, rng), V = random_matrix(3, 2, rng);
  const RowMatrix a = tape.value(attention(tape, tape.constant(Q), tape.constant(K), tape.constant(V), 1, 1));
  for (int i = 0; i < 2; ++i) {
    double wsum = 0;
    Eigen::RowVector2d acc = Eigen::RowVector2d::Zero();
    for (int j = 0; j < 3; ++j) {
      const double e = std::exp(Q.row(i).dot(K.row(j)) / std::sqrt(2.0));
      wsum += e;
      acc += e * V.row(j);
    }
    CHECK((a.row(i) - acc / wsum).norm() < 1e-12);
  }

  const RowMatrix P = random_matrix(6, 3, rng);
  const RowMatrix mp = tape.value(max_pool_groups(tape, tape.constant(P), 3));
  CHECK(mp.rows() == 2);
  CHECK(mp(1, 2) == P.col(2).tail(3).maxCoeff());
  const RowMatrix rr = tape.value(repeat_rows(tape, tape.constant(mp), 2));
  CHECK(rr.row(1) == mp.row(0));
  CHECK(rr.row(2) == mp.row(1));
  const RowMatrix tl = tape.value(tile(tape, tape.constant(mp), 3));
  CHECK(tl.rows() == 6);
  CHECK(tl.row(4) == mp.row(0));
  const RowMatrix gr = tape.value(gather_rows(tape, tape.constant(P), {5, 0, 5}));
  CHECK(gr.row(0) == P.row(5));
  CHECK(gr.row(2) == P.row(5));
  CHECK_THROWS_AS(gather_rows(tape, tape.constant(P), {6}), InvalidInput);
  CHECK_THROWS_AS(add(tape, tape.constant(P), tape.constant(mp)), InvalidInput);
}

TEST_CASE("backward requires a recording tape") {
  Tape tape(false);
  const Var v = tape.constant(RowMatrix::Zero(1, 1));
  Gradients g;
  CHECK_THROWS_AS(tape.backward({{v, RowMatrix::Ones(1, 1)}}, g), InvalidState);
}

TEST_CASE("op gradients against finite differences") {
  Rng rng(2);
  SUBCASE("linear, gelu, add") {
    ParamStore s;
    s.add("x", random_matrix(3, 4, rng));
    s.add("w", random_matrix(4, 5, rng));
    s.add("b", random_matrix(1, 5, rng));
    check_gradient(s, [](Tape& t, const ParamStore& p) {
      const Var y = linear(t, t.parameter(p, 0), t.parameter(p, 1), t.parameter(p, 2));
      return add(t, gelu(t, y), y);
    }, 10);
  }
  SUBCASE("layer norm and modulate") {
    ParamStore s;
    s.add("x", random_matrix(4, 6, rng));
    s.add("scale", random_matrix(2, 6, rng, 0.3));
    s.add("shift", random_matrix(2, 6, rng));
    check_gradient(s, [](Tape& t, const ParamStore& p) {
      return modulate(t, layer_norm(t, t.parameter(p, 0)), t.parameter(p, 1), t.parameter(p, 2), 2);
    }, 11);
  }
  SUBCASE("multi-head grouped attention") {
    ParamStore s;
    s.add("q", random_matrix(6, 4, rng));
    s.add("k", random_matrix(4, 4, rng));
    s.add("v", random_matrix(4, 4, rng));
    check_gradient(s, [](Tape& t, const ParamStore& p) {
      return attention(t, t.parameter(p, 0), t.parameter(p, 1), t.parameter(p, 2), 2, 2);
    }, 12);
  }
  SUBCASE("attention with dropout under a fixed stream") {
    ParamStore s;
    s.add("q", random_matrix(3, 4, rng));
    s.add("k", random_matrix(5, 4, rng));
    s.add("v", random_matrix(5, 4, rng));
    check_gradient(s, [](Tape& t, const ParamStore& p) {
      auto r = std::make_shared<Rng>(99);
      return attention(t, t.parameter(p, 0), t.parameter(p, 1), t.parameter(p, 2), 2, 1, 0.3, r.get());
    }, 13);
  }
  SUBCASE("gather, pool, repeat, tile, concat, dropout") {
    ParamStore s;
    s.add("table", random_matrix(4, 3, rng));
    s.add("pts", random_matrix(6, 3, rng));
    check_gradient(s, [](Tape& t, const ParamStore& p) {
      const Var g = gather_rows(t, t.parameter(p, 0), {1, 3, 1, 0});
      const Var pooled = max_pool_groups(t, t.parameter(p, 1), 3);
      const Var cond = hconcat(t, repeat_rows(t, pooled, 2), tile(t, gather_rows(t, t.parameter(p, 0), {2, 2}), 2));
      Rng r(7);
      return hconcat(t, dropout(t, g, 0.4, &r), cond);
    }, 14);
  }
}

TEST_CASE("dropout is the identity without a stream") {
  Tape tape(false);
  Rng rng(3);
  const Var x = tape.constant(random_matrix(5, 5, rng));
  CHECK(dropout(tape, x, 0.5, nullptr).id == x.id);
  Rng r(4);
  const RowMatrix y = tape.value(dropout(tape, x, 0.5, &r));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double ratio = y.data()[i] / tape.value(x).data()[i];
    CHECK((ratio == 0.0 || std::abs(ratio - 2.0) < 1e-15));
  }
}
