#include "mixdiff/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff::ad {

int ParamStore::add(std::string name, RowMatrix value) {
  for (const auto& n : names_) {
    if (n == name) throw InvalidInput("duplicate parameter " + name);
  }
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return static_cast<int>(values_.size() - 1);
}

int ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  throw InvalidInput("unknown parameter " + name);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

std::pair<std::size_t, std::size_t> ParamStore::locate(std::size_t k) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto sz = static_cast<std::size_t>(values_[i].size());
    if (k < sz) return {i, k};
    k -= sz;
  }
  throw InvalidInput("flat parameter index out of range");
}

double& ParamStore::flat(std::size_t k) {
  auto [i, j] = locate(k);
  return values_[i].data()[j];
}

double ParamStore::flat(std::size_t k) const {
  auto [i, j] = locate(k);
  return values_[i].data()[j];
}

std::vector<RowMatrix> ParamStore::zeros_like() const {
  std::vector<RowMatrix> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(RowMatrix::Zero(v.rows(), v.cols()));
  return out;
}

double flat_at(const Gradients& g, std::size_t k) {
  for (const auto& m : g) {
    const auto sz = static_cast<std::size_t>(m.size());
    if (k < sz) return m.data()[k];
    k -= sz;
  }
  throw InvalidInput("flat gradient index out of range");
}

Var Tape::push(RowMatrix value, bool requires_grad) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(RowMatrix value) { return push(std::move(value), false); }

Var Tape::parameter(const ParamStore& store, int index) {
  Node n;
  n.external = &store.value(static_cast<std::size_t>(index));
  n.param = index;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

const RowMatrix& Tape::value(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.external ? *n.external : n.own;
}

void Tape::set_backward(Var v, std::function<void()> fn) {
  nodes_[static_cast<std::size_t>(v.id)].backward = std::move(fn);
}

RowMatrix& Tape::grad(Var v) { return nodes_[static_cast<std::size_t>(v.id)].grad; }

bool Tape::has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad.size() != 0; }

void Tape::backward(const std::vector<std::pair<Var, RowMatrix>>& seeds, Gradients& grads) {
  if (!record_) throw InvalidState("tape was not recording");
  for (const auto& [v, g] : seeds) {
    const RowMatrix& val = value(v);
    if (g.rows() != val.rows() || g.cols() != val.cols()) throw InvalidInput("seed gradient shape mismatch");
    accumulate(v, g);
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward();
    if (n.param >= 0) {
      RowMatrix& dst = grads[static_cast<std::size_t>(n.param)];
      if (dst.size() == 0) {
        dst = n.grad;
      } else {
        dst += n.grad;
      }
    }
  }
}

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  if (!t.recording()) return false;
  for (Var v : vs) {
    if (v.valid() && t.requires_grad(v)) return true;
  }
  return false;
}

}  // namespace

Var linear(Tape& tape, Var x, Var w, Var b) {
  const RowMatrix& X = tape.value(x);
  const RowMatrix& W = tape.value(w);
  if (X.cols() != W.rows()) throw InvalidInput("linear: shape mismatch");
  RowMatrix y = X * W;
  if (b.valid()) y.rowwise() += tape.value(b).row(0);
  const bool rg = any_grad(tape, {x, w, b});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, w, b, out] {
      const RowMatrix& dy = tape.grad(out);
      if (tape.requires_grad(x)) tape.accumulate(x, dy * tape.value(w).transpose());
      if (tape.requires_grad(w)) tape.accumulate(w, tape.value(x).transpose() * dy);
      if (b.valid() && tape.requires_grad(b)) tape.accumulate(b, dy.colwise().sum());
    });
  }
  return out;
}

Var add(Tape& tape, Var a, Var b) {
  const RowMatrix& A = tape.value(a);
  const RowMatrix& B = tape.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw InvalidInput("add: shape mismatch");
  const bool rg = any_grad(tape, {a, b});
  Var out = tape.push(A + B, rg);
  if (rg) {
    tape.set_backward(out, [&tape, a, b, out] {
      tape.accumulate(a, tape.grad(out));
      tape.accumulate(b, tape.grad(out));
    });
  }
  return out;
}

Var gelu(Tape& tape, Var x) {
  const RowMatrix& X = tape.value(x);
  RowMatrix y(X.rows(), X.cols());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const double v = X.data()[i];
    y.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  const bool rg = any_grad(tape, {x});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, out] {
      const RowMatrix& X = tape.value(x);
      const RowMatrix& dy = tape.grad(out);
      RowMatrix dx(X.rows(), X.cols());
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (Eigen::Index i = 0; i < X.size(); ++i) {
        const double v = X.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        dx.data()[i] = dy.data()[i] * (cdf + v * pdf);
      }
      tape.accumulate(x, dx);
    });
  }
  return out;
}

Var layer_norm(Tape& tape, Var x, double eps) {
  const RowMatrix& X = tape.value(x);
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  RowMatrix y(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    y.row(r) = (X.row(r).array() - mu) * inv_std(r);
  }
  const bool rg = any_grad(tape, {x});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, out, inv_std] {
      const RowMatrix& Y = tape.value(out);
      const RowMatrix& dy = tape.grad(out);
      RowMatrix dx(Y.rows(), Y.cols());
      for (Eigen::Index r = 0; r < Y.rows(); ++r) {
        const double mdy = dy.row(r).mean();
        const double mdyy = dy.row(r).dot(Y.row(r)) / static_cast<double>(Y.cols());
        dx.row(r) = inv_std(r) * (dy.row(r).array() - mdy - Y.row(r).array() * mdyy);
      }
      tape.accumulate(x, dx);
    });
  }
  return out;
}

Var modulate(Tape& tape, Var x, Var scale, Var shift, int rows_per_group) {
  const RowMatrix& X = tape.value(x);
  const RowMatrix& Sc = tape.value(scale);
  const RowMatrix& Sh = tape.value(shift);
  const Eigen::Index groups = Sc.rows();
  if (X.rows() != groups * rows_per_group || Sc.cols() != X.cols() || Sh.rows() != groups ||
      Sh.cols() != X.cols()) {
    throw InvalidInput("modulate: shape mismatch");
  }
  RowMatrix y(X.rows(), X.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int r = 0; r < rows_per_group; ++r) {
      const Eigen::Index row = g * rows_per_group + r;
      y.row(row) = X.row(row).array() * (1.0 + Sc.row(g).array()) + Sh.row(g).array();
    }
  }
  const bool rg = any_grad(tape, {x, scale, shift});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, scale, shift, out, rows_per_group] {
      const RowMatrix& X = tape.value(x);
      const RowMatrix& Sc = tape.value(scale);
      const RowMatrix& dy = tape.grad(out);
      const Eigen::Index groups = Sc.rows();
      RowMatrix dx(X.rows(), X.cols());
      RowMatrix dsc = RowMatrix::Zero(groups, X.cols());
      RowMatrix dsh = RowMatrix::Zero(groups, X.cols());
      for (Eigen::Index g = 0; g < groups; ++g) {
        for (int r = 0; r < rows_per_group; ++r) {
          const Eigen::Index row = g * rows_per_group + r;
          dx.row(row) = dy.row(row).array() * (1.0 + Sc.row(g).array());
          dsc.row(g).array() += dy.row(row).array() * X.row(row).array();
          dsh.row(g) += dy.row(row);
        }
      }
      tape.accumulate(x, dx);
      tape.accumulate(scale, dsc);
      tape.accumulate(shift, dsh);
    });
  }
  return out;
}

Var attention(Tape& tape, Var q, Var k, Var v, int heads, int groups, double dropout_p, Rng* rng) {
  const RowMatrix& Q = tape.value(q);
  const RowMatrix& Kx = tape.value(k);
  const RowMatrix& V = tape.value(v);
  const Eigen::Index d = Q.cols();
  if (Kx.cols() != d || V.cols() != d || Kx.rows() != V.rows() || d % heads != 0 || Q.rows() % groups != 0 ||
      Kx.rows() % groups != 0) {
    throw InvalidInput("attention: shape mismatch");
  }
  const Eigen::Index nq = Q.rows() / groups;
  const Eigen::Index nk = Kx.rows() / groups;
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = rng != nullptr && dropout_p > 0.0;
  const double keep_scale = drop ? 1.0 / (1.0 - dropout_p) : 1.0;

  // probs[g * heads + h] is nq x nk; masks hold keep_scale or 0.
  std::vector<RowMatrix> probs(static_cast<std::size_t>(groups * heads));
  std::vector<RowMatrix> masks(drop ? probs.size() : 0);
  RowMatrix out(Q.rows(), d);
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = Q.block(g * nq, h * dh, nq, dh);
      const auto kb = Kx.block(g * nk, h * dh, nk, dh);
      const auto vb = V.block(g * nk, h * dh, nk, dh);
      RowMatrix s = (qb * kb.transpose()) * scale;
      for (Eigen::Index r = 0; r < nq; ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      const std::size_t idx = static_cast<std::size_t>(g * heads + h);
      if (drop) {
        RowMatrix mask(nq, nk);
        for (Eigen::Index i = 0; i < mask.size(); ++i) {
          mask.data()[i] = rng->uniform() < dropout_p ? 0.0 : keep_scale;
        }
        out.block(g * nq, h * dh, nq, dh) = (s.array() * mask.array()).matrix() * vb;
        masks[idx] = std::move(mask);
      } else {
        out.block(g * nq, h * dh, nq, dh) = s * vb;
      }
      probs[idx] = std::move(s);
    }
  }
  const bool rg = any_grad(tape, {q, k, v});
  Var res = tape.push(std::move(out), rg);
  if (rg) {
    tape.set_backward(res, [&tape, q, k, v, res, heads, groups, nq, nk, dh, scale, probs = std::move(probs),
                            masks = std::move(masks)] {
      const RowMatrix& Q = tape.value(q);
      const RowMatrix& Kx = tape.value(k);
      const RowMatrix& V = tape.value(v);
      const RowMatrix& dO = tape.grad(res);
      RowMatrix dQ = RowMatrix::Zero(Q.rows(), Q.cols());
      RowMatrix dK = RowMatrix::Zero(Kx.rows(), Kx.cols());
      RowMatrix dV = RowMatrix::Zero(V.rows(), V.cols());
      for (int g = 0; g < groups; ++g) {
        for (int h = 0; h < heads; ++h) {
          const std::size_t idx = static_cast<std::size_t>(g * heads + h);
          const RowMatrix& P = probs[idx];
          const auto dob = dO.block(g * nq, h * dh, nq, dh);
          const auto vb = V.block(g * nk, h * dh, nk, dh);
          RowMatrix dP = dob * vb.transpose();
          if (!masks.empty()) {
            dP.array() *= masks[idx].array();
            dV.block(g * nk, h * dh, nk, dh) += (P.array() * masks[idx].array()).matrix().transpose() * dob;
          } else {
            dV.block(g * nk, h * dh, nk, dh) += P.transpose() * dob;
          }
          RowMatrix dS(nq, nk);
          for (Eigen::Index r = 0; r < nq; ++r) {
            const double dot = dP.row(r).dot(P.row(r));
            dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
          }
          dS *= scale;
          dQ.block(g * nq, h * dh, nq, dh) += dS * Kx.block(g * nk, h * dh, nk, dh);
          dK.block(g * nk, h * dh, nk, dh) += dS.transpose() * Q.block(g * nq, h * dh, nq, dh);
        }
      }
      tape.accumulate(q, dQ);
      tape.accumulate(k, dK);
      tape.accumulate(v, dV);
    });
  }
  return res;
}

Var gather_rows(Tape& tape, Var table, std::vector<int> indices) {
  const RowMatrix& T = tape.value(table);
  RowMatrix y(static_cast<Eigen::Index>(indices.size()), T.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= T.rows()) throw InvalidInput("gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(r)) = T.row(indices[r]);
  }
  const bool rg = any_grad(tape, {table});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, table, out, indices = std::move(indices)] {
      const RowMatrix& dy = tape.grad(out);
      const RowMatrix& T = tape.value(table);
      RowMatrix dt = RowMatrix::Zero(T.rows(), T.cols());
      for (std::size_t r = 0; r < indices.size(); ++r) dt.row(indices[r]) += dy.row(static_cast<Eigen::Index>(r));
      tape.accumulate(table, dt);
    });
  }
  return out;
}

Var max_pool_groups(Tape& tape, Var x, int rows_per_group) {
  const RowMatrix& X = tape.value(x);
  if (rows_per_group <= 0 || X.rows() % rows_per_group != 0) throw InvalidInput("max_pool_groups: bad grouping");
  const Eigen::Index groups = X.rows() / rows_per_group;
  RowMatrix y(groups, X.cols());
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg(groups, X.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      Eigen::Index best = g * rows_per_group;
      for (Eigen::Index r = best + 1; r < (g + 1) * rows_per_group; ++r) {
        if (X(r, c) > X(best, c)) best = r;
      }
      y(g, c) = X(best, c);
      arg(g, c) = best;
    }
  }
  const bool rg = any_grad(tape, {x});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, out, arg = std::move(arg)] {
      const RowMatrix& dy = tape.grad(out);
      const RowMatrix& X = tape.value(x);
      RowMatrix dx = RowMatrix::Zero(X.rows(), X.cols());
      for (Eigen::Index g = 0; g < dy.rows(); ++g) {
        for (Eigen::Index c = 0; c < dy.cols(); ++c) dx(arg(g, c), c) += dy(g, c);
      }
      tape.accumulate(x, dx);
    });
  }
  return out;
}

Var repeat_rows(Tape& tape, Var x, int rows_per_group) {
  const RowMatrix& X = tape.value(x);
  RowMatrix y(X.rows() * rows_per_group, X.cols());
  for (Eigen::Index g = 0; g < X.rows(); ++g) {
    y.middleRows(g * rows_per_group, rows_per_group).rowwise() = X.row(g);
  }
  const bool rg = any_grad(tape, {x});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, out, rows_per_group] {
      const RowMatrix& dy = tape.grad(out);
      RowMatrix dx(dy.rows() / rows_per_group, dy.cols());
      for (Eigen::Index g = 0; g < dx.rows(); ++g) {
        dx.row(g) = dy.middleRows(g * rows_per_group, rows_per_group).colwise().sum();
      }
      tape.accumulate(x, dx);
    });
  }
  return out;
}

Var tile(Tape& tape, Var x, int times) {
  const RowMatrix& X = tape.value(x);
  RowMatrix y(X.rows() * times, X.cols());
  for (int i = 0; i < times; ++i) y.middleRows(i * X.rows(), X.rows()) = X;
  const bool rg = any_grad(tape, {x});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, out, times] {
      const RowMatrix& dy = tape.grad(out);
      const Eigen::Index n = dy.rows() / times;
      RowMatrix dx = RowMatrix::Zero(n, dy.cols());
      for (int i = 0; i < times; ++i) dx += dy.middleRows(i * n, n);
      tape.accumulate(x, dx);
    });
  }
  return out;
}

Var hconcat(Tape& tape, Var a, Var b) {
  const RowMatrix& A = tape.value(a);
  const RowMatrix& B = tape.value(b);
  if (A.rows() != B.rows()) throw InvalidInput("hconcat: row mismatch");
  RowMatrix y(A.rows(), A.cols() + B.cols());
  y << A, B;
  // push() may reallocate the node list, so read the widths first.
  const Eigen::Index ca = A.cols();
  const Eigen::Index cb = B.cols();
  const bool rg = any_grad(tape, {a, b});
  Var out = tape.push(std::move(y), rg);
  if (rg) {
    tape.set_backward(out, [&tape, a, b, out, ca, cb] {
      const RowMatrix& dy = tape.grad(out);
      tape.accumulate(a, dy.leftCols(ca));
      tape.accumulate(b, dy.rightCols(cb));
    });
  }
  return out;
}

Var dropout(Tape& tape, Var x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  const RowMatrix& X = tape.value(x);
  RowMatrix mask(X.rows(), X.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < p ? 0.0 : keep_scale;
  const bool rg = any_grad(tape, {x});
  Var out = tape.push((X.array() * mask.array()).matrix(), rg);
  if (rg) {
    tape.set_backward(out, [&tape, x, out, mask = std::move(mask)] {
      tape.accumulate(x, (tape.grad(out).array() * mask.array()).matrix());
    });
  }
  return out;
}

}  // namespace mixdiff::ad
