#include "mixdiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

Adam::Adam(AdamConfig cfg, const ad::ParamStore& params)
    : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {
  if (!(cfg_.lr >= 0.0)) throw InvalidInput("learning rate must be non-negative");
}

double Adam::current_lr() const {
  if (cfg_.decay_interval <= 0) return cfg_.lr;
  return cfg_.lr * std::pow(cfg_.decay_factor, static_cast<double>(t_ / cfg_.decay_interval));
}

void Adam::step(ad::ParamStore& params, const ad::Gradients& grads) {
  if (grads.size() != params.count() || m_.size() != params.count()) {
    throw InvalidInput("optimizer state does not match the parameters");
  }
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const RowMatrix& g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (lr == 0.0) continue;
    params.value(i).array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

namespace {

struct Prepared {
  std::vector<Corruption> corruptions;
  std::vector<std::uint64_t> dropout_seeds;
};

Prepared prepare(std::span<const EncodedScene* const> batch, Rng& rng, const MixedSchedule& sched, int chunks) {
  Prepared p;
  p.corruptions.reserve(batch.size());
  for (const EncodedScene* s : batch) {
    const int t = rng.uniform_int(1, sched.steps());
    Rng scene_rng(rng.next_u64());
    p.corruptions.push_back(corrupt_scene(*s, t, scene_rng, sched));
  }
  for (int c = 0; c < chunks; ++c) p.dropout_seeds.push_back(rng.next_u64());
  return p;
}

struct ChunkResult {
  MixedLossReport report;
  ad::Gradients grads;
};

ChunkResult run_chunk(std::span<const EncodedScene* const> scenes, std::span<const Corruption> corr,
                      const Denoiser& net, const MixedSchedule& sched, double lambda, Rng* dropout_rng,
                      double weight) {
  DenoiserBatch batch;
  std::vector<LossItem> items;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    batch.append(corr[i].latent, scenes[i]->floor);
    items.push_back({scenes[i], &corr[i]});
  }
  DenoiserPass pass(net);
  pass.forward(batch, dropout_rng);
  MixedLoss loss = mixed_loss(items, pass.logits(), pass.eps_hat(), lambda, sched);
  ChunkResult r;
  r.report = loss.report;
  if (!std::isfinite(r.report.total)) return r;
  r.grads = net.params().zeros_like();
  pass.backward(loss.dlogits * weight, loss.deps * weight, r.grads);
  return r;
}

MixedLossReport evaluate(std::span<const EncodedScene* const> batch, const Denoiser& net, Rng& rng,
                         const MixedSchedule& sched, double lambda, ad::Gradients& grads, bool dropout,
                         int threads) {
  if (batch.empty()) throw InvalidInput("empty training batch");
  const int n = static_cast<int>(batch.size());
  const int chunks = std::clamp(threads, 1, n);
  Prepared prep = prepare(batch, rng, sched, chunks);

  std::vector<ChunkResult> results(static_cast<std::size_t>(chunks));
  std::vector<std::pair<int, int>> ranges;
  for (int c = 0; c < chunks; ++c) ranges.emplace_back(c * n / chunks, (c + 1) * n / chunks);
  auto work = [&](int c) {
    const auto [lo, hi] = ranges[static_cast<std::size_t>(c)];
    Rng drop(prep.dropout_seeds[static_cast<std::size_t>(c)]);
    const double weight = static_cast<double>(hi - lo) / n;
    results[static_cast<std::size_t>(c)] =
        run_chunk(batch.subspan(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo)),
                  std::span<const Corruption>(prep.corruptions).subspan(static_cast<std::size_t>(lo),
                                                                        static_cast<std::size_t>(hi - lo)),
                  net, sched, lambda, dropout ? &drop : nullptr, weight);
  };
  if (chunks == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int c = 0; c < chunks; ++c) pool.emplace_back(work, c);
  }

  MixedLossReport rep;
  rep.lambda = lambda;
  grads = net.params().zeros_like();
  for (int c = 0; c < chunks; ++c) {
    const auto& r = results[static_cast<std::size_t>(c)];
    const auto [lo, hi] = ranges[static_cast<std::size_t>(c)];
    const double w = static_cast<double>(hi - lo) / n;
    rep.l_ddpm += w * r.report.l_ddpm;
    rep.l_d3pm_vb += w * r.report.l_d3pm_vb;
    rep.l_d3pm_aux += w * r.report.l_d3pm_aux;
    if (r.grads.empty()) continue;
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += r.grads[i];
  }
  rep.total = rep.l_ddpm + rep.l_d3pm_vb + lambda * rep.l_d3pm_aux;
  return rep;
}

}  // namespace

MixedLossReport loss_and_gradient(std::span<const EncodedScene* const> batch, const Denoiser& net, Rng& rng,
                                  const MixedSchedule& sched, double lambda, ad::Gradients& grads, bool dropout) {
  return evaluate(batch, net, rng, sched, lambda, grads, dropout, 1);
}

MixedLossReport train_step(std::span<const EncodedScene* const> batch, Denoiser& net, Adam& opt, Rng& rng,
                           const MixedSchedule& sched, double lambda, int threads) {
  ad::Gradients grads;
  const MixedLossReport rep = evaluate(batch, net, rng, sched, lambda, grads, true, threads);
  if (!std::isfinite(rep.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at optimizer step " << opt.steps() << " (l_ddpm=" << rep.l_ddpm
        << ", l_d3pm_vb=" << rep.l_d3pm_vb << ", l_d3pm_aux=" << rep.l_d3pm_aux << ")";
    throw TrainingDiverged(msg.str());
  }
  opt.step(net.params(), grads);
  return rep;
}

Trainer::Trainer(Denoiser& net, Adam& opt, const MixedSchedule& sched, TrainOptions opts,
                 std::vector<EncodedScene> data)
    : net_(&net), opt_(&opt), sched_(&sched), opts_(opts), data_(std::move(data)) {
  if (data_.empty()) throw InvalidInput("training set is empty");
  if (opts_.batch_size < 1) throw InvalidInput("batch_size must be >= 1");
}

long Trainer::steps_per_epoch() const {
  const long n = static_cast<long>(data_.size());
  const long b = std::min<long>(opts_.batch_size, n);
  return (n + b - 1) / b;
}

std::vector<std::size_t> Trainer::epoch_order(long epoch) const {
  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::stream(opts_.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

MixedLossReport Trainer::step() {
  const long s = opt_->steps();
  const long spe = steps_per_epoch();
  const long epoch = s / spe;
  if (epoch != cached_epoch_) {
    order_ = epoch_order(epoch);
    cached_epoch_ = epoch;
  }
  const long b = std::min<long>(opts_.batch_size, static_cast<long>(data_.size()));
  const auto lo = static_cast<std::size_t>((s % spe) * b);
  const auto hi = std::min(lo + static_cast<std::size_t>(b), order_.size());
  std::vector<const EncodedScene*> batch;
  for (std::size_t i = lo; i < hi; ++i) batch.push_back(&data_[order_[i]]);
  Rng rng = Rng::stream(opts_.seed, static_cast<std::uint64_t>(s));
  return train_step(batch, *net_, *opt_, rng, *sched_, opts_.lambda, opts_.threads);
}

void Trainer::run(const std::function<void(long, const MixedLossReport&)>& on_step) {
  while (opt_->steps() < opts_.max_steps) {
    const long s = opt_->steps();
    const MixedLossReport rep = step();
    if (on_step) on_step(s, rep);
  }
}

}  // namespace mixdiff
