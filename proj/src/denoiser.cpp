#include "mixdiff/denoiser.hpp"

#include <cmath>
#include <string>

#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

namespace {

constexpr double kHeadInitScale = 0.1;
constexpr double kAdaInitScale = 0.1;

RowMatrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

std::size_t linear_count(int in, int out) {
  return static_cast<std::size_t>(in) * static_cast<std::size_t>(out) + static_cast<std::size_t>(out);
}

}  // namespace

DenoiserConfig DenoiserConfig::full_size() {
  DenoiserConfig c;
  c.n_blocks = 8;
  c.d_model = 512;
  c.n_heads = 8;
  c.d_ff = 2048;
  c.d_floor_feat = 64;
  c.d_index_embed = 64;
  c.dropout = 0.1;
  c.geo_hidden = {512, 1024};
  c.pointnet_hidden = {64, 64, 512};
  return c;
}

void DenoiserConfig::validate() const {
  if (n_blocks < 0 || d_model <= 0 || n_heads <= 0 || d_ff <= 0 || d_floor_feat <= 0 || d_index_embed <= 0) {
    throw InvalidInput("denoiser dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw InvalidInput("d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("dropout must lie in [0, 1)");
  if (geo_hidden.empty() || pointnet_hidden.empty()) throw InvalidInput("MLP widths must be non-empty");
  for (int w : geo_hidden) {
    if (w <= 0) throw InvalidInput("MLP widths must be positive");
  }
  for (int w : pointnet_hidden) {
    if (w <= 0) throw InvalidInput("MLP widths must be positive");
  }
}

void DenoiserBatch::append(const LatentScene& latent, const FloorPlan* floor) {
  if (n_slots == 0) n_slots = static_cast<int>(latent.z.size());
  if (static_cast<int>(latent.z.size()) != n_slots || latent.x.rows() != n_slots || latent.x.cols() != kGeomDim) {
    throw InvalidInput("latent scene does not match the batch slot count");
  }
  t.push_back(latent.t);
  z.insert(z.end(), latent.z.begin(), latent.z.end());
  const Eigen::Index old_rows = x.rows();
  x.conservativeResize(old_rows + n_slots, kGeomDim);
  x.bottomRows(n_slots) = latent.x;
  floors.push_back(floor);
}

RowMatrix floor_point_features(const FloorPlan& floor) {
  const auto& samples = floor.boundary_samples();
  if (samples.empty()) throw InvalidFloor("floor has no boundary samples");
  RowMatrix f(static_cast<Eigen::Index>(samples.size()), 4);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    f(r, 0) = samples[i].point.x();
    f(r, 1) = samples[i].point.y();
    f(r, 2) = samples[i].normal.x();
    f(r, 3) = samples[i].normal.y();
  }
  return f;
}

RowMatrix sinusoidal_time_embedding(int t, int dim) {
  RowMatrix e(1, dim);
  const int half = dim / 2;
  const double denom = half > 1 ? static_cast<double>(half - 1) : 1.0;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / denom);
    e(0, i) = std::sin(t * freq);
    e(0, half + i) = std::cos(t * freq);
  }
  if (dim % 2 == 1) e(0, dim - 1) = 0.0;
  return e;
}

Denoiser::Linear Denoiser::add_linear(const std::string& name, int in, int out, Rng& rng, double init_scale) {
  Linear l;
  const double bound = init_scale / std::sqrt(static_cast<double>(in));
  l.w = params_.add(name + ".w", uniform_matrix(in, out, bound, rng));
  l.b = params_.add(name + ".b", RowMatrix::Zero(1, out));
  return l;
}

Denoiser::Denoiser(DenoiserConfig cfg, int num_classes, int n_slots, std::uint64_t seed)
    : cfg_(std::move(cfg)), K_(num_classes), N_(n_slots) {
  cfg_.validate();
  if (K_ < 2) throw InvalidInput("need at least two label classes");
  if (N_ < 1) throw InvalidInput("need at least one object slot");
  Rng rng(seed);
  const int d = cfg_.d_model;

  sem_embed_ = params_.add("sem_embed", uniform_matrix(num_states(), d, 0.5, rng));
  int in = kGeomDim;
  for (std::size_t i = 0; i < cfg_.geo_hidden.size(); ++i) {
    geo_mlp_.push_back(add_linear("geo_mlp." + std::to_string(i), in, cfg_.geo_hidden[i], rng));
    in = cfg_.geo_hidden[i];
  }
  geo_mlp_.push_back(add_linear("geo_mlp." + std::to_string(cfg_.geo_hidden.size()), in, d, rng));

  in = 4;
  for (std::size_t i = 0; i < cfg_.pointnet_hidden.size(); ++i) {
    pointnet_.push_back(add_linear("pointnet." + std::to_string(i), in, cfg_.pointnet_hidden[i], rng));
    in = cfg_.pointnet_hidden[i];
  }
  floor_out_ = add_linear("floor_out", in, cfg_.d_floor_feat, rng);
  index_embed_ = params_.add("index_embed", uniform_matrix(N_, cfg_.d_index_embed, 0.5, rng));
  time_mlp_ = add_linear("time_mlp", d, d, rng);

  const int d_cond = cfg_.d_floor_feat + cfg_.d_index_embed;
  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    Block blk;
    blk.ada1_scale = add_linear(p + "ada1.scale", d, d, rng, kAdaInitScale);
    blk.ada1_shift = add_linear(p + "ada1.shift", d, d, rng, kAdaInitScale);
    blk.self_q = add_linear(p + "self.q", d, d, rng);
    blk.self_k = add_linear(p + "self.k", d, d, rng);
    blk.self_v = add_linear(p + "self.v", d, d, rng);
    blk.self_o = add_linear(p + "self.o", d, d, rng);
    blk.ada2_scale = add_linear(p + "ada2.scale", d, d, rng, kAdaInitScale);
    blk.ada2_shift = add_linear(p + "ada2.shift", d, d, rng, kAdaInitScale);
    blk.cross_q = add_linear(p + "cross.q", d, d, rng);
    blk.cross_k = add_linear(p + "cross.k", d_cond, d, rng);
    blk.cross_v = add_linear(p + "cross.v", d_cond, d, rng);
    blk.cross_o = add_linear(p + "cross.o", d, d, rng);
    blk.ln3_gain = params_.add(p + "ln3.gain", RowMatrix::Zero(1, d));
    blk.ln3_bias = params_.add(p + "ln3.bias", RowMatrix::Zero(1, d));
    blk.ff0 = add_linear(p + "ff.0", d, cfg_.d_ff, rng);
    blk.ff1 = add_linear(p + "ff.1", cfg_.d_ff, d, rng);
    blocks_.push_back(blk);
  }
  final_gain_ = params_.add("final_ln.gain", RowMatrix::Zero(1, d));
  final_bias_ = params_.add("final_ln.bias", RowMatrix::Zero(1, d));
  head_label_ = add_linear("head_label", d, K_, rng, kHeadInitScale);
  in = d;
  for (std::size_t i = 0; i < cfg_.geo_hidden.size(); ++i) {
    head_geo_.push_back(add_linear("head_geo." + std::to_string(i), in, cfg_.geo_hidden[i], rng));
    in = cfg_.geo_hidden[i];
  }
  head_geo_.push_back(
      add_linear("head_geo." + std::to_string(cfg_.geo_hidden.size()), in, kGeomDim, rng, kHeadInitScale));
}

std::size_t Denoiser::parameter_count(const DenoiserConfig& cfg, int num_classes, int n_slots) {
  const int d = cfg.d_model;
  const int S = num_classes + 1;
  std::size_t n = static_cast<std::size_t>(S) * d;
  int in = kGeomDim;
  for (int h : cfg.geo_hidden) {
    n += linear_count(in, h);
    in = h;
  }
  n += linear_count(in, d);
  in = 4;
  for (int h : cfg.pointnet_hidden) {
    n += linear_count(in, h);
    in = h;
  }
  n += linear_count(in, cfg.d_floor_feat);
  n += static_cast<std::size_t>(n_slots) * cfg.d_index_embed;
  n += linear_count(d, d);
  const int d_cond = cfg.d_floor_feat + cfg.d_index_embed;
  const std::size_t per_block = 10 * linear_count(d, d) + 2 * linear_count(d_cond, d) + 2 * static_cast<std::size_t>(d) +
                                linear_count(d, cfg.d_ff) + linear_count(cfg.d_ff, d);
  n += static_cast<std::size_t>(cfg.n_blocks) * per_block;
  n += 2 * static_cast<std::size_t>(d);
  n += linear_count(d, num_classes);
  in = d;
  for (int h : cfg.geo_hidden) {
    n += linear_count(in, h);
    in = h;
  }
  n += linear_count(in, kGeomDim);
  return n;
}

ad::Var Denoiser::apply(ad::Tape& tape, const Linear& l, ad::Var x) const {
  return ad::linear(tape, x, tape.parameter(params_, l.w), tape.parameter(params_, l.b));
}

ad::Var Denoiser::mlp(ad::Tape& tape, const std::vector<Linear>& layers, ad::Var x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = apply(tape, layers[i], x);
    if (i + 1 < layers.size()) x = ad::gelu(tape, x);
  }
  return x;
}

ad::Var Denoiser::object_graph(ad::Tape& tape, const std::vector<int>& z, const RowMatrix& x) const {
  for (int s : z) {
    if (s < 0 || s >= num_states()) throw InvalidInput("latent state index out of range");
  }
  if (!x.allFinite()) throw InvalidInput("latent geometry must be finite");
  ad::Var emb = ad::gather_rows(tape, tape.parameter(params_, sem_embed_), z);
  ad::Var geo = mlp(tape, geo_mlp_, tape.constant(x));
  return ad::add(tape, emb, geo);
}

ad::Var Denoiser::floor_graph(ad::Tape& tape, const std::vector<const FloorPlan*>& floors) const {
  if (floors.empty()) throw InvalidInput("no floors given");
  const Eigen::Index P = static_cast<Eigen::Index>(floors.front()->boundary_samples().size());
  if (P == 0) throw InvalidFloor("floor has no boundary samples");
  RowMatrix pts(P * static_cast<Eigen::Index>(floors.size()), 4);
  for (std::size_t b = 0; b < floors.size(); ++b) {
    if (static_cast<Eigen::Index>(floors[b]->boundary_samples().size()) != P) {
      throw InvalidFloor("floors in one batch need equal sample counts");
    }
    pts.middleRows(static_cast<Eigen::Index>(b) * P, P) = floor_point_features(*floors[b]);
  }
  ad::Var h = tape.constant(std::move(pts));
  for (const auto& l : pointnet_) h = ad::gelu(tape, apply(tape, l, h));
  h = ad::max_pool_groups(tape, h, static_cast<int>(P));
  return apply(tape, floor_out_, h);
}

Denoiser::Graph Denoiser::build(ad::Tape& tape, const DenoiserBatch& batch, Rng* dropout_rng,
                                const RowMatrix* floor_feats) const {
  const int B = batch.size();
  const int N = batch.n_slots;
  if (B == 0) throw InvalidInput("empty batch");
  if (N != N_ && N > N_) throw InvalidInput("batch has more slots than index embeddings");
  if (static_cast<int>(batch.z.size()) != B * N || batch.x.rows() != B * N || batch.x.cols() != kGeomDim) {
    throw InvalidInput("batch shapes are inconsistent");
  }
  const int d = cfg_.d_model;
  const double p_drop = dropout_rng ? cfg_.dropout : 0.0;

  ad::Var h = object_graph(tape, batch.z, batch.x);

  ad::Var floor_feat;
  if (floor_feats) {
    if (floor_feats->rows() != B || floor_feats->cols() != cfg_.d_floor_feat) {
      throw InvalidInput("floor feature cache has the wrong shape");
    }
    floor_feat = tape.constant(*floor_feats);
  } else {
    if (static_cast<int>(batch.floors.size()) != B) throw InvalidInput("one floor per scene required");
    floor_feat = floor_graph(tape, batch.floors);
  }
  ad::Var index_emb = tape.parameter(params_, index_embed_);
  if (N < N_) {
    // Leading rows only; rare path used by small test scenes.
    RowMatrix sub = tape.value(index_emb).topRows(N);
    index_emb = tape.constant(std::move(sub));
  }
  ad::Var cond = ad::hconcat(tape, ad::repeat_rows(tape, floor_feat, N), ad::tile(tape, index_emb, B));

  RowMatrix sin_emb(B, d);
  for (int b = 0; b < B; ++b) {
    if (batch.t[static_cast<std::size_t>(b)] < 1) throw StepOutOfRange("denoiser needs t >= 1");
    sin_emb.row(b) = sinusoidal_time_embedding(batch.t[static_cast<std::size_t>(b)], d);
  }
  ad::Var temb = ad::gelu(tape, apply(tape, time_mlp_, tape.constant(std::move(sin_emb))));

  for (const Block& blk : blocks_) {
    ad::Var a = ad::modulate(tape, ad::layer_norm(tape, h), apply(tape, blk.ada1_scale, temb),
                             apply(tape, blk.ada1_shift, temb), N);
    ad::Var sa = ad::attention(tape, apply(tape, blk.self_q, a), apply(tape, blk.self_k, a),
                               apply(tape, blk.self_v, a), cfg_.n_heads, B, p_drop, dropout_rng);
    h = ad::add(tape, h, apply(tape, blk.self_o, sa));

    ad::Var c = ad::modulate(tape, ad::layer_norm(tape, h), apply(tape, blk.ada2_scale, temb),
                             apply(tape, blk.ada2_shift, temb), N);
    ad::Var ca = ad::attention(tape, apply(tape, blk.cross_q, c), apply(tape, blk.cross_k, cond),
                               apply(tape, blk.cross_v, cond), cfg_.n_heads, B, p_drop, dropout_rng);
    h = ad::add(tape, h, apply(tape, blk.cross_o, ca));

    ad::Var f = ad::modulate(tape, ad::layer_norm(tape, h), tape.parameter(params_, blk.ln3_gain),
                             tape.parameter(params_, blk.ln3_bias), B * N);
    f = ad::dropout(tape, ad::gelu(tape, apply(tape, blk.ff0, f)), p_drop, dropout_rng);
    h = ad::add(tape, h, apply(tape, blk.ff1, f));
  }
  h = ad::modulate(tape, ad::layer_norm(tape, h), tape.parameter(params_, final_gain_),
                   tape.parameter(params_, final_bias_), B * N);
  Graph g;
  g.logits = apply(tape, head_label_, h);
  g.eps_hat = mlp(tape, head_geo_, h);
  return g;
}

DenoiserOutput Denoiser::forward_batch(const DenoiserBatch& batch, const RowMatrix* floor_feats) const {
  ad::Tape tape(false);
  const Graph g = build(tape, batch, nullptr, floor_feats);
  return {tape.value(g.logits), tape.value(g.eps_hat)};
}

DenoiserOutput Denoiser::forward(const LatentScene& latent, const FloorPlan& floor) const {
  DenoiserBatch batch;
  batch.append(latent, &floor);
  return forward_batch(batch);
}

RowMatrix Denoiser::encode_objects(const LatentScene& latent) const {
  ad::Tape tape(false);
  return tape.value(object_graph(tape, latent.z, latent.x));
}

RowMatrix Denoiser::encode_floors(const std::vector<const FloorPlan*>& floors) const {
  ad::Tape tape(false);
  return tape.value(floor_graph(tape, floors));
}

RowMatrix Denoiser::encode_floor(const FloorPlan& floor) const { return encode_floors({&floor}); }

RowMatrix Denoiser::build_condition(const RowMatrix& floor_feat, int n_slots) const {
  if (floor_feat.rows() != 1 || floor_feat.cols() != cfg_.d_floor_feat) {
    throw InvalidInput("floor feature must be 1 x d_floor_feat");
  }
  if (n_slots < 1 || n_slots > N_) throw InvalidInput("slot count outside the index embedding table");
  RowMatrix cond(n_slots, cfg_.d_floor_feat + cfg_.d_index_embed);
  cond.leftCols(cfg_.d_floor_feat).rowwise() = floor_feat.row(0);
  cond.rightCols(cfg_.d_index_embed) = params_.value(static_cast<std::size_t>(index_embed_)).topRows(n_slots);
  return cond;
}

void DenoiserPass::forward(const DenoiserBatch& batch, Rng* dropout_rng) {
  tape_.emplace(true);
  graph_ = net_->build(*tape_, batch, dropout_rng);
  pending_ = true;
}

const RowMatrix& DenoiserPass::logits() const {
  if (!tape_) throw InvalidState("no forward pass recorded");
  return tape_->value(graph_.logits);
}

const RowMatrix& DenoiserPass::eps_hat() const {
  if (!tape_) throw InvalidState("no forward pass recorded");
  return tape_->value(graph_.eps_hat);
}

void DenoiserPass::backward(const RowMatrix& dlogits, const RowMatrix& deps, ad::Gradients& grads) {
  if (!pending_) throw InvalidState("backward called without a pending forward pass");
  if (grads.size() != net_->params().count()) grads = net_->params().zeros_like();
  tape_->backward({{graph_.logits, dlogits}, {graph_.eps_hat, deps}}, grads);
  pending_ = false;
}

}  // namespace mixdiff
