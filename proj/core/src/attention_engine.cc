// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/attention_engine.h"

#include <cmath>
#include <random>
#include <string>

#include "dtr/error.h"

namespace dtr {
namespace {

constexpr double kNormEps = 1e-6;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_draw(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

Matrix random_matrix(std::mt19937_64& gen, std::int64_t in, std::int64_t out) {
  Matrix m(in, out);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : m.data()) w = (2.0 * unit_draw(gen) - 1.0) * scale;
  return m;
}

std::vector<double> random_bias(std::mt19937_64& gen, std::int64_t n) {
  std::vector<double> b(static_cast<std::size_t>(n));
  for (double& v : b) v = (2.0 * unit_draw(gen) - 1.0) * 0.1;
  return b;
}

std::uint64_t fingerprint(const ModelConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(c.num_layers));
  mix(static_cast<std::uint64_t>(c.num_heads));
  mix(static_cast<std::uint64_t>(c.model_dim));
  mix(static_cast<std::uint64_t>(c.ffn_mult));
  mix(c.seed);
  return h;
}

// out = x * w + b for a single row vector.
void project(std::span<const double> x, const Matrix& w,
             std::span<const double> b, std::span<double> out) {
  for (std::int64_t o = 0; o < w.cols(); ++o) out[o] = b[o];
  for (std::int64_t i = 0; i < w.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    auto wr = w.row(i);
    for (std::int64_t o = 0; o < w.cols(); ++o) out[o] += xi * wr[o];
  }
}

void rms_norm(std::span<const double> x, std::span<const double> gain,
              std::span<double> out) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = static_cast<std::int64_t>(values.size());
  if (static_cast<std::int64_t>(values.size()) != cols_) {
    fail(ErrorCode::kShapeMismatch, "row width differs from matrix");
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Model::Model(const ModelConfig& config) : config_(config) {
  if (config.num_layers < 1 || config.num_heads < 1 || config.model_dim < 1 ||
      config.ffn_mult < 1) {
    fail(ErrorCode::kInvalidDim, "model dimensions must be positive");
  }
  if (config.model_dim % config.num_heads != 0) {
    fail(ErrorCode::kInvalidDim,
         "model_dim " + std::to_string(config.model_dim) +
             " not divisible by num_heads " + std::to_string(config.num_heads));
  }
  const std::int64_t d = config.model_dim;
  const std::int64_t f = d * config.ffn_mult;
  std::mt19937_64 gen(config.seed);
  blocks_.reserve(static_cast<std::size_t>(config.num_layers));
  for (int l = 0; l < config.num_layers; ++l) {
    BlockWeights b;
    b.attn_norm.assign(static_cast<std::size_t>(d), 1.0);
    b.ffn_norm.assign(static_cast<std::size_t>(d), 1.0);
    b.wq = random_matrix(gen, d, d);
    b.bq = random_bias(gen, d);
    b.wk = random_matrix(gen, d, d);
    b.bk = random_bias(gen, d);
    b.wv = random_matrix(gen, d, d);
    b.bv = random_bias(gen, d);
    b.wo = random_matrix(gen, d, d);
    b.bo = random_bias(gen, d);
    b.w1 = random_matrix(gen, d, f);
    b.b1 = random_bias(gen, f);
    b.w2 = random_matrix(gen, f, d);
    b.b2 = random_bias(gen, d);
    blocks_.push_back(std::move(b));
  }
  id_ = fingerprint(config);
}

Model init_model(const ModelConfig& config) { return Model(config); }

LogitHook compose_hooks(std::vector<LogitHook> hooks) {
  std::erase_if(hooks, [](const LogitHook& h) { return !h; });
  if (hooks.empty()) return {};
  if (hooks.size() == 1) return hooks.front();
  return [hooks = std::move(hooks)](const HookContext& ctx, LayerLogits& z) {
    for (const auto& h : hooks) h(ctx, z);
  };
}

std::int64_t CachedState::length() const {
  return keys_.empty() ? 0 : keys_.front().rows();
}

// Runs `x` (rows at positions [first, first + x.rows())) through every block,
// appending keys/values to `state`.
class Engine {
 public:
  static ForwardResult run(const Model& model, CachedState& state, Matrix x,
                           const Stage& stage, const LogitHook& hook) {
    const ModelConfig& cfg = model.config();
    const std::int64_t d = cfg.model_dim;
    const std::int64_t heads = cfg.num_heads;
    const std::int64_t dh = model.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::int64_t n = x.rows();
    const std::int64_t first = state.length();
    const std::int64_t keys = first + n;
    const FrameLayout& layout = state.layout_;
    const QueryPlan plan = build_query_plan(layout, stage);

    std::vector<std::int64_t> positions(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < n; ++r) positions[r] = first + r;

    ForwardResult result;
    std::vector<double> normed(static_cast<std::size_t>(d));
    std::vector<double> tmp(static_cast<std::size_t>(d));
    Matrix queries(n, d);

    for (int l = 0; l < cfg.num_layers; ++l) {
      const BlockWeights& w = model.blocks()[static_cast<std::size_t>(l)];
      Matrix& kc = state.keys_[static_cast<std::size_t>(l)];
      Matrix& vc = state.values_[static_cast<std::size_t>(l)];
      for (std::int64_t r = 0; r < n; ++r) {
        rms_norm(x.row(r), w.attn_norm, normed);
        project(normed, w.wq, w.bq, queries.row(r));
        project(normed, w.wk, w.bk, tmp);
        kc.append_row(tmp);
        project(normed, w.wv, w.bv, tmp);
        vc.append_row(tmp);
      }

      LayerLogits raw(heads, positions, keys, kMaskedLogit);
      for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t r = 0; r < n; ++r) {
          auto q = queries.row(r).subspan(static_cast<std::size_t>(h * dh),
                                          static_cast<std::size_t>(dh));
          auto out = raw.row(h, r);
          for (std::int64_t j = 0; j <= positions[r]; ++j) {
            auto k = kc.row(j).subspan(static_cast<std::size_t>(h * dh),
                                       static_cast<std::size_t>(dh));
            double dot = 0.0;
            for (std::int64_t c = 0; c < dh; ++c) dot += q[c] * k[c];
            out[j] = dot * scale + state.key_bias(j);
          }
        }
      }

      LayerLogits modified = raw;
      if (hook) {
        HookContext ctx{l, cfg.num_layers, stage, &layout, &plan};
        hook(ctx, modified);
        if (modified.heads() != raw.heads() || modified.keys() != raw.keys() ||
            modified.query_positions() != raw.query_positions()) {
          fail(ErrorCode::kShapeMismatch, "hook changed the logit shape");
        }
      }
      LayerLogits weights = softmax_rows(modified);

      // attention output, output projection, residual
      for (std::int64_t r = 0; r < n; ++r) {
        std::vector<double> mixed(static_cast<std::size_t>(d), 0.0);
        for (std::int64_t h = 0; h < heads; ++h) {
          auto a = weights.row(h, r);
          for (std::int64_t j = 0; j < keys; ++j) {
            if (a[j] == 0.0) continue;
            auto v = vc.row(j);
            for (std::int64_t c = 0; c < dh; ++c) {
              mixed[h * dh + c] += a[j] * v[h * dh + c];
            }
          }
        }
        project(mixed, w.wo, w.bo, tmp);
        auto xr = x.row(r);
        for (std::int64_t c = 0; c < d; ++c) xr[c] += tmp[c];

        rms_norm(xr, w.ffn_norm, normed);
        std::vector<double> hidden(static_cast<std::size_t>(w.w1.cols()));
        project(normed, w.w1, w.b1, hidden);
        for (double& v : hidden) v = silu(v);
        project(hidden, w.w2, w.b2, tmp);
        for (std::int64_t c = 0; c < d; ++c) xr[c] += tmp[c];
      }

      result.original.add_layer(l, std::move(raw));
      result.modified.add_layer(l, std::move(modified));
      result.weights.add_layer(l, std::move(weights));
    }

    std::vector<double> ones(static_cast<std::size_t>(d), 1.0);
    result.hidden = Matrix(n, d);
    for (std::int64_t r = 0; r < n; ++r) {
      rms_norm(x.row(r), ones, result.hidden.row(r));
    }
    return result;
  }

  static ForwardResult prefill(const Model& model, const ForwardInput& input,
                               const FrameLayout& layout,
                               const LogitHook& hook) {
    if (layout.empty()) fail(ErrorCode::kEmptyLayout, "layout has no tokens");
    const ModelConfig& cfg = model.config();
    if (input.embeddings.rows() != layout.total_len() ||
        input.embeddings.cols() != cfg.model_dim) {
      fail(ErrorCode::kShapeMismatch,
           "embeddings must be total_len x model_dim");
    }
    if (!input.key_bias.empty() &&
        static_cast<std::int64_t>(input.key_bias.size()) != layout.total_len()) {
      fail(ErrorCode::kShapeMismatch, "key_bias must have total_len entries");
    }
    CachedState state;
    state.model_id_ = model.id();
    state.layout_ = layout;
    state.key_bias_ = input.key_bias;
    state.keys_.assign(static_cast<std::size_t>(cfg.num_layers),
                       Matrix(0, cfg.model_dim));
    state.values_ = state.keys_;
    ForwardResult result =
        run(model, state, input.embeddings, Stage::prefill(), hook);
    result.cache = std::move(state);
    return result;
  }

  static ForwardResult decode(const Model& model, CachedState& state,
                              std::span<const double> embedding,
                              const LogitHook& hook) {
    if (state.model_id_ != model.id() || state.keys_.size() !=
            static_cast<std::size_t>(model.config().num_layers)) {
      fail(ErrorCode::kStaleCache, "cache was produced by a different model");
    }
    if (static_cast<std::int64_t>(embedding.size()) !=
        model.config().model_dim) {
      fail(ErrorCode::kShapeMismatch, "embedding width differs from model_dim");
    }
    Matrix x(1, model.config().model_dim);
    std::copy(embedding.begin(), embedding.end(), x.row(0).begin());
    const Stage stage = Stage::decode(state.steps_done_);
    ForwardResult result = run(model, state, std::move(x), stage, hook);
    ++state.steps_done_;
    return result;
  }
};

double CachedState::key_bias(std::int64_t j) const {
  return j < static_cast<std::int64_t>(key_bias_.size())
             ? key_bias_[static_cast<std::size_t>(j)]
             : 0.0;
}

ForwardResult prefill(const Model& model, const ForwardInput& input,
                      const FrameLayout& layout, const LogitHook& hook) {
  return Engine::prefill(model, input, layout, hook);
}

ForwardResult decode_step(const Model& model, CachedState& state,
                          std::span<const double> embedding,
                          const LogitHook& hook) {
  return Engine::decode(model, state, embedding, hook);
}

Matrix generate_embeddings(std::int64_t positions, int model_dim,
                           std::uint64_t seed) {
  Matrix m(positions, model_dim);
  for (std::int64_t j = 0; j < positions; ++j) {
    std::mt19937_64 gen(
        splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(j))));
    for (double& v : m.row(j)) v = 2.0 * unit_draw(gen) - 1.0;
  }
  return m;
}

}  // namespace dtr
