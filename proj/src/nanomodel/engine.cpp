#include "engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "salient/kernels.hpp"

namespace salient::detail {

namespace {

constexpr double kLayerNormEps = 1e-5;

inline std::size_t tri(int i) { return static_cast<std::size_t>(i) * (i + 1) / 2; }

template <typename Real>
struct LayerActs {
  std::vector<Real> x_in, xhat1, a, q, k, v, o, x_mid, xhat2, b, u, g;
  std::vector<Real> rstd1, rstd2;
  std::vector<Real> attn;      // [head][packed lower triangle], after hook
  std::vector<Real> attn_pre;  // [head][packed lower triangle], softmax output
  std::vector<unsigned char> touched;  // [head][row]
};

template <typename Real>
struct State final : ActivationCache {
  std::vector<TokenId> tokens;
  std::vector<int> hook_seq_len;  // per row
  std::vector<LayerActs<Real>> layers;
  std::vector<Real> x_final, xhatf, rstdf, y, logits;
};

struct LayerOffsets {
  std::size_t ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, w1, b1, w2, b2;
};

template <typename Real>
Real gelu(Real u) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
  const Real inner = c * (u + static_cast<Real>(0.044715) * u * u * u);
  return static_cast<Real>(0.5) * u * (1 + std::tanh(inner));
}

template <typename Real>
Real gelu_grad(Real u) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);
  const Real inner = c * (u + static_cast<Real>(0.044715) * u * u * u);
  const Real t = std::tanh(inner);
  return static_cast<Real>(0.5) * (1 + t) +
         static_cast<Real>(0.5) * u * (1 - t * t) * c * (1 + 3 * static_cast<Real>(0.044715) * u * u);
}

template <typename Real>
class EngineImpl final : public Engine {
 public:
  explicit EngineImpl(const Checkpoint& ckpt) : cfg_(ckpt.config) {
    params_.assign(ckpt.params.begin(), ckpt.params.end());
    for (const auto& spec : parameter_layout(cfg_)) offsets_.push_back(spec.offset);
    std::size_t idx = 2;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      LayerOffsets lo{};
      std::size_t* fields[] = {&lo.ln1g, &lo.ln1b, &lo.wq, &lo.wk, &lo.wv, &lo.wo,
                               &lo.ln2g, &lo.ln2b, &lo.w1, &lo.b1, &lo.w2, &lo.b2};
      for (auto* f : fields) *f = offsets_[idx++];
      layers_.push_back(lo);
    }
    tok_ = offsets_[0];
    pos_ = offsets_[1];
    lnfg_ = offsets_[idx++];
    lnfb_ = offsets_[idx++];
    head_ = offsets_[idx++];
  }

  std::unique_ptr<ActivationCache> new_cache(int capacity) const override {
    auto s = std::make_unique<State<Real>>();
    const std::size_t C = static_cast<std::size_t>(capacity);
    const std::size_t d = cfg_.d_model;
    const std::size_t F = cfg_.ffn_dim();
    const std::size_t H = cfg_.n_heads;
    s->capacity = capacity;
    s->tokens.reserve(C);
    s->hook_seq_len.reserve(C);
    s->layers.resize(cfg_.n_layers);
    for (auto& L : s->layers) {
      for (auto* vec : {&L.x_in, &L.xhat1, &L.a, &L.q, &L.k, &L.v, &L.o, &L.x_mid, &L.xhat2, &L.b})
        vec->assign(C * d, Real(0));
      L.u.assign(C * F, Real(0));
      L.g.assign(C * F, Real(0));
      L.rstd1.assign(C, Real(0));
      L.rstd2.assign(C, Real(0));
      L.attn.assign(H * tri(capacity), Real(0));
      L.attn_pre.assign(H * tri(capacity), Real(0));
      L.touched.assign(H * C, 0);
    }
    s->x_final.assign(C * d, Real(0));
    s->xhatf.assign(C * d, Real(0));
    s->rstdf.assign(C, Real(0));
    s->y.assign(C * d, Real(0));
    s->logits.assign(C * cfg_.vocab_size, Real(0));
    return s;
  }

  void advance(ActivationCache& cache, TokenId token, int hook_seq_len, const AttentionHook* hook,
               std::span<double> logits_out) const override {
    auto& s = static_cast<State<Real>&>(cache);
    const auto& K = kernels::active<Real>();
    const int i = s.length;
    const int d = cfg_.d_model;
    const int F = cfg_.ffn_dim();
    const int H = cfg_.n_heads;
    const int dh = cfg_.head_dim();
    const int V = cfg_.vocab_size;
    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Real* P = params_.data();

    s.tokens.push_back(token);
    s.hook_seq_len.push_back(hook_seq_len);

    Real* x0 = s.layers.empty() ? &s.x_final[i * d] : &s.layers[0].x_in[i * d];
    for (int c = 0; c < d; ++c) x0[c] = P[tok_ + static_cast<std::size_t>(token) * d + c] + P[pos_ + static_cast<std::size_t>(i) * d + c];

    std::vector<double> row_buf;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      auto& L = s.layers[l];
      const auto& W = layers_[l];
      const Real* xin = &L.x_in[i * d];
      L.rstd1[i] = layer_norm(xin, P + W.ln1g, P + W.ln1b, &L.xhat1[i * d], &L.a[i * d]);
      const Real* a = &L.a[i * d];
      Real* q = &L.q[i * d];
      Real* k = &L.k[i * d];
      Real* v = &L.v[i * d];
      K.gemv(P + W.wq, a, q, d, d);
      K.gemv(P + W.wk, a, k, d, d);
      K.gemv(P + W.wv, a, v, d, d);
      Real* out = &L.o[i * d];
      std::fill(out, out + d, Real(0));
      for (int h = 0; h < H; ++h) {
        Real* pre = &L.attn_pre[h * tri(s.capacity) + tri(i)];
        Real* post = &L.attn[h * tri(s.capacity) + tri(i)];
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int j = 0; j <= i; ++j) {
          pre[j] = K.dot(q + h * dh, &L.k[j * d + h * dh], dh) * scale;
          mx = std::max(mx, pre[j]);
        }
        Real sum = 0;
        for (int j = 0; j <= i; ++j) {
          pre[j] = std::exp(pre[j] - mx);
          sum += pre[j];
        }
        const Real inv = Real(1) / sum;
        for (int j = 0; j <= i; ++j) pre[j] *= inv;
        std::copy(pre, pre + i + 1, post);
        const RowSite site{l, h, i, hook_seq_len};
        if (hook != nullptr && hook->touches(site)) {
          row_buf.assign(pre, pre + i + 1);
          hook->apply(site, row_buf);
          for (int j = 0; j <= i; ++j) post[j] = static_cast<Real>(row_buf[j]);
          L.touched[h * s.capacity + i] = 1;
        } else {
          L.touched[h * s.capacity + i] = 0;
        }
        for (int j = 0; j <= i; ++j) K.axpy(post[j], &L.v[j * d + h * dh], out + h * dh, dh);
      }
      Real* xmid = &L.x_mid[i * d];
      K.gemv(P + W.wo, out, xmid, d, d);
      for (int c = 0; c < d; ++c) xmid[c] += xin[c];
      L.rstd2[i] = layer_norm(xmid, P + W.ln2g, P + W.ln2b, &L.xhat2[i * d], &L.b[i * d]);
      const Real* b = &L.b[i * d];
      Real* u = &L.u[static_cast<std::size_t>(i) * F];
      Real* g = &L.g[static_cast<std::size_t>(i) * F];
      K.gemv(P + W.w1, b, u, F, d);
      for (int f = 0; f < F; ++f) {
        u[f] += P[W.b1 + f];
        g[f] = gelu(u[f]);
      }
      Real* xout = (l + 1 < cfg_.n_layers) ? &s.layers[l + 1].x_in[i * d] : &s.x_final[i * d];
      K.gemv(P + W.w2, g, xout, d, F);
      for (int c = 0; c < d; ++c) xout[c] = xmid[c] + (xout[c] + P[W.b2 + c]);
    }
    s.rstdf[i] = layer_norm(&s.x_final[i * d], P + lnfg_, P + lnfb_, &s.xhatf[i * d], &s.y[i * d]);
    Real* lg = &s.logits[static_cast<std::size_t>(i) * V];
    K.gemv(P + head_, &s.y[i * d], lg, V, d);
    for (int t = 0; t < V; ++t) logits_out[t] = static_cast<double>(lg[t]);
    s.length = i + 1;
  }

  void export_tape(const ActivationCache& cache, AttentionTape& tape) const override {
    const auto& s = static_cast<const State<Real>&>(cache);
    const int n = s.length;
    tape.n_layers = cfg_.n_layers;
    tape.n_heads = cfg_.n_heads;
    tape.seq_len = n;
    tape.attention.assign(static_cast<std::size_t>(cfg_.n_layers) * cfg_.n_heads, Matrix(n, n));
    tape.gradient.clear();
    for (int l = 0; l < cfg_.n_layers; ++l)
      for (int h = 0; h < cfg_.n_heads; ++h) {
        Matrix& m = tape.attention[l * cfg_.n_heads + h];
        const Real* base = &s.layers[l].attn[h * tri(s.capacity)];
        for (int i = 0; i < n; ++i)
          for (int j = 0; j <= i; ++j) m(i, j) = static_cast<double>(base[tri(i) + j]);
      }
  }

  double backward(const ActivationCache& cache, std::span<const LossTerm> terms, const AttentionHook* hook,
                  std::vector<double>* param_grads, AttentionTape* attn_grads) const override {
    const auto& s = static_cast<const State<Real>&>(cache);
    const auto& K = kernels::active<Real>();
    const int n = s.length;
    const int d = cfg_.d_model;
    const int F = cfg_.ffn_dim();
    const int H = cfg_.n_heads;
    const int dh = cfg_.head_dim();
    const int V = cfg_.vocab_size;
    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Real* P = params_.data();
    const bool want_params = param_grads != nullptr;

    int last = -1;
    for (const auto& t : terms) last = std::max(last, t.position);
    const int m = last + 1;  // rows that can carry gradient

    std::vector<Real> G;  // parameter gradient accumulator
    if (want_params) G.assign(params_.size(), Real(0));

    if (attn_grads != nullptr) {
      attn_grads->gradient.assign(static_cast<std::size_t>(cfg_.n_layers) * H, Matrix(n, n));
    }

    double loss = 0.0;
    std::vector<Real> dy(static_cast<std::size_t>(n) * d, Real(0));
    std::vector<double> lg(V);
    for (const auto& t : terms) {
      const Real* row = &s.logits[static_cast<std::size_t>(t.position) * V];
      for (int c = 0; c < V; ++c) lg[c] = static_cast<double>(row[c]);
      loss += t.weight * loss_ce(lg, t.target);
      const auto p = softmax(lg);
      for (int c = 0; c < V; ++c) {
        const Real dl = static_cast<Real>(t.weight * (p[c] - (c == t.target ? 1.0 : 0.0)));
        if (dl == Real(0)) continue;
        K.axpy(dl, P + head_ + static_cast<std::size_t>(c) * d, &dy[t.position * d], d);
        if (want_params) K.axpy(dl, &s.y[t.position * d], &G[head_ + static_cast<std::size_t>(c) * d], d);
      }
    }

    std::vector<Real> dx(static_cast<std::size_t>(n) * d, Real(0));
    for (int i = 0; i < m; ++i)
      layer_norm_backward(&dy[i * d], P + lnfg_, &s.xhatf[i * d], s.rstdf[i], &dx[i * d],
                          want_params ? &G[lnfg_] : nullptr, want_params ? &G[lnfb_] : nullptr);

    std::vector<Real> dxmid, db(d), dg(F), du(F), dout, dq, dk, dv, da(d);
    std::vector<double> grad_row, pre_row;
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const auto& L = s.layers[l];
      const auto& W = layers_[l];

      // MLP block: x_out = x_mid + W2 gelu(W1 b + b1) + b2
      dxmid = dx;
      for (int i = 0; i < m; ++i) {
        const Real* df = &dx[i * d];
        const Real* g = &L.g[static_cast<std::size_t>(i) * F];
        const Real* u = &L.u[static_cast<std::size_t>(i) * F];
        std::fill(dg.begin(), dg.end(), Real(0));
        for (int c = 0; c < d; ++c) {
          if (df[c] == Real(0)) continue;
          K.axpy(df[c], P + W.w2 + static_cast<std::size_t>(c) * F, dg.data(), F);
          if (want_params) {
            G[W.b2 + c] += df[c];
            K.axpy(df[c], g, &G[W.w2 + static_cast<std::size_t>(c) * F], F);
          }
        }
        std::fill(db.begin(), db.end(), Real(0));
        for (int f = 0; f < F; ++f) {
          du[f] = dg[f] * gelu_grad(u[f]);
          if (du[f] == Real(0)) continue;
          K.axpy(du[f], P + W.w1 + static_cast<std::size_t>(f) * d, db.data(), d);
          if (want_params) {
            G[W.b1 + f] += du[f];
            K.axpy(du[f], &L.b[i * d], &G[W.w1 + static_cast<std::size_t>(f) * d], d);
          }
        }
        layer_norm_backward(db.data(), P + W.ln2g, &L.xhat2[i * d], L.rstd2[i], &dxmid[i * d],
                            want_params ? &G[W.ln2g] : nullptr, want_params ? &G[W.ln2b] : nullptr);
      }

      // Attention block: x_mid = x_in + Wo concat_h(sum_j A_ij v_j)
      dout.assign(static_cast<std::size_t>(n) * d, Real(0));
      for (int i = 0; i < m; ++i) {
        const Real* dz = &dxmid[i * d];
        for (int c = 0; c < d; ++c) {
          if (dz[c] == Real(0)) continue;
          K.axpy(dz[c], P + W.wo + static_cast<std::size_t>(c) * d, &dout[i * d], d);
          if (want_params) K.axpy(dz[c], &L.o[i * d], &G[W.wo + static_cast<std::size_t>(c) * d], d);
        }
      }
      dq.assign(static_cast<std::size_t>(n) * d, Real(0));
      dk.assign(static_cast<std::size_t>(n) * d, Real(0));
      dv.assign(static_cast<std::size_t>(n) * d, Real(0));
      for (int h = 0; h < H; ++h) {
        Matrix* gm = attn_grads != nullptr ? &attn_grads->gradient[l * H + h] : nullptr;
        for (int i = 0; i < m; ++i) {
          const Real* post = &L.attn[h * tri(s.capacity) + tri(i)];
          const Real* pre = &L.attn_pre[h * tri(s.capacity) + tri(i)];
          const Real* doh = &dout[i * d + h * dh];
          grad_row.assign(i + 1, 0.0);
          for (int j = 0; j <= i; ++j) {
            grad_row[j] = static_cast<double>(K.dot(doh, &L.v[j * d + h * dh], dh));
            K.axpy(post[j], doh, &dv[j * d + h * dh], dh);
          }
          if (gm != nullptr)
            for (int j = 0; j <= i; ++j) (*gm)(i, j) = grad_row[j];
          if (L.touched[h * s.capacity + i] && hook != nullptr) {
            pre_row.assign(pre, pre + i + 1);
            hook->backprop(RowSite{l, h, i, s.hook_seq_len[i]}, pre_row, grad_row);
          }
          double dot_pg = 0.0;
          for (int j = 0; j <= i; ++j) dot_pg += static_cast<double>(pre[j]) * grad_row[j];
          for (int j = 0; j <= i; ++j) {
            const Real ds = static_cast<Real>(static_cast<double>(pre[j]) * (grad_row[j] - dot_pg)) * scale;
            if (ds == Real(0)) continue;
            K.axpy(ds, &L.k[j * d + h * dh], &dq[i * d + h * dh], dh);
            K.axpy(ds, &L.q[i * d + h * dh], &dk[j * d + h * dh], dh);
          }
        }
      }
      dx = dxmid;
      for (int i = 0; i < m; ++i) {
        std::fill(da.begin(), da.end(), Real(0));
        const Real* a = &L.a[i * d];
        for (int c = 0; c < d; ++c) {
          const Real gq = dq[i * d + c], gk = dk[i * d + c], gv = dv[i * d + c];
          if (gq != Real(0)) {
            K.axpy(gq, P + W.wq + static_cast<std::size_t>(c) * d, da.data(), d);
            if (want_params) K.axpy(gq, a, &G[W.wq + static_cast<std::size_t>(c) * d], d);
          }
          if (gk != Real(0)) {
            K.axpy(gk, P + W.wk + static_cast<std::size_t>(c) * d, da.data(), d);
            if (want_params) K.axpy(gk, a, &G[W.wk + static_cast<std::size_t>(c) * d], d);
          }
          if (gv != Real(0)) {
            K.axpy(gv, P + W.wv + static_cast<std::size_t>(c) * d, da.data(), d);
            if (want_params) K.axpy(gv, a, &G[W.wv + static_cast<std::size_t>(c) * d], d);
          }
        }
        layer_norm_backward(da.data(), P + W.ln1g, &L.xhat1[i * d], L.rstd1[i], &dx[i * d],
                            want_params ? &G[W.ln1g] : nullptr, want_params ? &G[W.ln1b] : nullptr);
      }
    }

    if (want_params) {
      for (int i = 0; i < m; ++i) {
        K.axpy(Real(1), &dx[i * d], &G[tok_ + static_cast<std::size_t>(s.tokens[i]) * d], d);
        K.axpy(Real(1), &dx[i * d], &G[pos_ + static_cast<std::size_t>(i) * d], d);
      }
      param_grads->assign(G.begin(), G.end());
    }
    return loss;
  }

 private:
  // Writes xhat and gain*xhat+bias; returns 1/sqrt(var+eps).
  Real layer_norm(const Real* x, const Real* gain, const Real* bias, Real* xhat, Real* out) const {
    const int d = cfg_.d_model;
    Real mean = 0;
    for (int c = 0; c < d; ++c) mean += x[c];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (int c = 0; c < d; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= static_cast<Real>(d);
    const Real rstd = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
    for (int c = 0; c < d; ++c) {
      xhat[c] = (x[c] - mean) * rstd;
      out[c] = xhat[c] * gain[c] + bias[c];
    }
    return rstd;
  }

  // Accumulates d(input) into dx; dgain/dbias optional.
  void layer_norm_backward(const Real* dy, const Real* gain, const Real* xhat, Real rstd, Real* dx, Real* dgain,
                           Real* dbias) const {
    const int d = cfg_.d_model;
    Real m1 = 0, m2 = 0;
    for (int c = 0; c < d; ++c) {
      const Real dxh = dy[c] * gain[c];
      m1 += dxh;
      m2 += dxh * xhat[c];
      if (dgain != nullptr) {
        dgain[c] += dy[c] * xhat[c];
        dbias[c] += dy[c];
      }
    }
    m1 /= static_cast<Real>(d);
    m2 /= static_cast<Real>(d);
    for (int c = 0; c < d; ++c) dx[c] += rstd * (dy[c] * gain[c] - m1 - xhat[c] * m2);
  }

  ModelConfig cfg_;
  std::vector<Real> params_;
  std::vector<std::size_t> offsets_;
  std::vector<LayerOffsets> layers_;
  std::size_t tok_ = 0, pos_ = 0, lnfg_ = 0, lnfb_ = 0, head_ = 0;
};

}  // namespace

std::unique_ptr<Engine> make_engine(const Checkpoint& ckpt) {
  if (ckpt.config.precision == Precision::f32) return std::make_unique<EngineImpl<float>>(ckpt);
  return std::make_unique<EngineImpl<double>>(ckpt);
}

}  // namespace salient::detail
