#include "ft/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ft/detail/bytes.hpp"

namespace ft {

namespace {

void require_track(const FaceTrack& track, std::size_t dim,
                   const char* where) {
  if (track.frames.empty())
    throw std::invalid_argument(std::string(where) + ": track '" + track.id +
                                "' has no frames");
  for (const Vec& f : track.frames)
    if (f.size() != dim)
      throw std::invalid_argument(std::string(where) + ": track '" +
                                  track.id + "' frame width " +
                                  std::to_string(f.size()) + " != " +
                                  std::to_string(dim));
}

}  // namespace

Vec avg_pool(const FaceTrack& track) {
  if (track.frames.empty())
    throw std::invalid_argument("avg_pool: track '" + track.id +
                                "' has no frames");
  const std::size_t d = track.frames.front().size();
  require_track(track, d, "avg_pool");
  Vec out(d, 0.0);
  for (const Vec& f : track.frames)
    for (std::size_t i = 0; i < d; ++i) out[i] += f[i];
  const double inv = 1.0 / static_cast<double>(track.frames.size());
  for (double& v : out) v *= inv;
  return out;
}

Vec max_pool(const FaceTrack& track) {
  if (track.frames.empty())
    throw std::invalid_argument("max_pool: track '" + track.id +
                                "' has no frames");
  const std::size_t d = track.frames.front().size();
  require_track(track, d, "max_pool");
  Vec out = track.frames.front();
  for (const Vec& f : track.frames)
    for (std::size_t i = 0; i < d; ++i) out[i] = std::max(out[i], f[i]);
  return out;
}

AtpParams AtpParams::zeros(std::size_t dim, std::size_t modes) {
  if (dim == 0 || modes == 0)
    throw std::invalid_argument("AtpParams: zero dimension");
  AtpParams p;
  p.a = Matrix(dim, modes, 0.0);
  return p;
}

AtpParams AtpParams::xavier(std::size_t dim, std::size_t modes, Rng& rng) {
  AtpParams p;
  p.a = xavier_init(dim, modes, rng);
  return p;
}

Matrix attention_weights(const FaceTrack& track, const AtpParams& params) {
  require_track(track, params.dim(), "attention_weights");
  const std::size_t T = track.frames.size();
  const std::size_t K = params.modes();
  Matrix w(T, K, 0.0);
  Vec scores(T);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < params.dim(); ++i)
        s += track.frames[t][i] * params.a.at(i, k);
      scores[t] = s;
    }
    const Vec col = softmax(scores);  // softmax across frames
    for (std::size_t t = 0; t < T; ++t) w.at(t, k) = col[t];
  }
  return w;
}

Vec atp_frame_weights(const FaceTrack& track, const AtpParams& params) {
  const Matrix w = attention_weights(track, params);
  Vec out(w.rows, 0.0);
  for (std::size_t t = 0; t < w.rows; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < w.cols; ++k) s += w.at(t, k);
    out[t] = s / static_cast<double>(w.cols);
  }
  return out;
}

Vec atp_pool(const FaceTrack& track, const AtpParams& params) {
  const Vec weights = atp_frame_weights(track, params);
  const std::size_t d = params.dim();
  Vec out(d, 0.0);
  for (std::size_t t = 0; t < track.frames.size(); ++t)
    for (std::size_t i = 0; i < d; ++i)
      out[i] += weights[t] * track.frames[t][i];
  return out;
}

Matrix atp_backward(const FaceTrack& track, const AtpParams& params,
                    const Vec& upstream) {
  require_track(track, params.dim(), "atp_backward");
  if (upstream.size() != params.dim())
    throw std::invalid_argument("atp_backward: upstream length mismatch");
  const std::size_t T = track.frames.size();
  const std::size_t K = params.modes();
  const Matrix w = attention_weights(track, params);

  // c_t = upstream . phi_t; the pooled output is sum_t (mean_k w_tk) phi_t,
  // so dL/dw_tk = c_t / K, and each column goes back through its softmax.
  Vec c(T, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < params.dim(); ++i)
      c[t] += upstream[i] * track.frames[t][i];

  Matrix grad(params.dim(), K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double dot = 0.0;  // sum_t w_tk c_t
    for (std::size_t t = 0; t < T; ++t) dot += w.at(t, k) * c[t];
    for (std::size_t t = 0; t < T; ++t) {
      const double ds = w.at(t, k) * (c[t] - dot) / static_cast<double>(K);
      for (std::size_t i = 0; i < params.dim(); ++i)
        grad.at(i, k) += ds * track.frames[t][i];
    }
  }
  return grad;
}

namespace {

constexpr char kAtpMagic[4] = {'W', 'A', 'T', 'P'};
constexpr char kSatMagic[4] = {'W', 'S', 'A', 'T'};
constexpr std::uint16_t kVersion = 1;

void put_matrix_colmajor(std::string& out, const Matrix& m) {
  for (std::size_t c = 0; c < m.cols; ++c)
    for (std::size_t r = 0; r < m.rows; ++r)
      detail::put_f32(out, static_cast<float>(m.at(r, c)));
}

void get_matrix_colmajor(detail::ByteReader& r, Matrix& m) {
  for (std::size_t c = 0; c < m.cols; ++c)
    for (std::size_t row = 0; row < m.rows; ++row)
      m.at(row, c) = static_cast<double>(r.f32());
}

}  // namespace

std::string encode_atp(const AtpParams& params) {
  std::string out;
  out.append(kAtpMagic, 4);
  detail::put_u16(out, kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(params.modes()));
  put_matrix_colmajor(out, params.a);
  return out;
}

AtpParams decode_atp(const std::string& bytes) {
  detail::ByteReader r(bytes);
  try {
    if (r.str(4) != std::string(kAtpMagic, 4))
      throw std::runtime_error("bad magic, expected 'WATP'");
    if (r.u16() != kVersion)
      throw std::runtime_error("unsupported WATP version");
    const std::uint32_t dim = r.u32();
    const std::uint32_t modes = r.u32();
    if (dim == 0 || modes == 0)
      throw std::runtime_error("WATP has a zero shape field");
    AtpParams p = AtpParams::zeros(dim, modes);
    get_matrix_colmajor(r, p.a);
    if (!r.exhausted())
      throw std::runtime_error("trailing bytes after WATP payload");
    return p;
  } catch (const std::out_of_range&) {
    throw std::runtime_error("WATP checkpoint truncated");
  }
}

void save_atp(const AtpParams& params, const std::filesystem::path& path) {
  detail::atomic_write_file(path, encode_atp(params));
}

AtpParams load_atp(const std::filesystem::path& path) {
  return decode_atp(detail::read_file_bytes(path));
}

std::size_t SelfAttentionParams::param_count() const {
  std::size_t n = 0;
  for (auto block : param_blocks()) n += block.size();
  return n;
}

std::vector<std::span<double>> SelfAttentionParams::param_blocks() {
  std::vector<std::span<double>> out;
  for (SelfAttentionBlock& b : blocks) {
    out.emplace_back(b.wq.data);
    out.emplace_back(b.wk.data);
    out.emplace_back(b.wv.data);
    out.emplace_back(b.w1.data);
    out.emplace_back(b.b1);
    out.emplace_back(b.w2.data);
    out.emplace_back(b.b2);
  }
  return out;
}

std::vector<std::span<const double>> SelfAttentionParams::param_blocks()
    const {
  std::vector<std::span<const double>> out;
  for (auto s : const_cast<SelfAttentionParams*>(this)->param_blocks())
    out.emplace_back(s.data(), s.size());
  return out;
}

void SelfAttentionParams::validate() const {
  if (dim == 0 || key_dim == 0 || ff_dim == 0 || heads == 0 ||
      blocks.empty())
    throw std::invalid_argument("self-attention: zero-sized configuration");
  if (key_dim % heads != 0)
    throw std::invalid_argument("self-attention: key_dim " +
                                std::to_string(key_dim) +
                                " not divisible by heads " +
                                std::to_string(heads));
  if (dim % heads != 0)
    throw std::invalid_argument("self-attention: dim " + std::to_string(dim) +
                                " not divisible by heads " +
                                std::to_string(heads));
  for (const SelfAttentionBlock& b : blocks) {
    if (b.wq.rows != key_dim || b.wq.cols != dim || !b.wq.same_shape(b.wk) ||
        b.wv.rows != dim || b.wv.cols != dim || b.w1.rows != ff_dim ||
        b.w1.cols != dim || b.b1.size() != ff_dim || b.w2.rows != dim ||
        b.w2.cols != ff_dim || b.b2.size() != dim)
      throw std::invalid_argument("self-attention: tensor shape mismatch");
  }
}

SelfAttentionParams SelfAttentionParams::xavier(std::size_t dim,
                                                std::size_t key_dim,
                                                std::size_t ff_dim,
                                                std::size_t heads,
                                                std::size_t layers,
                                                Rng& rng) {
  SelfAttentionParams p;
  p.dim = dim;
  p.key_dim = key_dim;
  p.ff_dim = ff_dim;
  p.heads = heads;
  for (std::size_t l = 0; l < layers; ++l) {
    SelfAttentionBlock b;
    b.wq = xavier_init(key_dim, dim, rng);
    b.wk = xavier_init(key_dim, dim, rng);
    b.wv = xavier_init(dim, dim, rng);
    b.w1 = xavier_init(ff_dim, dim, rng);
    b.b1.assign(ff_dim, 0.0);
    b.w2 = xavier_init(dim, ff_dim, rng);
    b.b2.assign(dim, 0.0);
    p.blocks.push_back(std::move(b));
  }
  p.validate();
  return p;
}

SelfAttentionParams SelfAttentionParams::passthrough(std::size_t dim,
                                                     std::size_t key_dim,
                                                     std::size_t ff_dim,
                                                     std::size_t heads,
                                                     std::size_t layers,
                                                     Rng& rng) {
  SelfAttentionParams p = xavier(dim, key_dim, ff_dim, heads, layers, rng);
  for (SelfAttentionBlock& b : p.blocks) {
    std::fill(b.wv.data.begin(), b.wv.data.end(), 0.0);
    std::fill(b.w2.data.begin(), b.w2.data.end(), 0.0);
    std::fill(b.b2.begin(), b.b2.end(), 0.0);
  }
  return p;
}

namespace {

// Everything the backward pass needs from one block's forward run.
struct BlockCache {
  std::vector<Vec> x;     // inputs
  std::vector<Vec> q, k, v;
  std::vector<Matrix> w;  // per head: T x T attention weights
  std::vector<Vec> u;     // x + attention output
  std::vector<Vec> p;     // W1 u + b1 (pre-activation)
  std::vector<Vec> z;     // block output
};

BlockCache block_forward(const std::vector<Vec>& frames,
                         const SelfAttentionBlock& blk,
                         const SelfAttentionParams& cfg) {
  const std::size_t T = frames.size();
  const std::size_t dkh = cfg.key_dim / cfg.heads;
  const std::size_t dvh = cfg.dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dkh));

  BlockCache c;
  c.x = frames;
  c.q.reserve(T);
  c.k.reserve(T);
  c.v.reserve(T);
  for (const Vec& x : frames) {
    c.q.push_back(matvec(blk.wq, x));
    c.k.push_back(matvec(blk.wk, x));
    c.v.push_back(matvec(blk.wv, x));
  }
  c.w.assign(cfg.heads, Matrix(T, T, 0.0));
  for (std::size_t a = 0; a < cfg.heads; ++a) {
    Vec scores(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < dkh; ++i)
          s += c.q[t][a * dkh + i] * c.k[j][a * dkh + i];
        scores[j] = s * scale;
      }
      const Vec row = softmax(scores);
      for (std::size_t j = 0; j < T; ++j) c.w[a].at(t, j) = row[j];
    }
  }
  c.u.assign(T, Vec(cfg.dim, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t a = 0; a < cfg.heads; ++a)
      for (std::size_t j = 0; j < T; ++j) {
        const double wtj = c.w[a].at(t, j);
        for (std::size_t i = 0; i < dvh; ++i)
          c.u[t][a * dvh + i] += wtj * c.v[j][a * dvh + i];
      }
    for (std::size_t i = 0; i < cfg.dim; ++i) c.u[t][i] += c.x[t][i];
  }
  c.p.reserve(T);
  c.z.assign(T, Vec(cfg.dim, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    Vec pt = matvec(blk.w1, c.u[t]);
    for (std::size_t i = 0; i < cfg.ff_dim; ++i) pt[i] += blk.b1[i];
    Vec rt(cfg.ff_dim);
    for (std::size_t i = 0; i < cfg.ff_dim; ++i)
      rt[i] = pt[i] > 0.0 ? pt[i] : 0.0;
    Vec ft = matvec(blk.w2, rt);
    for (std::size_t i = 0; i < cfg.dim; ++i)
      c.z[t][i] = c.u[t][i] + ft[i] + blk.b2[i];
    c.p.push_back(std::move(pt));
  }
  return c;
}

// dz: gradient at the block output; returns gradient at the block input
// and accumulates parameter gradients into gblk.
std::vector<Vec> block_backward(const BlockCache& c,
                                const SelfAttentionBlock& blk,
                                const SelfAttentionParams& cfg,
                                std::vector<Vec> dz,
                                SelfAttentionBlock& gblk) {
  const std::size_t T = c.x.size();
  const std::size_t dkh = cfg.key_dim / cfg.heads;
  const std::size_t dvh = cfg.dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dkh));

  std::vector<Vec> du(T, Vec(cfg.dim, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    // z = u + W2 relu(p) + b2
    Vec rt(cfg.ff_dim);
    for (std::size_t i = 0; i < cfg.ff_dim; ++i)
      rt[i] = c.p[t][i] > 0.0 ? c.p[t][i] : 0.0;
    for (std::size_t i = 0; i < cfg.dim; ++i) gblk.b2[i] += dz[t][i];
    for (std::size_t r = 0; r < cfg.dim; ++r)
      for (std::size_t col = 0; col < cfg.ff_dim; ++col)
        gblk.w2.at(r, col) += dz[t][r] * rt[col];
    Vec dr = matvec_transposed(blk.w2, dz[t]);
    Vec dp(cfg.ff_dim);
    for (std::size_t i = 0; i < cfg.ff_dim; ++i)
      dp[i] = c.p[t][i] > 0.0 ? dr[i] : 0.0;
    for (std::size_t i = 0; i < cfg.ff_dim; ++i) gblk.b1[i] += dp[i];
    for (std::size_t r = 0; r < cfg.ff_dim; ++r)
      for (std::size_t col = 0; col < cfg.dim; ++col)
        gblk.w1.at(r, col) += dp[r] * c.u[t][col];
    const Vec via_ffn = matvec_transposed(blk.w1, dp);
    for (std::size_t i = 0; i < cfg.dim; ++i)
      du[t][i] = dz[t][i] + via_ffn[i];
  }

  // u = x + concat_heads(sum_j w_tj v_j)
  std::vector<Vec> dx(T, Vec(cfg.dim, 0.0));
  std::vector<Vec> dq(T, Vec(cfg.key_dim, 0.0));
  std::vector<Vec> dk(T, Vec(cfg.key_dim, 0.0));
  std::vector<Vec> dv(T, Vec(cfg.dim, 0.0));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < cfg.dim; ++i) dx[t][i] += du[t][i];

  for (std::size_t a = 0; a < cfg.heads; ++a) {
    for (std::size_t t = 0; t < T; ++t) {
      Vec dw(T, 0.0);
      for (std::size_t j = 0; j < T; ++j) {
        const double wtj = c.w[a].at(t, j);
        double dot = 0.0;
        for (std::size_t i = 0; i < dvh; ++i) {
          dv[j][a * dvh + i] += wtj * du[t][a * dvh + i];
          dot += du[t][a * dvh + i] * c.v[j][a * dvh + i];
        }
        dw[j] = dot;
      }
      // softmax backward over the row
      double wd = 0.0;
      for (std::size_t j = 0; j < T; ++j) wd += c.w[a].at(t, j) * dw[j];
      for (std::size_t j = 0; j < T; ++j) {
        const double ds = c.w[a].at(t, j) * (dw[j] - wd) * scale;
        for (std::size_t i = 0; i < dkh; ++i) {
          dq[t][a * dkh + i] += ds * c.k[j][a * dkh + i];
          dk[j][a * dkh + i] += ds * c.q[t][a * dkh + i];
        }
      }
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < cfg.key_dim; ++r)
      for (std::size_t col = 0; col < cfg.dim; ++col) {
        gblk.wq.at(r, col) += dq[t][r] * c.x[t][col];
        gblk.wk.at(r, col) += dk[t][r] * c.x[t][col];
      }
    for (std::size_t r = 0; r < cfg.dim; ++r)
      for (std::size_t col = 0; col < cfg.dim; ++col)
        gblk.wv.at(r, col) += dv[t][r] * c.x[t][col];
    const Vec xq = matvec_transposed(blk.wq, dq[t]);
    const Vec xk = matvec_transposed(blk.wk, dk[t]);
    const Vec xv = matvec_transposed(blk.wv, dv[t]);
    for (std::size_t i = 0; i < cfg.dim; ++i)
      dx[t][i] += xq[i] + xk[i] + xv[i];
  }
  return dx;
}

SelfAttentionBlock zero_block_like(const SelfAttentionBlock& b) {
  SelfAttentionBlock g;
  g.wq = Matrix(b.wq.rows, b.wq.cols, 0.0);
  g.wk = Matrix(b.wk.rows, b.wk.cols, 0.0);
  g.wv = Matrix(b.wv.rows, b.wv.cols, 0.0);
  g.w1 = Matrix(b.w1.rows, b.w1.cols, 0.0);
  g.b1.assign(b.b1.size(), 0.0);
  g.w2 = Matrix(b.w2.rows, b.w2.cols, 0.0);
  g.b2.assign(b.b2.size(), 0.0);
  return g;
}

}  // namespace

Vec self_attention_encode(const FaceTrack& track,
                          const SelfAttentionParams& params) {
  params.validate();
  require_track(track, params.dim, "self_attention_encode");
  std::vector<Vec> frames = track.frames;
  for (const SelfAttentionBlock& blk : params.blocks)
    frames = block_forward(frames, blk, params).z;
  // coordinate-wise max over the encoded frames
  Vec out = frames.front();
  for (const Vec& z : frames)
    for (std::size_t i = 0; i < params.dim; ++i)
      out[i] = std::max(out[i], z[i]);
  return out;
}

SelfAttentionParams self_attention_backward(const FaceTrack& track,
                                            const SelfAttentionParams& params,
                                            const Vec& upstream) {
  params.validate();
  require_track(track, params.dim, "self_attention_backward");
  if (upstream.size() != params.dim)
    throw std::invalid_argument(
        "self_attention_backward: upstream length mismatch");

  std::vector<BlockCache> caches;
  std::vector<Vec> frames = track.frames;
  for (const SelfAttentionBlock& blk : params.blocks) {
    caches.push_back(block_forward(frames, blk, params));
    frames = caches.back().z;
  }

  SelfAttentionParams grads = params;
  for (std::size_t l = 0; l < params.blocks.size(); ++l)
    grads.blocks[l] = zero_block_like(params.blocks[l]);

  // route the upstream gradient to the max-winning frame per coordinate;
  // ties go to the earliest frame
  const std::size_t T = frames.size();
  std::vector<Vec> dz(T, Vec(params.dim, 0.0));
  for (std::size_t i = 0; i < params.dim; ++i) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < T; ++t)
      if (frames[t][i] > frames[best][i]) best = t;
    dz[best][i] = upstream[i];
  }

  for (std::size_t l = params.blocks.size(); l-- > 0;)
    dz = block_backward(caches[l], params.blocks[l], params, std::move(dz),
                        grads.blocks[l]);
  return grads;
}

std::string encode_selfattention(const SelfAttentionParams& params) {
  params.validate();
  std::string out;
  out.append(kSatMagic, 4);
  detail::put_u16(out, kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.dim));
  detail::put_u32(out, static_cast<std::uint32_t>(params.key_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(params.ff_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(params.heads));
  detail::put_u32(out, static_cast<std::uint32_t>(params.blocks.size()));
  for (const SelfAttentionBlock& b : params.blocks) {
    put_matrix_colmajor(out, b.wq);
    put_matrix_colmajor(out, b.wk);
    put_matrix_colmajor(out, b.wv);
    put_matrix_colmajor(out, b.w1);
    for (double v : b.b1) detail::put_f32(out, static_cast<float>(v));
    put_matrix_colmajor(out, b.w2);
    for (double v : b.b2) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

SelfAttentionParams decode_selfattention(const std::string& bytes) {
  detail::ByteReader r(bytes);
  try {
    if (r.str(4) != std::string(kSatMagic, 4))
      throw std::runtime_error("bad magic, expected 'WSAT'");
    if (r.u16() != kVersion)
      throw std::runtime_error("unsupported WSAT version");
    SelfAttentionParams p;
    p.dim = r.u32();
    p.key_dim = r.u32();
    p.ff_dim = r.u32();
    p.heads = r.u32();
    const std::uint32_t layers = r.u32();
    if (layers == 0) throw std::runtime_error("WSAT has zero layers");
    for (std::uint32_t l = 0; l < layers; ++l) {
      SelfAttentionBlock b;
      b.wq = Matrix(p.key_dim, p.dim);
      b.wk = Matrix(p.key_dim, p.dim);
      b.wv = Matrix(p.dim, p.dim);
      b.w1 = Matrix(p.ff_dim, p.dim);
      b.b1.assign(p.ff_dim, 0.0);
      b.w2 = Matrix(p.dim, p.ff_dim);
      b.b2.assign(p.dim, 0.0);
      get_matrix_colmajor(r, b.wq);
      get_matrix_colmajor(r, b.wk);
      get_matrix_colmajor(r, b.wv);
      get_matrix_colmajor(r, b.w1);
      for (double& v : b.b1) v = static_cast<double>(r.f32());
      get_matrix_colmajor(r, b.w2);
      for (double& v : b.b2) v = static_cast<double>(r.f32());
      p.blocks.push_back(std::move(b));
    }
    if (!r.exhausted())
      throw std::runtime_error("trailing bytes after WSAT payload");
    p.validate();
    return p;
  } catch (const std::out_of_range&) {
    throw std::runtime_error("WSAT checkpoint truncated");
  }
}

void save_selfattention(const SelfAttentionParams& params,
                        const std::filesystem::path& path) {
  detail::atomic_write_file(path, encode_selfattention(params));
}

SelfAttentionParams load_selfattention(const std::filesystem::path& path) {
  return decode_selfattention(detail::read_file_bytes(path));
}

}  // namespace ft
