#pragma once

// Temporal aggregation: turning a variable-length face track into one
// feature vector.
//
// avg_pool    mean of the per-frame features.
// max_pool    coordinate-wise max over frames (kept for completeness; the
//             default report grid does not include it).
// atp_pool    attentive pooling: K learned attention modes (columns of A).
//             Mode k scores every frame by phi_t . a_k, a softmax across
//             the *frames* turns the scores into per-mode weights, and the
//             pooled feature is the average over modes of the weighted
//             frame sums.  Equivalently: per-frame weight = row-mean of the
//             T x K weight matrix.  A = 0 gives uniform weights, i.e.
//             avg_pool.  The output always lies in the convex hull of the
//             frames.
// self_attention_encode
//             a transformer-style encoder: per-frame scaled dot-product
//             self-attention (h heads, softmax over (q.k)/sqrt(d_k/h)), a
//             residual connection, a position-wise feed-forward block with
//             its own residual, then coordinate-wise max over frames.
//             No positional encoding anywhere: frame order is deliberately
//             discarded, so every aggregator here is permutation-invariant.
//
// Checkpoint containers (binary, little-endian):
//   "WATP" | version u16 (=1) | d_x u32 | K u32 | A float32 column-major
//   "WSAT" | version u16 (=1) | d_x u32 | d_k u32 | d_ff u32 | heads u32
//          | layers u32 | per layer: Wq, Wk, Wv, W1, b1, W2, b2
//            (matrices float32 column-major)

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ft/data.hpp"
#include "ft/numerics.hpp"

namespace ft {

Vec avg_pool(const FaceTrack& track);
Vec max_pool(const FaceTrack& track);

// K attention modes over d_x-dimensional frames.
struct AtpParams {
  Matrix a;  // d_x rows, K columns

  std::size_t dim() const { return a.rows; }
  std::size_t modes() const { return a.cols; }

  static AtpParams zeros(std::size_t dim, std::size_t modes);
  static AtpParams xavier(std::size_t dim, std::size_t modes, Rng& rng);
};

// T x K matrix; column k is a softmax over the frames, so every column is
// non-negative and sums to 1.
Matrix attention_weights(const FaceTrack& track, const AtpParams& params);

// Per-frame weights: row means of attention_weights (non-negative, sum 1).
Vec atp_frame_weights(const FaceTrack& track, const AtpParams& params);

Vec atp_pool(const FaceTrack& track, const AtpParams& params);

// Gradient of upstream . atp_pool(track) with respect to A.  Frames are
// data, not parameters, so no frame gradient exists.
Matrix atp_backward(const FaceTrack& track, const AtpParams& params,
                    const Vec& upstream);

std::string encode_atp(const AtpParams& params);
AtpParams decode_atp(const std::string& bytes);
void save_atp(const AtpParams& params, const std::filesystem::path& path);
AtpParams load_atp(const std::filesystem::path& path);

// One encoder layer of the self-attention aggregator.
struct SelfAttentionBlock {
  Matrix wq;  // d_k x d_x
  Matrix wk;  // d_k x d_x
  Matrix wv;  // d_x x d_x
  Matrix w1;  // d_ff x d_x
  Vec b1;     // d_ff
  Matrix w2;  // d_x x d_ff
  Vec b2;     // d_x
};

struct SelfAttentionParams {
  std::size_t dim = 0;      // d_x
  std::size_t key_dim = 64; // d_k, split across heads
  std::size_t ff_dim = 256; // hidden width of the feed-forward block
  std::size_t heads = 1;    // must divide both key_dim and dim
  std::vector<SelfAttentionBlock> blocks;  // encoder depth >= 1

  std::size_t param_count() const;
  std::vector<std::span<double>> param_blocks();
  std::vector<std::span<const double>> param_blocks() const;
  void validate() const;

  // All tensors Xavier-initialized (gradient-check / training start).
  static SelfAttentionParams xavier(std::size_t dim, std::size_t key_dim,
                                    std::size_t ff_dim, std::size_t heads,
                                    std::size_t layers, Rng& rng);
  // Identity-like start: value and feed-forward output maps are zero, so
  // the encoder passes frames through untouched and the aggregate equals
  // max_pool.  Query/key/W1 get Xavier draws so gradients can flow once
  // the value map moves.
  static SelfAttentionParams passthrough(std::size_t dim,
                                         std::size_t key_dim,
                                         std::size_t ff_dim,
                                         std::size_t heads,
                                         std::size_t layers, Rng& rng);
};

Vec self_attention_encode(const FaceTrack& track,
                          const SelfAttentionParams& params);

// Gradients of upstream . encode(track) for every parameter tensor,
// shaped like the parameters.
SelfAttentionParams self_attention_backward(const FaceTrack& track,
                                            const SelfAttentionParams& params,
                                            const Vec& upstream);

std::string encode_selfattention(const SelfAttentionParams& params);
SelfAttentionParams decode_selfattention(const std::string& bytes);
void save_selfattention(const SelfAttentionParams& params,
                        const std::filesystem::path& path);
SelfAttentionParams load_selfattention(const std::filesystem::path& path);

}  // namespace ft
